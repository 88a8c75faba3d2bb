//! Binary portable pixmap/graymap (P6/P5) reading and writing.
//!
//! Samples wider than 8 bits (maxval > 255) are stored big-endian, as the
//! format requires.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{DepthMap, Grid, LabelMap, ValidMask};

/// A decoded P5/P6 image: `channels` interleaved samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Netpbm {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Input(format!("netpbm supports 1 or 3 channels, got {c}"))),
        };
        if self.maxval == 0 || self.samples.len() != self.width * self.height * self.channels {
            return Err(Error::Input("netpbm sample count or maxval invalid".into()));
        }
        if let Some(v) = self.samples.iter().find(|&&v| v > self.maxval) {
            return Err(Error::Input(format!("sample {v} exceeds maxval {}", self.maxval)));
        }
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            self.samples.iter().for_each(|v| out.extend_from_slice(&v.to_be_bytes()));
        } else {
            out.extend(self.samples.iter().map(|&v| v as u8));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let magic = bytes.get(0..2).ok_or_else(|| Error::format(0, "truncated header"))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::format(0, "bad magic, expected P5 or P6")),
        };
        pos += 2;
        let mut fields = [0usize; 3];
        for f in fields.iter_mut() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(Error::format(pos as u64, "truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(start as u64, "expected a decimal header field"))?;
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::format(pos as u64, "expected whitespace after maxval"));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::format(pos as u64, format!("maxval {maxval} outside 1..=65535")));
        }
        let wide = maxval > 255;
        let n = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::format(pos as u64, "image size overflows"))?;
        let need = if wide { n * 2 } else { n };
        if bytes.len() - pos != need {
            return Err(Error::format(
                pos as u64,
                format!("raster needs {need} bytes, found {}", bytes.len() - pos),
            ));
        }
        let raster = &bytes[pos..];
        let samples: Vec<u16> = if wide {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            raster.iter().map(|&b| u16::from(b)).collect()
        };
        if let Some(i) = samples.iter().position(|&v| v as usize > maxval) {
            let off = pos + if wide { 2 * i } else { i };
            return Err(Error::format(off as u64, format!("sample exceeds maxval {maxval}")));
        }
        Ok(Netpbm {
            width,
            height,
            channels,
            maxval: maxval as u16,
            samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    fn expect(&self, channels: usize, maxval: u16, what: &str) -> Result<()> {
        if self.channels != channels || self.maxval != maxval {
            return Err(Error::Validation(format!(
                "{what} expects {channels} channel(s) with maxval {maxval}, found {} with {}",
                self.channels, self.maxval
            )));
        }
        Ok(())
    }
}

/// RGB in `[0, 1]`, quantized to 8 bits.
pub fn write_rgb(path: impl AsRef<Path>, rgb: &Grid<[f64; 3]>) -> Result<()> {
    let samples = rgb
        .as_slice()
        .iter()
        .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u16))
        .collect();
    Netpbm { width: rgb.width(), height: rgb.height(), channels: 3, maxval: 255, samples }.write(path)
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<Grid<[f64; 3]>> {
    let img = Netpbm::read(path)?;
    img.expect(3, 255, "rgb image")?;
    let px = img
        .samples
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|v| f64::from(v) / 255.0))
        .collect();
    Grid::from_vec(img.width, img.height, px)
}

/// Depth in millimeters, 16-bit; 0 marks an invalid pixel.
pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let samples = depth
        .depth
        .as_slice()
        .iter()
        .zip(depth.mask.as_slice())
        .map(|(&d, &m)| if m { depth_to_mm(d) } else { 0 })
        .collect();
    Netpbm { width: depth.width(), height: depth.height(), channels: 1, maxval: 65535, samples }.write(path)
}

/// Millimeter quantization, clamped to `1..=65535` so valid stays valid.
pub fn depth_to_mm(d: f64) -> u16 {
    (d * 1000.0).round().clamp(1.0, 65535.0) as u16
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let img = Netpbm::read(path)?;
    img.expect(1, 65535, "depth map")?;
    let depth = img.samples.iter().map(|&v| if v > 0 { f64::from(v) / 1000.0 } else { 1.0 }).collect();
    let mask = img.samples.iter().map(|&v| v > 0).collect();
    DepthMap::new(Grid::from_vec(img.width, img.height, depth)?, Grid::from_vec(img.width, img.height, mask)?)
}

pub fn write_gray8(path: impl AsRef<Path>, values: &Grid<u8>) -> Result<()> {
    let samples = values.as_slice().iter().map(|&v| u16::from(v)).collect();
    Netpbm { width: values.width(), height: values.height(), channels: 1, maxval: 255, samples }.write(path)
}

pub fn read_gray8(path: impl AsRef<Path>) -> Result<Grid<u8>> {
    let img = Netpbm::read(path)?;
    img.expect(1, 255, "8-bit graymap")?;
    Grid::from_vec(img.width, img.height, img.samples.iter().map(|&v| v as u8).collect())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ValidMask) -> Result<()> {
    write_gray8(path, &mask.map(|&m| if m { 255 } else { 0 }))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ValidMask> {
    Ok(read_gray8(path)?.map(|&v| v > 0))
}

/// Labels with a range check against `classes` at every pixel.
pub fn read_labels(path: impl AsRef<Path>, classes: usize, mask: ValidMask) -> Result<LabelMap> {
    let labels = read_gray8(path)?;
    if let Some(&bad) = labels.as_slice().iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
    }
    if !labels.same_size(&mask) {
        return Err(Error::Validation("label map and mask sizes differ".into()));
    }
    Ok(LabelMap { labels, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_8_and_16_bit() {
        for (channels, maxval) in [(3, 255), (1, 255), (1, 65535)] {
            let samples: Vec<u16> = (0..4 * 3 * channels).map(|i| ((i as u32 * 4099) % (u32::from(maxval) + 1)) as u16).collect();
            let img = Netpbm { width: 4, height: 3, channels, maxval, samples };
            assert_eq!(Netpbm::decode(&img.encode().unwrap()).unwrap(), img);
        }
    }

    #[test]
    fn header_comments_accepted() {
        let bytes = b"P5\n# comment\n2 1\n255\n\x07\x08";
        let img = Netpbm::decode(bytes).unwrap();
        assert_eq!(img.samples, vec![7, 8]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = Netpbm { width: 1, height: 1, channels: 1, maxval: 65535, samples: vec![2000] };
        let bytes = img.encode().unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0x07, 0xD0]);
    }

    #[test]
    fn malformed_headers_rejected() {
        for bad in [&b"P3\n1 1\n255\n\x00"[..], b"P5\n1\n", b"P5\n1 1\n255\n", b"P5\nx 1\n255\n\x00", b"P5\n1 1\n0\n\x00"] {
            assert!(matches!(Netpbm::decode(bad), Err(Error::Format { .. })), "{bad:?}");
        }
    }

    #[test]
    fn millimeter_quantization() {
        assert_eq!(depth_to_mm(2.0), 2000);
        assert_eq!(depth_to_mm(0.0001), 1);
        assert_eq!(depth_to_mm(100.0), 65535);
    }
}
