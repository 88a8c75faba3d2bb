//! Network inputs from samples, targets on prediction planes, and mapping
//! plane predictions back to input resolution.

use super::config::{Modality, Plane};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::maps::{normalize3, DepthMap, Grid, LabelMap, NormalMap};
use crate::tensor::Tensor;

/// Batched network inputs (N × C × H × W per modality).
///
/// RGB is centered as `rgb − 0.5`; depth enters as `ln(depth)` with 0 at
/// invalid pixels; normals enter as their xyz components.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub rgb: Tensor,
    pub depth: Option<Tensor>,
    pub normals: Option<Tensor>,
}

impl Inputs {
    pub fn from_samples(samples: &[Sample], modalities: &[Modality]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Input("empty batch".into()))?;
        let (w, h) = (first.width(), first.height());
        if samples.iter().any(|s| (s.width(), s.height()) != (w, h)) {
            return Err(Error::Input("batch samples differ in size".into()));
        }
        let n = samples.len();
        let plane = w * h;
        let mut rgb = vec![0.0; n * 3 * plane];
        for (b, s) in samples.iter().enumerate() {
            for (i, px) in s.rgb.as_slice().iter().enumerate() {
                for c in 0..3 {
                    rgb[(b * 3 + c) * plane + i] = px[c] - 0.5;
                }
            }
        }
        let depth = modalities.contains(&Modality::Depth).then(|| {
            let mut d = vec![0.0; n * plane];
            for (b, s) in samples.iter().enumerate() {
                for (i, (&v, &m)) in s.depth.depth.as_slice().iter().zip(s.depth.mask.as_slice()).enumerate() {
                    if m {
                        d[b * plane + i] = v.ln();
                    }
                }
            }
            d
        });
        let normals = modalities.contains(&Modality::Normals).then(|| {
            let mut v = vec![0.0; n * 3 * plane];
            for (b, s) in samples.iter().enumerate() {
                for (i, (nv, &m)) in s.normals.normals.as_slice().iter().zip(s.normals.mask.as_slice()).enumerate() {
                    if m {
                        for c in 0..3 {
                            v[(b * 3 + c) * plane + i] = nv[c];
                        }
                    }
                }
            }
            v
        });
        Ok(Inputs {
            rgb: Tensor::from_vec(&[n, 3, h, w], rgb)?,
            depth: depth.map(|d| Tensor::from_vec(&[n, 1, h, w], d)).transpose()?,
            normals: normals.map(|v| Tensor::from_vec(&[n, 3, h, w], v)).transpose()?,
        })
    }

    pub fn get(&self, m: Modality) -> Result<&Tensor> {
        match m {
            Modality::Rgb => Some(&self.rgb),
            Modality::Depth => self.depth.as_ref(),
            Modality::Normals => self.normals.as_ref(),
        }
        .ok_or_else(|| Error::Input(format!("missing input modality `{}`", m.name())))
    }

    pub fn batch(&self) -> usize {
        self.rgb.nchw().0
    }

    /// (width, height)
    pub fn size(&self) -> (usize, usize) {
        let (_, _, h, w) = self.rgb.nchw();
        (w, h)
    }
}

/// `w × h` window of every channel with top-left `(x0, y0)`, zero outside.
pub fn extract_window(t: &Tensor, x0: isize, y0: isize, w: usize, h: usize) -> Tensor {
    let (n, c, th, tw) = t.nchw();
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for y in 0..h {
            let sy = y0 + y as isize;
            if sy < 0 || sy >= th as isize {
                continue;
            }
            for x in 0..w {
                let sx = x0 + x as isize;
                if sx >= 0 && sx < tw as isize {
                    out[(plane * h + y) * w + x] = t.data()[(plane * th + sy as usize) * tw + sx as usize];
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out).expect("window dims")
}

/// Ground truth summarized on a prediction plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneTargets {
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub labels: LabelMap,
}

impl PlaneTargets {
    /// Sub-window of the plane targets.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> PlaneTargets {
        let cut = |g: &Grid<bool>| Grid::from_fn(w, h, |x, y| *g.get(x0 + x, y0 + y));
        PlaneTargets {
            depth: DepthMap {
                depth: Grid::from_fn(w, h, |x, y| *self.depth.depth.get(x0 + x, y0 + y)),
                mask: cut(&self.depth.mask),
            },
            normals: NormalMap {
                normals: Grid::from_fn(w, h, |x, y| *self.normals.normals.get(x0 + x, y0 + y)),
                mask: cut(&self.normals.mask),
            },
            labels: LabelMap {
                labels: Grid::from_fn(w, h, |x, y| *self.labels.labels.get(x0 + x, y0 + y)),
                mask: cut(&self.labels.mask),
            },
        }
    }
}

/// Block-averages a sample onto `plane`. A plane pixel is valid when at
/// least half of its `stride × stride` block is valid; depth is the
/// geometric mean, normals the renormalized mean and labels the majority
/// (lowest class on ties) over the valid block pixels.
pub fn plane_targets(sample: &Sample, plane: &Plane, classes: usize) -> PlaneTargets {
    let s = plane.stride;
    let need = (s * s).div_ceil(2);
    let (pw, ph) = (plane.width, plane.height);
    let mut depth = Grid::filled(pw, ph, 1.0);
    let mut dmask = Grid::filled(pw, ph, false);
    let mut normals = Grid::filled(pw, ph, [0.0, 0.0, -1.0]);
    let mut nmask = Grid::filled(pw, ph, false);
    let mut labels = Grid::filled(pw, ph, 0u8);
    let mut lmask = Grid::filled(pw, ph, false);
    let mut votes = vec![0usize; classes.max(1)];
    for j in 0..ph {
        for i in 0..pw {
            let (bx, by) = (s * (i + plane.offset.0), s * (j + plane.offset.1));
            let (mut cnt, mut logsum, mut nsum) = (0usize, 0.0, [0.0; 3]);
            let (mut ncnt, mut lcnt) = (0usize, 0usize);
            votes.iter_mut().for_each(|v| *v = 0);
            for y in by..(by + s).min(sample.height()) {
                for x in bx..(bx + s).min(sample.width()) {
                    if *sample.depth.mask.get(x, y) {
                        cnt += 1;
                        logsum += sample.depth.depth.get(x, y).ln();
                    }
                    if *sample.normals.mask.get(x, y) {
                        ncnt += 1;
                        let n = sample.normals.normals.get(x, y);
                        (0..3).for_each(|c| nsum[c] += n[c]);
                    }
                    if *sample.labels.mask.get(x, y) {
                        let l = *sample.labels.labels.get(x, y) as usize;
                        if l < votes.len() {
                            votes[l] += 1;
                            lcnt += 1;
                        }
                    }
                }
            }
            if cnt >= need {
                depth.set(i, j, (logsum / cnt as f64).exp());
                dmask.set(i, j, true);
            }
            if ncnt >= need {
                if let Some(n) = normalize3(nsum) {
                    normals.set(i, j, n);
                    nmask.set(i, j, true);
                }
            }
            if lcnt >= need {
                let best = (0..votes.len()).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
                labels.set(i, j, best as u8);
                lmask.set(i, j, true);
            }
        }
    }
    PlaneTargets {
        depth: DepthMap { depth, mask: dmask },
        normals: NormalMap { normals, mask: nmask },
        labels: LabelMap { labels, mask: lmask },
    }
}

/// Bilinear resampling of a `c × plane` map (one batch item) to a `c × H × W`
/// map at input resolution, using the plane's pixel placement. Coordinates
/// outside the plane are clamped to its edge.
pub fn resample_to_input(map: &[f64], channels: usize, plane: &Plane, width: usize, height: usize) -> Vec<f64> {
    let (pw, ph) = (plane.width, plane.height);
    let s = plane.stride as f64;
    let axis = |u: usize, n: usize, off: usize| {
        let p = ((u as f64 - (s - 1.0) / 2.0) / s - off as f64).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|u| axis(u, pw, plane.offset.0)).collect();
    let ys: Vec<_> = (0..height).map(|v| axis(v, ph, plane.offset.1)).collect();
    let mut out = vec![0.0; channels * width * height];
    for c in 0..channels {
        let src = &map[c * pw * ph..(c + 1) * pw * ph];
        for (v, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (u, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * pw + x0] * (1.0 - fx) + src[y0 * pw + x1] * fx;
                let bot = src[y1 * pw + x0] * (1.0 - fx) + src[y1 * pw + x1] * fx;
                out[(c * height + v) * width + u] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_zero_fills_outside() {
        let t = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = extract_window(&t, -1, 0, 3, 2);
        assert_eq!(w.data(), &[0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn resample_constant_and_identity() {
        let plane = Plane { width: 3, height: 2, stride: 1, offset: (0, 0) };
        let m: Vec<f64> = (0..6).map(f64::from).collect();
        assert_eq!(resample_to_input(&m, 1, &plane, 3, 2), m);
        let plane = Plane { width: 2, height: 2, stride: 4, offset: (0, 0) };
        assert!(resample_to_input(&[2.5; 4], 1, &plane, 8, 8).iter().all(|&v| v == 2.5));
    }
}
