//! Dataset directory layout.
//!
//! ```text
//! <root>/meta.txt
//! <root>/<split>/<index:05>.rgb.ppm      8-bit RGB
//! <root>/<split>/<index:05>.depth.pgm    16-bit depth, millimeters
//! <root>/<split>/<index:05>.labels.pgm   8-bit class ids
//! <root>/<split>/<index:05>.normals.tns  3×H×W f64 tensor container
//! <root>/<split>/<index:05>.mask.pgm     255 = valid
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::netpbm::{read_depth, read_labels, read_mask, read_rgb, write_depth, write_gray8, write_mask, write_rgb};
use super::scene::{gen_scene, SceneSpec};
use super::tensor_file::{read_tensor, write_tensor};
use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::maps::{DepthMap, Grid, NormalMap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Contents of `meta.txt`. Seed ranges are half-open.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub classes: usize,
    pub train_seeds: (u64, u64),
    pub test_seeds: (u64, u64),
}

impl DatasetMeta {
    pub fn count(&self, split: Split) -> usize {
        let r = match split {
            Split::Train => self.train_seeds,
            Split::Test => self.test_seeds,
        };
        (r.1 - r.0) as usize
    }

    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        format!(
            "width={}\nheight={}\nfx={}\nfy={}\ncx={}\ncy={}\nclasses={}\ntrain_seeds={}..{}\ntest_seeds={}..{}\n",
            self.width, self.height, k.fx, k.fy, k.cx, k.cy, self.classes, self.train_seeds.0, self.train_seeds.1, self.test_seeds.0, self.test_seeds.1
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<String> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim().to_string())
                .ok_or_else(|| Error::Validation(format!("meta.txt: missing `{key}`")))
        };
        let num = |key: &str, v: String| -> Result<f64> {
            v.parse().map_err(|_| Error::Validation(format!("meta.txt: `{key}` is not a number")))
        };
        let range = |key: &str, v: String| -> Result<(u64, u64)> {
            let (a, b) = v.split_once("..").ok_or_else(|| Error::Validation(format!("meta.txt: `{key}` is not a range")))?;
            let p = |s: &str| s.parse::<u64>().map_err(|_| Error::Validation(format!("meta.txt: bad `{key}`")));
            let (a, b) = (p(a)?, p(b)?);
            if a > b {
                return Err(Error::Validation(format!("meta.txt: `{key}` is reversed")));
            }
            Ok((a, b))
        };
        let width = num("width", get("width")?)? as usize;
        let height = num("height", get("height")?)? as usize;
        let intrinsics = Intrinsics::new(
            num("fx", get("fx")?)?,
            num("fy", get("fy")?)?,
            num("cx", get("cx")?)?,
            num("cy", get("cy")?)?,
        )?;
        let classes = num("classes", get("classes")?)? as usize;
        let train_seeds = range("train_seeds", get("train_seeds")?)?;
        let test_seeds = range("test_seeds", get("test_seeds")?)?;
        Ok(DatasetMeta { width, height, intrinsics, classes, train_seeds, test_seeds })
    }
}

pub fn read_meta(root: impl AsRef<Path>) -> Result<DatasetMeta> {
    DatasetMeta::from_text(&fs::read_to_string(root.as_ref().join("meta.txt"))?)
}

fn stem(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.name()).join(format!("{index:05}"))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_sample(root: &Path, split: Split, index: usize, s: &Sample) -> Result<()> {
    let st = stem(root, split, index);
    write_rgb(with_ext(&st, ".rgb.ppm"), &s.rgb)?;
    write_depth(with_ext(&st, ".depth.pgm"), &s.depth)?;
    write_gray8(with_ext(&st, ".labels.pgm"), &s.labels.labels)?;
    write_mask(with_ext(&st, ".mask.pgm"), s.mask())?;
    let (w, h) = (s.width(), s.height());
    let mut n = vec![0.0; 3 * w * h];
    for (i, v) in s.normals.normals.as_slice().iter().enumerate() {
        for c in 0..3 {
            n[c * w * h + i] = v[c];
        }
    }
    write_tensor(with_ext(&st, ".normals.tns"), &Tensor::from_vec(&[3, h, w], n)?)
}

pub fn read_sample(root: &Path, split: Split, index: usize, meta: &DatasetMeta) -> Result<Sample> {
    let st = stem(root, split, index);
    let rgb = read_rgb(with_ext(&st, ".rgb.ppm"))?;
    let mask = read_mask(with_ext(&st, ".mask.pgm"))?;
    let raw = read_depth(with_ext(&st, ".depth.pgm"))?;
    if !raw.depth.same_size(&mask) {
        return Err(Error::Validation("depth map and mask sizes differ".into()));
    }
    let depth = DepthMap::new(raw.depth, raw.mask.and(&mask))?;
    let labels = read_labels(with_ext(&st, ".labels.pgm"), meta.classes, depth.mask.clone())?;
    let nt = read_tensor(with_ext(&st, ".normals.tns"))?;
    let (w, h) = (rgb.width(), rgb.height());
    if nt.dims() != [3, h, w] {
        return Err(Error::Validation(format!("normals tensor dims {:?}, expected [3, {h}, {w}]", nt.dims())));
    }
    let plane = w * h;
    let normals = Grid::from_fn(w, h, |x, y| {
        let i = y * w + x;
        [nt.data()[i], nt.data()[plane + i], nt.data()[2 * plane + i]]
    });
    let normals = NormalMap { normals, mask: depth.mask.clone() };
    Sample::new(rgb, depth, normals, labels, meta.intrinsics)
}

/// Writes `samples` as `split`, creating the split directory.
pub fn write_split(root: impl AsRef<Path>, split: Split, samples: &[Sample]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join(split.name()))?;
    for (i, s) in samples.iter().enumerate() {
        write_sample(root, split, i, s)?;
    }
    Ok(())
}

pub fn load_split(root: impl AsRef<Path>, split: Split) -> Result<(DatasetMeta, Vec<Sample>)> {
    let root = root.as_ref();
    let meta = read_meta(root)?;
    let samples = (0..meta.count(split))
        .map(|i| read_sample(root, split, i, &meta))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, samples))
}

/// Sample `i` of a split is rendered from seed `range.0 + i`.
pub fn generate_split(spec: &SceneSpec, seeds: (u64, u64)) -> Result<Vec<Sample>> {
    (seeds.0..seeds.1)
        .map(|seed| gen_scene(spec, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect()
}

/// Generates `train` + `test` samples from disjoint consecutive seed ranges
/// starting at `base_seed` and writes them under `root`.
pub fn generate_dataset(root: impl AsRef<Path>, spec: &SceneSpec, base_seed: u64, train: usize, test: usize) -> Result<DatasetMeta> {
    if train == 0 {
        return Err(Error::Input("dataset needs at least one training sample".into()));
    }
    let root = root.as_ref();
    let meta = DatasetMeta {
        width: spec.width,
        height: spec.height,
        intrinsics: spec.intrinsics,
        classes: spec.classes,
        train_seeds: (base_seed, base_seed + train as u64),
        test_seeds: (base_seed + train as u64, base_seed + (train + test) as u64),
    };
    fs::create_dir_all(root)?;
    write_split(root, Split::Train, &generate_split(spec, meta.train_seeds)?)?;
    write_split(root, Split::Test, &generate_split(spec, meta.test_seeds)?)?;
    fs::write(root.join("meta.txt"), meta.to_text())?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip() {
        let meta = DatasetMeta {
            width: 64,
            height: 48,
            intrinsics: Intrinsics::default_for(64, 48),
            classes: 5,
            train_seeds: (7, 15),
            test_seeds: (15, 17),
        };
        assert_eq!(DatasetMeta::from_text(&meta.to_text()).unwrap(), meta);
        assert!(DatasetMeta::from_text("width=1").is_err());
    }

    #[test]
    fn write_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::desk(16, 12, 3);
        let meta = generate_dataset(dir.path(), &spec, 7, 2, 1).unwrap();
        let (m, train) = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(m, meta);
        assert_eq!(train.len(), 2);
        let orig = generate_split(&spec, meta.train_seeds).unwrap();
        assert_eq!(train[0].rgb, orig[0].rgb);
        assert_eq!(train[0].normals, orig[0].normals);
        assert_eq!(train[0].labels, orig[0].labels);
        for (a, b) in train[0].depth.depth.as_slice().iter().zip(orig[0].depth.depth.as_slice()).zip(orig[0].mask().as_slice()).filter(|(_, &m)| m).map(|(p, _)| p) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
        assert!(generate_dataset(dir.path(), &spec, 0, 0, 1).is_err());
    }
}
