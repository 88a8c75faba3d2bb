//! Samples, the synthetic scene generator and on-disk formats.

pub mod checkpoint;
pub mod dataset;
pub mod netpbm;
pub mod scene;
pub mod tensor_file;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::maps::{DepthMap, Grid, LabelMap, NormalMap, ValidMask};

pub use checkpoint::Checkpoint;
pub use dataset::{load_split, read_meta, write_split, DatasetMeta, Split};
pub use scene::{gen_scene, gen_scene_with_faces, SceneSpec};
pub use tensor_file::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, DType, TensorData, TensorFile};

/// One aligned training/evaluation example. All per-pixel maps share the
/// same size and, for generated or loaded data, the same validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Linear RGB in `[0, 1]`.
    pub rgb: Grid<[f64; 3]>,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub labels: LabelMap,
    pub intrinsics: Intrinsics,
}

impl Sample {
    pub fn new(rgb: Grid<[f64; 3]>, depth: DepthMap, normals: NormalMap, labels: LabelMap, intrinsics: Intrinsics) -> Result<Self> {
        let ok = rgb.same_size(&depth.depth)
            && rgb.same_size(&depth.mask)
            && rgb.same_size(&normals.normals)
            && rgb.same_size(&normals.mask)
            && rgb.same_size(&labels.labels)
            && rgb.same_size(&labels.mask);
        if !ok {
            return Err(Error::Input("sample maps differ in size".into()));
        }
        Ok(Sample { rgb, depth, normals, labels, intrinsics })
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn mask(&self) -> &ValidMask {
        &self.depth.mask
    }

    /// SHA-256 over every map, for identity checks across splits.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.width() as u64).to_le_bytes());
        h.update((self.height() as u64).to_le_bytes());
        for p in self.rgb.as_slice() {
            p.iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        for (d, m) in self.depth.depth.as_slice().iter().zip(self.depth.mask.as_slice()) {
            h.update(d.to_le_bytes());
            h.update([u8::from(*m)]);
        }
        for n in self.normals.normals.as_slice() {
            n.iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        h.update(self.labels.labels.as_slice());
        h.finalize().into()
    }
}
