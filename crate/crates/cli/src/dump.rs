//! Prediction files: raw maps plus false-color renderings.
//!
//! Per sample `i`: `NNNNN.depth.pgm` (16-bit millimeters), `NNNNN.normals.tns`
//! (`[3, H, W]` f64), `NNNNN.labels.pgm` (8-bit class ids) and a
//! `.viz.ppm` rendering next to each.

use std::fs;
use std::path::Path;

use mscale::data::netpbm::{write_depth, write_gray8, write_rgb};
use mscale::data::write_tensor;
use mscale::trainer::Prediction;
use mscale::{Grid, Result, Tensor};

const PALETTE: [[f64; 3]; 8] = [
    [0.35, 0.35, 0.35],
    [0.90, 0.30, 0.25],
    [0.25, 0.65, 0.30],
    [0.25, 0.45, 0.85],
    [0.95, 0.75, 0.20],
    [0.65, 0.35, 0.75],
    [0.20, 0.75, 0.80],
    [0.95, 0.55, 0.70],
];

pub fn write_predictions(dir: &Path, preds: &[Prediction]) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let mut files = 0;
    for (i, p) in preds.iter().enumerate() {
        let stem = dir.join(format!("{i:05}"));
        let path = |ext: &str| format!("{}.{ext}", stem.display());
        if let Some(d) = &p.depth {
            write_depth(path("depth.pgm"), d)?;
            let (lo, hi) = d.depth.as_slice().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = (hi - lo).max(1e-12);
            // Near is bright.
            write_rgb(path("depth.viz.ppm"), &d.depth.map(|&v| [1.0 - (v - lo) / span; 3]))?;
            files += 2;
        }
        if let Some(n) = &p.normals {
            let (w, h) = (n.normals.width(), n.normals.height());
            let mut data = vec![0.0; 3 * w * h];
            for (j, v) in n.normals.as_slice().iter().enumerate() {
                for c in 0..3 {
                    data[c * w * h + j] = v[c];
                }
            }
            write_tensor(path("normals.tns"), &Tensor::from_vec(&[3, h, w], data)?)?;
            write_rgb(path("normals.viz.ppm"), &n.normals.map(|v| v.map(|c| 0.5 * (c + 1.0))))?;
            files += 2;
        }
        if let Some(l) = &p.labels {
            write_gray8(path("labels.pgm"), &l.labels)?;
            let viz: Grid<[f64; 3]> = l.labels.map(|&c| PALETTE[c as usize % PALETTE.len()]);
            write_rgb(path("labels.viz.ppm"), &viz)?;
            files += 2;
        }
    }
    Ok(files)
}
