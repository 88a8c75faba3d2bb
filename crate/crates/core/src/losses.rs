//! Task losses with exact gradients, plus median-frequency class weights.
//!
//! All losses take a batch prediction (N × C × H × W) and one target map per
//! batch item. The per-image loss is normalized by that image's valid pixel
//! count; the batch loss is the mean over images.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::maps::{DepthMap, LabelMap, NormalMap, ValidMask};
use crate::tensor::Tensor;

/// Scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

fn check_batch<T>(pred: &Tensor, channels: Option<usize>, targets: &[T], size: impl Fn(&T) -> (usize, usize)) -> Result<()> {
    let (n, c, h, w) = pred.nchw();
    if targets.len() != n {
        return Err(Error::Input(format!("{} targets for a batch of {n}", targets.len())));
    }
    if let Some(want) = channels {
        if c != want {
            return Err(Error::Input(format!("prediction has {c} channels, expected {want}")));
        }
    }
    for t in targets {
        if size(t) != (w, h) {
            return Err(Error::Input(format!(
                "target is {:?}, prediction is {w}x{h}",
                size(t)
            )));
        }
    }
    Ok(())
}

fn valid_count(mask: &ValidMask) -> Result<f64> {
    match mask.count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n as f64),
    }
}

/// Log-space depth loss: `(1/n)Σd² − (1/2n²)(Σd)² + (1/n)Σ[(∇ₓd)² + (∇ᵧd)²]`
/// with `d = pred − ln(target)`.
///
/// Image gradients are forward differences; a pair contributes only when
/// both of its pixels are valid, so borders and holes are skipped.
pub fn depth_loss(pred_logdepth: &Tensor, targets: &[DepthMap]) -> Result<LossOutput> {
    check_batch(pred_logdepth, Some(1), targets, |t| (t.width(), t.height()))?;
    let (batch, _, h, w) = pred_logdepth.nchw();
    let plane = h * w;
    let mut grad = vec![0.0; batch * plane];
    let mut total = 0.0;
    for (b, target) in targets.iter().enumerate() {
        let pred = &pred_logdepth.data()[b * plane..(b + 1) * plane];
        let mask = target.mask.as_slice();
        let n = valid_count(&target.mask)?;
        let mut d = vec![0.0; plane];
        for i in 0..plane {
            if mask[i] {
                let t = target.depth.as_slice()[i];
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Validation(format!("non-positive target depth {t} at a valid pixel")));
                }
                d[i] = pred[i] - t.ln();
            }
        }
        let sum: f64 = d.iter().sum();
        let sq: f64 = d.iter().map(|v| v * v).sum();
        let g = &mut grad[b * plane..(b + 1) * plane];
        for i in 0..plane {
            if mask[i] {
                g[i] = 2.0 * d[i] / n - sum / (n * n);
            }
        }
        let mut smooth = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                    if mask[j] {
                        let diff = d[j] - d[i];
                        smooth += diff * diff;
                        g[j] += 2.0 * diff / n;
                        g[i] -= 2.0 * diff / n;
                    }
                }
            }
        }
        total += sq / n - sum * sum / (2.0 * n * n) + smooth / n;
    }
    finish(total, grad, pred_logdepth.dims(), batch)
}

/// `−(1/n) Σᵢ Nᵢ·Nᵢ*` over valid pixels. The prediction is expected to be
/// unit-normalized already.
pub fn normals_loss(pred_normals: &Tensor, targets: &[NormalMap]) -> Result<LossOutput> {
    check_batch(pred_normals, Some(3), targets, |t| (t.width(), t.height()))?;
    let (batch, _, h, w) = pred_normals.nchw();
    let plane = h * w;
    let mut grad = vec![0.0; batch * 3 * plane];
    let mut total = 0.0;
    for (b, target) in targets.iter().enumerate() {
        let n = valid_count(&target.mask)?;
        let base = b * 3 * plane;
        let p = pred_normals.data();
        let mut dot = 0.0;
        for (i, (&m, t)) in target.mask.as_slice().iter().zip(target.normals.as_slice()).enumerate() {
            if !m {
                continue;
            }
            for k in 0..3 {
                dot += p[base + k * plane + i] * t[k];
                grad[base + k * plane + i] = -t[k] / n;
            }
        }
        total += -dot / n;
    }
    finish(total, grad, pred_normals.dims(), batch)
}

/// Per-class loss weights `α_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights { weights: vec![1.0; classes] }
    }

    /// `class_id weight` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, w) in self.weights.iter().enumerate() {
            let _ = writeln!(s, "{c} {w}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse_err = || Error::Validation(format!("line {}: expected `class_id weight`", lineno + 1));
            let c: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(parse_err)?;
            let w: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(parse_err)?;
            if it.next().is_some() || !(w >= 0.0 && w.is_finite()) {
                return Err(parse_err());
            }
            pairs.push((c, w));
        }
        let k = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let mut weights = vec![0.0; k];
        for (c, w) in pairs {
            weights[c] = w;
        }
        Ok(ClassWeights { weights })
    }
}

/// Pixelwise cross-entropy of `softmax(scores)` against target labels,
/// `−(1/n) Σᵢ α_{cᵢ} log Cᵢ,cᵢ`. Normalized by the valid pixel count.
pub fn semantic_loss(scores: &Tensor, targets: &[LabelMap], weights: Option<&ClassWeights>) -> Result<LossOutput> {
    check_batch(scores, None, targets, |t| (t.labels.width(), t.labels.height()))?;
    let (batch, k, h, w) = scores.nchw();
    if let Some(cw) = weights {
        if cw.weights.len() != k {
            return Err(Error::Input(format!("{} class weights for {k} classes", cw.weights.len())));
        }
    }
    let plane = h * w;
    let mut grad = vec![0.0; batch * k * plane];
    let mut total = 0.0;
    let mut probs = vec![0.0; k];
    for (b, target) in targets.iter().enumerate() {
        let n = valid_count(&target.mask)?;
        let base = b * k * plane;
        let z = scores.data();
        let mut sum = 0.0;
        for (i, (&m, &label)) in target.mask.as_slice().iter().zip(target.labels.as_slice()).enumerate() {
            if !m {
                continue;
            }
            let label = label as usize;
            if label >= k {
                return Err(Error::Input(format!("label {label} out of range for {k} classes")));
            }
            let alpha = weights.map_or(1.0, |cw| cw.weights[label]);
            let max = (0..k).map(|c| z[base + c * plane + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut norm = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (z[base + c * plane + i] - max).exp();
                norm += *p;
            }
            let log_p = z[base + label * plane + i] - max - norm.ln();
            sum -= alpha * log_p;
            for (c, p) in probs.iter().enumerate() {
                let target = if c == label { 1.0 } else { 0.0 };
                grad[base + c * plane + i] = alpha * (p / norm - target) / n;
            }
        }
        total += sum / n;
    }
    finish(total, grad, scores.dims(), batch)
}

fn finish(total: f64, mut grad: Vec<f64>, dims: &[usize], batch: usize) -> Result<LossOutput> {
    let scale = 1.0 / batch as f64;
    if batch > 1 {
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    Ok(LossOutput {
        value: total * scale,
        grad: Tensor::from_vec(dims, grad)?,
    })
}

/// `α_c = median_freq / freq(c)`, where `freq(c)` is the pixel count of class
/// `c` divided by the total valid pixels of the images containing `c`.
/// Classes that never occur get weight 0 and a logged warning.
pub fn median_freq_weights<'a, I>(dataset: I, classes: usize) -> Result<ClassWeights>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    let mut class_pixels = vec![0u64; classes];
    let mut image_pixels = vec![0u64; classes];
    let mut images = 0;
    for map in dataset {
        images += 1;
        let mut counts = vec![0u64; classes];
        let mut valid = 0u64;
        for (&m, &l) in map.mask.as_slice().iter().zip(map.labels.as_slice()) {
            if !m {
                continue;
            }
            let l = l as usize;
            if l >= classes {
                return Err(Error::Input(format!("label {l} out of range for {classes} classes")));
            }
            counts[l] += 1;
            valid += 1;
        }
        for c in 0..classes {
            if counts[c] > 0 {
                class_pixels[c] += counts[c];
                image_pixels[c] += valid;
            }
        }
    }
    if images == 0 {
        return Err(Error::Input("median-frequency weights need at least one image".into()));
    }
    let freq: Vec<Option<f64>> = (0..classes)
        .map(|c| (class_pixels[c] > 0).then(|| class_pixels[c] as f64 / image_pixels[c] as f64))
        .collect();
    let mut present: Vec<f64> = freq.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Input("no labelled pixels in dataset".into()));
    }
    present.sort_by(f64::total_cmp);
    let mid = present.len() / 2;
    let median = if present.len() % 2 == 0 {
        0.5 * (present[mid - 1] + present[mid])
    } else {
        present[mid]
    };
    let weights = freq
        .iter()
        .enumerate()
        .map(|(c, f)| match f {
            Some(f) => median / f,
            None => {
                log::warn!("class {c} never occurs; its weight is set to 0");
                0.0
            }
        })
        .collect();
    Ok(ClassWeights { weights })
}
