//! Per-pixel unit-length normalization of 3-channel maps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Divides each pixel's 3-vector by `max(‖v‖, epsilon)`.
pub fn l2_normalize_pixels(input: &Tensor, epsilon: f64) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw();
    if c != 3 {
        return Err(Error::config("l2_normalize", format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let v = [x[base + i], x[base + plane + i], x[base + 2 * plane + i]];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(epsilon);
            for k in 0..3 {
                out[base + k * plane + i] = v[k] / norm;
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// Exact gradient of `l2_normalize_pixels`. Where `‖v‖ > ε` this is
/// `(g − y·(y·g)) / ‖v‖`; below the guard the map is linear (`v/ε`).
pub fn l2_normalize_pixels_backward(input: &Tensor, epsilon: f64, grad_out: &[f64]) -> Vec<f64> {
    let (n, _, h, w) = input.nchw();
    let plane = h * w;
    let x = input.data();
    let mut g = vec![0.0; x.len()];
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let idx = [base + i, base + plane + i, base + 2 * plane + i];
            let v = idx.map(|j| x[j]);
            let go = idx.map(|j| grad_out[j]);
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > epsilon {
                let y = v.map(|c| c / norm);
                let dot = y[0] * go[0] + y[1] * go[1] + y[2] * go[2];
                for k in 0..3 {
                    g[idx[k]] = (go[k] - y[k] * dot) / norm;
                }
            } else {
                for k in 0..3 {
                    g[idx[k]] = go[k] / epsilon;
                }
            }
        }
    }
    g
}
