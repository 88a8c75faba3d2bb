//! Rectifier and inverted dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.take_grad();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes gradient where the input was strictly positive.
pub fn relu_backward(input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Dropout output together with the per-unit multiplier used (0 or 1/(1−rate)).
#[derive(Debug, Clone)]
pub struct Dropped {
    pub output: Tensor,
    pub scale: Option<Vec<f64>>,
}

/// Inverted dropout: in training, each unit is zeroed with probability `rate`
/// and survivors are scaled by `1/(1−rate)`; at inference it is the identity.
pub fn dropout<R: Rng + ?Sized>(input: &Tensor, rate: f64, rng: &mut R, training: bool) -> Result<Dropped> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Input(format!("dropout rate must lie in [0,1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(Dropped {
            output: input.clone(),
            scale: None,
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut output = input.clone();
    output.take_grad();
    for (v, s) in output.data_mut().iter_mut().zip(&scale) {
        *v *= s;
    }
    Ok(Dropped {
        output,
        scale: Some(scale),
    })
}

pub fn dropout_backward(scale: Option<&[f64]>, grad_out: &[f64]) -> Vec<f64> {
    match scale {
        Some(s) => s.iter().zip(grad_out).map(|(a, b)| a * b).collect(),
        None => grad_out.to_vec(),
    }
}

/// Per-pixel softmax over the channels of an N × C × H × W map.
pub fn softmax_channels(input: &Tensor) -> Tensor {
    let (n, k, h, w) = input.nchw();
    let plane = h * w;
    let mut out = input.data().to_vec();
    for b in 0..n {
        let base = b * k * plane;
        for i in 0..plane {
            let max = (0..k).map(|c| out[base + c * plane + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..k {
                let e = (out[base + c * plane + i] - max).exp();
                out[base + c * plane + i] = e;
                sum += e;
            }
            for c in 0..k {
                out[base + c * plane + i] /= sum;
            }
        }
    }
    Tensor::from_vec(input.dims(), out).expect("same dims")
}

/// Gradient of `softmax_channels` given its output `y`:
/// `y ⊙ (g − Σ_c y_c g_c)` per pixel.
pub fn softmax_channels_backward(output: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let (n, k, h, w) = output.nchw();
    let plane = h * w;
    let y = output.data();
    let mut g = vec![0.0; y.len()];
    for b in 0..n {
        let base = b * k * plane;
        for i in 0..plane {
            let dot: f64 = (0..k).map(|c| y[base + c * plane + i] * grad_out[base + c * plane + i]).sum();
            for c in 0..k {
                let j = base + c * plane + i;
                g[j] = y[j] * (grad_out[j] - dot);
            }
        }
    }
    g
}
