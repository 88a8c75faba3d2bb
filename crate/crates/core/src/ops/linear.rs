//! Fully-connected layer over flattened batch items.

use crate::error::{Error, Result};
use crate::ops::gemm;
use crate::tensor::Tensor;

/// `out[n] = W · flatten(input[n]) + b`; `weights` is out × in.
pub fn linear(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (n, f) = flat_dims(input);
    let (o, wf) = weight_dims(weights)?;
    if wf != f {
        return Err(Error::config(
            "linear",
            format!("input has {f} features but weights expect {wf}"),
        ));
    }
    if bias.len() != o {
        return Err(Error::config("linear", format!("bias length {} != {o}", bias.len())));
    }
    let mut out: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm::matmul_acc(n, f, o, input.data(), (f, 1), weights.data(), (1, f), &mut out, (o, 1));
    Tensor::from_vec(&[n, o], out)
}

/// Gradients of `linear` for input, weights and bias.
pub fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (n, f) = flat_dims(input);
    let o = weights.dims()[0];
    let mut gw = vec![0.0; o * f];
    gemm::matmul_acc(o, n, f, grad_out, (1, o), input.data(), (f, 1), &mut gw, (f, 1));
    let mut gb = vec![0.0; o];
    for row in grad_out.chunks(o) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let gin = need_input.then(|| {
        let mut gx = vec![0.0; n * f];
        gemm::matmul_acc(n, o, f, grad_out, (o, 1), weights.data(), (f, 1), &mut gx, (f, 1));
        gx
    });
    (gin, gw, gb)
}

fn flat_dims(input: &Tensor) -> (usize, usize) {
    let n = if input.rank() == 1 { 1 } else { input.dims()[0] };
    (n, input.len() / n.max(1))
}

fn weight_dims(weights: &Tensor) -> Result<(usize, usize)> {
    match weights.dims() {
        [o, f] => Ok((*o, *f)),
        d => Err(Error::config("linear", format!("weights must be rank 2, got {d:?}"))),
    }
}
