//! Max pooling without padding.

use crate::error::{Error, Result};
use crate::ops::conv::output_len;
use crate::tensor::Tensor;

/// Result of a max-pool forward pass: the pooled map and, for every output
/// element, the flat input index it was taken from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Per-window maximum. Ties go to the first element in row-major window order.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<Pooled> {
    let (n, c, h, w) = input.nchw();
    let (ho, wo) = match (output_len(h, window, stride, 0), output_len(w, window, stride, 0)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::config(
                "maxpool",
                format!("window {window} (stride {stride}) does not fit input {h}x{w}"),
            ))
        }
    };
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + window {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[n, c, ho, wo], out)?,
        argmax,
    })
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&src, &go) in argmax.iter().zip(grad_out) {
        g[src] += go;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn constant_input_routes_to_top_left() {
        let x = Tensor::filled(&[1, 1, 4, 4], 2.0);
        let p = maxpool(&x, 2, 2).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 2.0));
        let g = maxpool_backward(16, &p.argmax, &[1.0; 4]);
        let hits: Vec<usize> = g.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(hits, vec![0, 2, 8, 10]);
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 3]);
        assert!(matches!(maxpool(&x, 3, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn size_formula_sweep() {
        for h in 1..=16 {
            for win in 1..=16 {
                for s in 1..=16 {
                    let x = Tensor::zeros(&[1, 1, h, h]);
                    match maxpool(&x, win, s) {
                        Ok(p) => {
                            assert!(h >= win);
                            let want = (h - win) / s + 1;
                            assert_eq!(p.output.dims(), &[1, 1, want, want]);
                        }
                        Err(_) => assert!(h < win),
                    }
                }
            }
        }
    }
}
