//! 2-D cross-correlation lowered to GEMM through an im2col buffer.
//!
//! The kernel is not flipped: `out[co][y][x] = b[co] + Σ w[co][ci][ky][kx] ·
//! in[ci][y·s − p + ky][x·s − p + kx]`, with zeros outside the input.

use crate::error::{Error, Result};
use crate::ops::gemm;
use crate::tensor::Tensor;

/// Kernel footprint, stride and symmetric zero padding of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// `floor((H + 2·pad − kernel) / stride) + 1` per axis, or `None` when
    /// the padded input is smaller than the kernel.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            output_len(h, self.kernel_h, self.stride, self.pad)?,
            output_len(w, self.kernel_w, self.stride, self.pad)?,
        ))
    }
}

pub fn output_len(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || n + 2 * pad < kernel {
        None
    } else {
        Some((n + 2 * pad - kernel) / stride + 1)
    }
}

/// A named conv layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    /// out × in × kh × kw
    pub weights: Tensor,
    /// out
    pub bias: Tensor,
}

impl ConvSpec {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
    ) -> Self {
        ConvSpec {
            name: name.into(),
            in_channels,
            out_channels,
            geom,
            weights: Tensor::zeros(&[out_channels, in_channels, geom.kernel_h, geom.kernel_w]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.geom.output_size(h, w).ok_or_else(|| {
            Error::config(
                &self.name,
                format!(
                    "input {h}x{w} with pad {} is smaller than kernel {}x{}",
                    self.geom.pad, self.geom.kernel_h, self.geom.kernel_w
                ),
            )
        })
    }
}

/// Forward pass of `spec` over `input` (N × in × H × W).
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    forward(input, &spec.weights, spec.bias.data(), spec.geom, &spec.name)
}

/// Accumulates exact gradients into `input`, `spec.weights` and `spec.bias`.
pub fn conv2d_backward(input: &mut Tensor, spec: &mut ConvSpec, grad_out: &Tensor) -> Result<()> {
    let grads = backward(input, &spec.weights, spec.geom, grad_out, true, &spec.name)?;
    input.accumulate_grad(&grads.input.expect("input gradient requested"));
    spec.weights.accumulate_grad(&grads.weights);
    spec.bias.accumulate_grad(&grads.bias);
    Ok(())
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_shapes(input: &Tensor, weight: &Tensor, geom: ConvGeom, layer: &str) -> Result<(usize, usize)> {
    let (_, c, h, w) = input.nchw();
    let wd = weight.dims();
    if wd.len() != 4 || wd[2] != geom.kernel_h || wd[3] != geom.kernel_w {
        return Err(Error::config(
            layer,
            format!("weight dims {wd:?} do not match kernel {}x{}", geom.kernel_h, geom.kernel_w),
        ));
    }
    if wd[1] != c {
        return Err(Error::config(
            layer,
            format!("expected {} input channels, got {c}", wd[1]),
        ));
    }
    geom.output_size(h, w).ok_or_else(|| {
        Error::config(
            layer,
            format!("input {h}x{w} with pad {} smaller than kernel {}x{}", geom.pad, geom.kernel_h, geom.kernel_w),
        )
    })
}

pub(crate) fn forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f64],
    geom: ConvGeom,
    layer: &str,
) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw();
    let (ho, wo) = check_shapes(input, weight, geom, layer)?;
    let cout = weight.dims()[0];
    if bias.len() != cout {
        return Err(Error::config(layer, format!("bias length {} != {cout}", bias.len())));
    }
    let k = c * geom.kernel_h * geom.kernel_w;
    let p = ho * wo;
    let mut out = vec![0.0; n * cout * p];
    let mut cols = vec![0.0; k * p];
    for b in 0..n {
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        im2col(src, c, h, w, geom, ho, wo, &mut cols);
        let dst = &mut out[b * cout * p..(b + 1) * cout * p];
        for (co, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        gemm::matmul_acc(cout, k, p, weight.data(), (k, 1), &cols, (p, 1), dst, (p, 1));
    }
    Tensor::from_vec(&[n, cout, ho, wo], out)
}

pub(crate) fn backward(
    input: &Tensor,
    weight: &Tensor,
    geom: ConvGeom,
    grad_out: &Tensor,
    need_input: bool,
    layer: &str,
) -> Result<ConvGrads> {
    let (n, c, h, w) = input.nchw();
    let (ho, wo) = check_shapes(input, weight, geom, layer)?;
    let cout = weight.dims()[0];
    if grad_out.nchw() != (n, cout, ho, wo) {
        return Err(Error::config(
            layer,
            format!("grad_out dims {:?} != output ({n},{cout},{ho},{wo})", grad_out.dims()),
        ));
    }
    let k = c * geom.kernel_h * geom.kernel_w;
    let p = ho * wo;
    let mut gw = vec![0.0; cout * k];
    let mut gb = vec![0.0; cout];
    let mut gin = need_input.then(|| vec![0.0; n * c * h * w]);
    let mut cols = vec![0.0; k * p];
    let mut gcols = vec![0.0; k * p];
    for b in 0..n {
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        let go = &grad_out.data()[b * cout * p..(b + 1) * cout * p];
        im2col(src, c, h, w, geom, ho, wo, &mut cols);
        // gw += go · colsᵀ
        gemm::matmul_acc(cout, p, k, go, (p, 1), &cols, (1, p), &mut gw, (k, 1));
        for (co, row) in go.chunks(p).enumerate() {
            gb[co] += row.iter().sum::<f64>();
        }
        if let Some(gin) = gin.as_mut() {
            // gcols = wᵀ · go
            gcols.fill(0.0);
            gemm::matmul_acc(k, cout, p, weight.data(), (1, k), go, (p, 1), &mut gcols, (p, 1));
            col2im(&gcols, c, h, w, geom, ho, wo, &mut gin[b * c * h * w..(b + 1) * c * h * w]);
        }
    }
    Ok(ConvGrads {
        input: gin,
        weights: gw,
        bias: gb,
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col(src: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, cols: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = ((ci * g.kernel_h + ky) * g.kernel_w + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize { 0.0 } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, dst: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = ((ci * g.kernel_h + ky) * g.kernel_w + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
