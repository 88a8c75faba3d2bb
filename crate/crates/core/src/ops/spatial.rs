//! Bilinear upsampling, cropping and channel concatenation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source taps for one output coordinate of an align-corners-false resize.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src_len: usize, factor: usize) -> Vec<Tap> {
    (0..src_len * factor)
        .map(|o| {
            let s = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            Tap { lo, hi, frac: s - lo as f64 }
        })
        .collect()
}

/// Multiplies both spatial dims by `factor` with bilinear interpolation
/// (half-pixel centers, edge clamping).
pub fn upsample_bilinear(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsample", "factor must be at least 1"));
    }
    let (n, c, h, w) = input.nchw();
    if factor == 1 {
        return Tensor::from_vec(&[n, c, h, w], input.data().to_vec());
    }
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (ho, wo) = (h * factor, w * factor);
    let x = input.data();
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v00 = src[a.lo * w + b.lo];
                let v01 = src[a.lo * w + b.hi];
                let v10 = src[a.hi * w + b.lo];
                let v11 = src[a.hi * w + b.hi];
                let top = v00 + (v01 - v00) * b.frac;
                let bot = v10 + (v11 - v10) * b.frac;
                dst[oy * wo + ox] = top + (bot - top) * a.frac;
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// Transpose of `upsample_bilinear`; `dims` are the (n, c, h, w) of its input.
pub fn upsample_bilinear_backward(dims: (usize, usize, usize, usize), factor: usize, grad_out: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = dims;
    if factor == 1 {
        return grad_out.to_vec();
    }
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (ho, wo) = (h * factor, w * factor);
    let mut g = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &grad_out[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut g[plane * h * w..(plane + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let go = src[oy * wo + ox];
                let top = go * (1.0 - a.frac);
                let bot = go * a.frac;
                dst[a.lo * w + b.lo] += top * (1.0 - b.frac);
                dst[a.lo * w + b.hi] += top * b.frac;
                dst[a.hi * w + b.lo] += bot * (1.0 - b.frac);
                dst[a.hi * w + b.hi] += bot * b.frac;
            }
        }
    }
    g
}

/// Spatial window `[y0, y0+h) × [x0, x0+w)` of every channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

pub fn crop(input: &Tensor, win: Window) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw();
    if win.y0 + win.height > h || win.x0 + win.width > w || win.height == 0 || win.width == 0 {
        return Err(Error::config(
            "crop",
            format!("window {win:?} outside {h}x{w} map"),
        ));
    }
    let mut out = Vec::with_capacity(n * c * win.height * win.width);
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for y in win.y0..win.y0 + win.height {
            out.extend_from_slice(&src[y * w + win.x0..y * w + win.x0 + win.width]);
        }
    }
    Tensor::from_vec(&[n, c, win.height, win.width], out)
}

pub fn crop_backward(dims: (usize, usize, usize, usize), win: Window, grad_out: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = dims;
    let mut g = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut g[plane * h * w..(plane + 1) * h * w];
        let src = &grad_out[plane * win.height * win.width..(plane + 1) * win.height * win.width];
        for (row, y) in (win.y0..win.y0 + win.height).enumerate() {
            dst[y * w + win.x0..y * w + win.x0 + win.width]
                .copy_from_slice(&src[row * win.width..(row + 1) * win.width]);
        }
    }
    g
}

/// Concatenates along the channel axis; batch and spatial dims must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat", "nothing to concatenate"))?;
    let (n, _, h, w) = first.nchw();
    let mut channels = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.nchw();
        if pc == 0 {
            continue;
        }
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::config(
                "concat",
                format!("cannot concatenate {:?} with {:?}", p.dims(), first.dims()),
            ));
        }
        channels += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * channels * plane);
    for b in 0..n {
        for p in parts {
            let (_, pc, _, _) = p.nchw();
            out.extend_from_slice(&p.data()[b * pc * plane..(b + 1) * pc * plane]);
        }
    }
    Tensor::from_vec(&[n, channels, h, w], out)
}

/// Splits a concatenated gradient back into per-part gradients.
pub fn concat_backward(part_channels: &[usize], n: usize, plane: usize, grad_out: &[f64]) -> Vec<Vec<f64>> {
    let total: usize = part_channels.iter().sum();
    let mut grads: Vec<Vec<f64>> = part_channels.iter().map(|&c| Vec::with_capacity(n * c * plane)).collect();
    for b in 0..n {
        let mut off = b * total * plane;
        for (g, &c) in grads.iter_mut().zip(part_channels) {
            g.extend_from_slice(&grad_out[off..off + c * plane]);
            off += c * plane;
        }
    }
    grads
}
