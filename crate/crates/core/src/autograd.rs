//! Reverse-mode differentiation over a linear tape of [`crate::ops`] calls.
//!
//! Nodes are appended in evaluation order, so replaying the tape backwards
//! visits every node after all of its consumers. Gradients accumulate in the
//! node tensors' own gradient buffers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom, Window};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Op families, used to name nodes and to target fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv,
    MaxPool,
    Linear,
    Relu,
    Dropout,
    Upsample,
    Crop,
    Pad,
    Concat,
    Normalize,
    Softmax,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Leaf,
        OpKind::Conv,
        OpKind::MaxPool,
        OpKind::Linear,
        OpKind::Relu,
        OpKind::Dropout,
        OpKind::Upsample,
        OpKind::Crop,
        OpKind::Pad,
        OpKind::Concat,
        OpKind::Normalize,
        OpKind::Softmax,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv => "conv",
            OpKind::MaxPool => "maxpool",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::Dropout => "dropout",
            OpKind::Upsample => "upsample",
            OpKind::Crop => "crop",
            OpKind::Pad => "pad",
            OpKind::Concat => "concat",
            OpKind::Normalize => "normalize",
            OpKind::Softmax => "softmax",
            OpKind::Reshape => "reshape",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { input: Var, weight: Var, bias: Var, geom: ConvGeom, layer: String },
    MaxPool { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Dropout { input: Var, scale: Option<Vec<f64>> },
    Upsample { input: Var, factor: usize },
    Crop { input: Var, win: Window },
    Pad { input: Var, pad: usize },
    Concat { inputs: Vec<Var> },
    Normalize { input: Var, eps: f64 },
    Softmax { input: Var },
    Reshape { input: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv { .. } => OpKind::Conv,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::Relu { .. } => OpKind::Relu,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Crop { .. } => OpKind::Crop,
            Op::Pad { .. } => OpKind::Pad,
            Op::Concat { .. } => OpKind::Concat,
            Op::Normalize { .. } => OpKind::Normalize,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sign_flip: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Negates the input gradients produced by every `kind` node. Only for
    /// exercising gradient checks against a known-bad backward pass.
    pub fn inject_sign_flip(&mut self, kind: OpKind) {
        self.sign_flip = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom, layer: &str) -> Result<Var> {
        let out = ops::conv::forward(
            self.value(input),
            self.value(weight),
            self.value(bias).data(),
            geom,
            layer,
        )?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv { input, weight, bias, geom, layer: layer.to_string() },
            rg,
        ))
    }

    pub fn maxpool(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let pooled = ops::maxpool(self.value(input), window, stride)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(pooled.output, Op::MaxPool { input, argmax: pooled.argmax }, rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias).data())?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        let d = ops::dropout(self.value(input), rate, rng, training)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(d.output, Op::Dropout { input, scale: d.scale }, rg))
    }

    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_bilinear(self.value(input), factor)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Upsample { input, factor }, rg))
    }

    pub fn crop(&mut self, input: Var, win: Window) -> Result<Var> {
        let out = ops::crop(self.value(input), win)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Crop { input, win }, rg))
    }

    /// Symmetric spatial zero padding.
    pub fn pad(&mut self, input: Var, pad: usize) -> Var {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw();
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0; n * c * hp * wp];
        for plane in 0..n * c {
            for y in 0..h {
                let src = &x.data()[(plane * h + y) * w..(plane * h + y + 1) * w];
                let dst = (plane * hp + y + pad) * wp + pad;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        let out = Tensor::from_vec(&[n, c, hp, wp], out).expect("pad dims");
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Pad { input, pad }, rg)
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&parts)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec() }, rg))
    }

    pub fn l2_normalize(&mut self, input: Var, eps: f64) -> Result<Var> {
        let out = ops::l2_normalize_pixels(self.value(input), eps)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Normalize { input, eps }, rg))
    }

    /// Per-pixel softmax over channels.
    pub fn softmax(&mut self, input: Var) -> Var {
        let out = ops::softmax_channels(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Softmax { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(dims)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Propagates `seed` (d loss / d out) back to every differentiable leaf.
    pub fn backward(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::Input(format!(
                "seed gradient has {} entries, output has {}",
                seed.len(),
                self.value(out).len()
            )));
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].value.accumulate_grad(seed);
        for i in (0..=out.0).rev() {
            let node = &mut self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = node.value.take_grad() else { continue };
            let mut contribs = self.input_grads(i, &g)?;
            if self.sign_flip == Some(self.nodes[i].op.kind()) {
                for (_, cg) in contribs.iter_mut() {
                    cg.iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (v, cg) in contribs {
                if self.nodes[v.0].requires_grad {
                    self.nodes[v.0].value.accumulate_grad(&cg);
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { input, weight, bias, geom, layer } => {
                let grad_out = Tensor::from_vec(node.value.dims(), g.to_vec())?;
                let cg = ops::conv::backward(val(*input), val(*weight), *geom, &grad_out, rg(*input), layer)?;
                let mut v = vec![(*weight, cg.weights), (*bias, cg.bias)];
                if let Some(gi) = cg.input {
                    v.push((*input, gi));
                }
                v
            }
            Op::MaxPool { input, argmax } => {
                vec![(*input, ops::maxpool_backward(val(*input).len(), argmax, g))]
            }
            Op::Linear { input, weight, bias } => {
                let (gi, gw, gb) = ops::linear_backward(val(*input), val(*weight), g, rg(*input));
                let mut v = vec![(*weight, gw), (*bias, gb)];
                if let Some(gi) = gi {
                    v.push((*input, gi));
                }
                v
            }
            Op::Relu { input } => vec![(*input, ops::relu_backward(val(*input).data(), g))],
            Op::Dropout { input, scale } => vec![(*input, ops::dropout_backward(scale.as_deref(), g))],
            Op::Upsample { input, factor } => {
                vec![(*input, ops::upsample_bilinear_backward(val(*input).nchw(), *factor, g))]
            }
            Op::Crop { input, win } => vec![(*input, ops::crop_backward(val(*input).nchw(), *win, g))],
            Op::Pad { input, pad } => {
                let (n, c, h, w) = val(*input).nchw();
                let win = Window { y0: *pad, x0: *pad, height: h, width: w };
                let padded = (n, c, h + 2 * pad, w + 2 * pad);
                vec![(*input, crop_slice(padded, win, g))]
            }
            Op::Concat { inputs } => {
                let (n, _, h, w) = node.value.nchw();
                let chans: Vec<usize> = inputs.iter().map(|&v| val(v).nchw().1).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(ops::concat_backward(&chans, n, h * w, g))
                    .collect()
            }
            Op::Normalize { input, eps } => {
                vec![(*input, ops::l2_normalize_pixels_backward(val(*input), *eps, g))]
            }
            Op::Softmax { input } => vec![(*input, ops::softmax_channels_backward(&node.value, g))],
            Op::Reshape { input } => vec![(*input, g.to_vec())],
        };
        Ok(out)
    }
}

fn crop_slice(dims: (usize, usize, usize, usize), win: Window, g: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = dims;
    let mut out = Vec::with_capacity(n * c * win.height * win.width);
    for plane in 0..n * c {
        for y in win.y0..win.y0 + win.height {
            let row = (plane * h + y) * w;
            out.extend_from_slice(&g[row + win.x0..row + win.x0 + win.width]);
        }
    }
    out
}
