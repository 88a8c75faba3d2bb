//! Instantiated networks and their forward passes.

use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::{Head, Layout, ModelConfig, ModelSpec, Task};
use super::input::{extract_window, Inputs};
use crate::autograd::{Tape, Var};
use crate::config::parse_kv;
use crate::data::{Checkpoint, Sample};
use crate::error::{Error, Result};
use crate::ops::{concat_channels, softmax_channels, ConvGeom, Window};
use crate::tensor::Tensor;

const NORMALIZE_EPS: f64 = 1e-12;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    /// e.g. `2.3.weight` or `normals:3.1.bias`.
    pub name: String,
    /// Layer name without the `.weight`/`.bias` suffix.
    pub layer: String,
    pub scale: u8,
    pub lr_mult: f64,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How far a recorded forward pass goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Stop at the scale-2 prediction (phase-1 training).
    Scale2,
    /// Run every active scale.
    Full,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Output of a forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// Tape variable per parameter, `None` when the pass did not use it.
    pub params: Vec<Option<Var>>,
    /// Finalized prediction per head: log-depth, unit normals, or raw class
    /// scores.
    pub heads: Vec<(Head, Var)>,
}

/// Creates parameters lazily, as differentiable leaves when `trainable`
/// says so and as constants otherwise.
struct Binder<'m, F> {
    model: &'m Model,
    vars: Vec<Option<Var>>,
    trainable: F,
}

impl<F: Fn(&Param) -> bool> Binder<'_, F> {
    fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        let &i = self
            .model
            .index
            .get(name)
            .ok_or_else(|| Error::config(name, "parameter missing from model"))?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let p = &self.model.params[i];
        let v = if (self.trainable)(p) {
            tape.variable(p.tensor.clone())
        } else {
            tape.constant(p.tensor.clone())
        };
        self.vars[i] = Some(v);
        Ok(v)
    }

    fn conv(&mut self, tape: &mut Tape, x: Var, layer: &str, geom: ConvGeom, relu: bool, pool: Option<(usize, usize)>) -> Result<Var> {
        let w = self.get(tape, &format!("{layer}.weight"))?;
        let b = self.get(tape, &format!("{layer}.bias"))?;
        let mut y = tape.conv2d(x, w, b, geom, layer)?;
        if relu {
            y = tape.relu(y);
        }
        if let Some((k, s)) = pool {
            y = tape.maxpool(y, k, s)?;
        }
        Ok(y)
    }

    fn linear(&mut self, tape: &mut Tape, x: Var, layer: &str) -> Result<Var> {
        let w = self.get(tape, &format!("{layer}.weight"))?;
        let b = self.get(tape, &format!("{layer}.bias"))?;
        tape.linear(x, w, b)
    }
}

/// Instantiates `spec` with weights drawn from `uniform(±sqrt(3 / fan_in))`
/// and zero biases.
pub fn build_model<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Model> {
    let config = ModelConfig::resolve(spec)?;
    let layout = config.layout()?;
    let mut params = Vec::with_capacity(layout.params.len());
    for shape in &layout.params {
        let n: usize = shape.dims.iter().product();
        let data = if shape.fan_in == 0 {
            vec![0.0; n]
        } else {
            let a = (3.0 / shape.fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        let layer = shape.name.rsplit_once('.').map_or(shape.name.as_str(), |(l, _)| l).to_string();
        params.push(Param {
            lr_mult: config.lr_mult(&layer),
            name: shape.name.clone(),
            layer,
            scale: shape.scale,
            tensor: Tensor::from_vec(&shape.dims, data)?,
        });
    }
    Model::assemble(config, layout, params)
}

fn finalize(tape: &mut Tape, head: Head, v: Var) -> Result<Var> {
    match head {
        Head::Normals => tape.l2_normalize(v, NORMALIZE_EPS),
        Head::Depth | Head::Semantic(_) => Ok(v),
    }
}

impl Model {
    fn assemble(config: ModelConfig, layout: Layout, params: Vec<Param>) -> Result<Self> {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(Model { config, layout, params, index })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.config.spec
    }

    pub fn task(&self) -> Task {
        self.config.spec.task
    }

    /// Layer-by-layer shape plan.
    pub fn plan(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// SHA-256 over the names and bytes of every parameter in `scales`.
    pub fn digest(&self, scales: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| scales.contains(&p.scale)) {
            h.update(p.name.as_bytes());
            p.tensor.data().iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        h.finalize().into()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            text: self.spec().to_kv(),
            tensors: self.params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect(),
        }
    }

    /// Rebuilds a model from the `model.*` keys and named tensors of `ck`;
    /// other keys and tensors are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec = ModelSpec::from_kv(&parse_kv(&ck.text)?)?;
        let config = ModelConfig::resolve(&spec)?;
        let layout = config.layout()?;
        let mut params = Vec::with_capacity(layout.params.len());
        for shape in &layout.params {
            let t = ck
                .get(&shape.name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter `{}`", shape.name)))?;
            if t.dims() != shape.dims.as_slice() {
                return Err(Error::Validation(format!(
                    "parameter `{}` has dims {:?}, expected {:?}",
                    shape.name,
                    t.dims(),
                    shape.dims
                )));
            }
            let layer = shape.name.rsplit_once('.').map_or(shape.name.as_str(), |(l, _)| l).to_string();
            params.push(Param {
                lr_mult: config.lr_mult(&layer),
                name: shape.name.clone(),
                layer,
                scale: shape.scale,
                tensor: t.clone(),
            });
        }
        Self::assemble(config, layout, params)
    }

    fn check_inputs(&self, inputs: &Inputs) -> Result<()> {
        if inputs.size() != self.spec().input {
            return Err(Error::Input(format!(
                "input is {}x{}, model expects {}x{}",
                inputs.size().0,
                inputs.size().1,
                self.spec().input.0,
                self.spec().input.1
            )));
        }
        for &m in &self.spec().modalities {
            inputs.get(m)?;
        }
        Ok(())
    }

    fn coarse<F: Fn(&Param) -> bool, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_, F>,
        rgb: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let cfg = &self.config;
        let mut x = rgb;
        for l in &cfg.coarse {
            x = b.conv(tape, x, &l.name, l.geom, l.relu, l.pool)?;
        }
        x = b.linear(tape, x, "1.6")?;
        x = tape.relu(x);
        x = tape.dropout(x, cfg.dropout16, rng, mode == Mode::Train)?;
        x = b.linear(tape, x, "1.7")?;
        let n = tape.value(x).dims()[0];
        let per_cell = tape.value(x).len() / (n * cfg.grid.0 * cfg.grid.1);
        x = tape.reshape(x, &[n, per_cell, cfg.grid.1, cfg.grid.0])?;
        x = tape.upsample(x, cfg.coarse_upsample)?;
        tape.crop(
            x,
            Window { y0: cfg.coarse_crop.1, x0: cfg.coarse_crop.0, height: cfg.s2.height, width: cfg.s2.width },
        )
    }

    fn scale2<F: Fn(&Param) -> bool>(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_, F>,
        prefix: &str,
        head: Head,
        inputs: &[Var],
        coarse: Option<Var>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let e = &cfg.entry2;
        let mut parts = Vec::new();
        for ((_, name), &x) in cfg.entry_names(2, prefix).iter().zip(inputs) {
            let y = b.conv(tape, x, name, e.geom, true, e.pool)?;
            parts.push(tape.crop(y, Window { y0: e.crop.1, x0: e.crop.0, height: cfg.s2.height, width: cfg.s2.width })?);
        }
        parts.extend(coarse);
        let mut x = tape.concat(&parts)?;
        for l in &cfg.scale2_mid {
            x = b.conv(tape, x, &format!("{prefix}{}", l.name), l.geom, true, None)?;
        }
        let k = cfg.scale2_out_kernel;
        let last = format!("{prefix}2.{}", cfg.scale2_mid.len() + 2);
        x = b.conv(tape, x, &last, ConvGeom::square(k, 1, k / 2), false, None)?;
        finalize(tape, head, x)
    }

    /// Scale 3 over a window of its plane. `entries` are the per-modality
    /// inputs the entry convolution sees (full inputs, or windows with the
    /// padding built in when `entry_geom.pad == 0`).
    #[allow(clippy::too_many_arguments)]
    fn scale3<F: Fn(&Param) -> bool>(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_, F>,
        prefix: &str,
        head: Head,
        entries: &[Var],
        entry_geom: ConvGeom,
        entry_win: Window,
        s2: Var,
        up_win: Window,
    ) -> Result<Var> {
        let cfg = &self.config;
        let mut parts = Vec::new();
        for ((_, name), &x) in cfg.entry_names(3, prefix).iter().zip(entries) {
            let y = b.conv(tape, x, name, entry_geom, true, cfg.entry3.pool)?;
            parts.push(tape.crop(y, entry_win)?);
        }
        // Class scores enter scale 3 as probabilities.
        let s2 = if matches!(head, Head::Semantic(_)) { tape.softmax(s2) } else { s2 };
        let up = tape.upsample(s2, cfg.s2_upsample)?;
        parts.push(tape.crop(up, up_win)?);
        let mut x = tape.concat(&parts)?;
        for l in &cfg.scale3_mid {
            x = b.conv(tape, x, &format!("{prefix}{}", l.name), l.geom, true, None)?;
        }
        let k = cfg.scale3_out_kernel;
        let last = format!("{prefix}3.{}", cfg.scale3_mid.len() + 2);
        x = b.conv(tape, x, &last, ConvGeom::square(k, 1, k / 2), false, None)?;
        finalize(tape, head, x)
    }

    /// Records a forward pass. Parameters for which `trainable` holds become
    /// differentiable leaves; all others, and the inputs, are constants.
    pub fn record<F, R>(&self, tape: &mut Tape, inputs: &Inputs, mode: Mode, rng: &mut R, depth: Depth, trainable: F) -> Result<Recorded>
    where
        F: Fn(&Param) -> bool,
        R: Rng + ?Sized,
    {
        self.check_inputs(inputs)?;
        let cfg = &self.config;
        let scales = cfg.spec.scales;
        let mut b = Binder { model: self, vars: vec![None; self.params.len()], trainable };
        let input_vars: Vec<Var> = cfg
            .spec
            .modalities
            .iter()
            .map(|&m| Ok(tape.constant(inputs.get(m)?.clone())))
            .collect::<Result<_>>()?;
        let coarse = if scales.has(1) {
            Some(self.coarse(tape, &mut b, input_vars[0], mode, rng)?)
        } else {
            None
        };
        let mut heads = Vec::new();
        if !scales.has(2) {
            let (_, head) = cfg.spec.task.heads()[0];
            let out = finalize(tape, head, coarse.expect("scale 1 active"))?;
            heads.push((head, out));
        } else {
            for (prefix, head) in cfg.spec.task.heads() {
                let mut out = self.scale2(tape, &mut b, prefix, head, &input_vars, coarse)?;
                if scales.has(3) && depth == Depth::Full {
                    let (w3, h3) = (cfg.s3.width, cfg.s3.height);
                    let entry_win = Window { y0: cfg.entry3.crop.1, x0: cfg.entry3.crop.0, height: h3, width: w3 };
                    let up_win = Window { y0: cfg.s2_up_crop.1, x0: cfg.s2_up_crop.0, height: h3, width: w3 };
                    out = self.scale3(tape, &mut b, prefix, head, &input_vars, cfg.entry3.geom, entry_win, out, up_win)?;
                }
                heads.push((head, out));
            }
        }
        Ok(Recorded { params: b.vars, heads })
    }

    /// Records scale 3 alone over the `size` window at `origin` of the
    /// scale-3 plane, given finalized scale-2 outputs (one per head).
    ///
    /// The entry convolution sees the exact zero-padded input window, so its
    /// output matches the full pass; the following 5×5 layers zero-pad at the
    /// window edge, so agreement with the full pass holds at least
    /// [`Model::crop_margin`] pixels inside the window.
    pub fn record_scale3_crop<F>(
        &self,
        tape: &mut Tape,
        inputs: &Inputs,
        scale2: &[Tensor],
        origin: (usize, usize),
        size: (usize, usize),
        trainable: F,
    ) -> Result<Recorded>
    where
        F: Fn(&Param) -> bool,
    {
        self.check_inputs(inputs)?;
        let cfg = &self.config;
        if !cfg.spec.scales.has(3) {
            return Err(Error::config("3.1", "model has no scale 3"));
        }
        let (x0, y0) = origin;
        let (cw, ch) = size;
        if cw == 0 || ch == 0 || x0 + cw > cfg.s3.width || y0 + ch > cfg.s3.height {
            return Err(Error::Input(format!(
                "crop {cw}x{ch} at ({x0},{y0}) outside the {}x{} scale-3 plane",
                cfg.s3.width, cfg.s3.height
            )));
        }
        let heads = cfg.spec.task.heads();
        if scale2.len() != heads.len() {
            return Err(Error::Input(format!("{} scale-2 outputs for {} heads", scale2.len(), heads.len())));
        }
        if cfg.entry3.pool.is_some() {
            return Err(Error::config("3.1", "cropped scale 3 needs an entry convolution without pooling"));
        }
        let g = cfg.entry3.geom;
        let ax = (x0 + cfg.entry3.crop.0) as isize * g.stride as isize - g.pad as isize;
        let ay = (y0 + cfg.entry3.crop.1) as isize * g.stride as isize - g.pad as isize;
        let ww = g.stride * (cw - 1) + g.kernel_w;
        let wh = g.stride * (ch - 1) + g.kernel_h;
        let mut b = Binder { model: self, vars: vec![None; self.params.len()], trainable };
        let entries: Vec<Var> = cfg
            .spec
            .modalities
            .iter()
            .map(|&m| Ok(tape.constant(extract_window(inputs.get(m)?, ax, ay, ww, wh))))
            .collect::<Result<_>>()?;
        let geom = ConvGeom { pad: 0, ..g };
        let entry_win = Window { y0: 0, x0: 0, height: ch, width: cw };
        let up_win = Window { y0: cfg.s2_up_crop.1 + y0, x0: cfg.s2_up_crop.0 + x0, height: ch, width: cw };
        let mut out = Vec::new();
        for ((prefix, head), s2) in heads.into_iter().zip(scale2) {
            let (_, c, h, w) = s2.nchw();
            if (c, h, w) != (head.channels(), cfg.s2.height, cfg.s2.width) || s2.nchw().0 != inputs.batch() {
                return Err(Error::Input(format!("scale-2 output dims {:?} do not match the model", s2.dims())));
            }
            let s2v = tape.constant(s2.clone());
            let v = self.scale3(tape, &mut b, prefix, head, &entries, geom, entry_win, s2v, up_win)?;
            out.push((head, v));
        }
        Ok(Recorded { params: b.vars, heads: out })
    }

    /// Border width (pixels) inside which a cropped scale-3 pass may differ
    /// from the full pass: half a kernel per zero-padded layer after 3.1.
    pub fn crop_margin(&self) -> usize {
        self.config.scale3_mid.iter().map(|l| l.geom.kernel_w / 2).sum::<usize>() + self.config.scale3_out_kernel / 2
    }

    /// Finalized head outputs (semantic heads as raw scores).
    pub fn forward_heads<R: Rng + ?Sized>(&self, inputs: &Inputs, mode: Mode, rng: &mut R, depth: Depth) -> Result<Vec<(Head, Tensor)>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, inputs, mode, rng, depth, |_| false)?;
        Ok(rec.heads.iter().map(|&(h, v)| (h, tape.value(v).clone())).collect())
    }

    /// C-channel prediction at the deepest active scale: log-depth, unit
    /// normals and/or class probabilities, concatenated in head order.
    pub fn forward_full<R: Rng + ?Sized>(&self, samples: &[Sample], mode: Mode, rng: &mut R) -> Result<Tensor> {
        let inputs = Inputs::from_samples(samples, &self.spec().modalities)?;
        let heads = self.forward_heads(&inputs, mode, rng, Depth::Full)?;
        let parts: Vec<Tensor> = heads
            .into_iter()
            .map(|(h, t)| if matches!(h, Head::Semantic(_)) { softmax_channels(&t) } else { t })
            .collect();
        concat_channels(&parts.iter().collect::<Vec<_>>())
    }

    /// Eval-mode scale-3 pass over a crop of the plane, from finalized
    /// scale-2 outputs; returns one map per head.
    pub fn forward_scale3_crop(&self, samples: &[Sample], scale2: &[Tensor], origin: (usize, usize), size: (usize, usize)) -> Result<Vec<Tensor>> {
        let inputs = Inputs::from_samples(samples, &self.spec().modalities)?;
        let mut tape = Tape::new();
        let rec = self.record_scale3_crop(&mut tape, &inputs, scale2, origin, size, |_| false)?;
        Ok(rec.heads.iter().map(|&(_, v)| tape.value(v).clone()).collect())
    }

    /// One scale-1 evaluation feeding both the depth and normals stacks.
    pub fn shared_trunk_forward(&self, samples: &[Sample]) -> Result<(Tensor, Tensor)> {
        if self.task() != Task::DepthNormals {
            return Err(Error::Input(format!("shared trunk needs the depth+normals task, model is {}", self.task())));
        }
        let inputs = Inputs::from_samples(samples, &self.spec().modalities)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut heads = self.forward_heads(&inputs, Mode::Eval, &mut rng, Depth::Full)?.into_iter();
        let (_, d) = heads.next().expect("depth head");
        let (_, n) = heads.next().expect("normals head");
        Ok((d, n))
    }
}
