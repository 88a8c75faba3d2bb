//! Two-phase SGD training and evaluation.
//!
//! Phase 1 trains scales 1 and 2 jointly on full images. Phase 2 freezes
//! them and trains scale 3 on random crops of its plane.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_augment, sample_params, AugmentConfig};
use crate::autograd::{Tape, Var};
use crate::config::parse_kv;
use crate::data::{Checkpoint, Sample};
use crate::error::{Error, Result};
use crate::losses::{depth_loss, median_freq_weights, normals_loss, semantic_loss, ClassWeights, LossOutput};
use crate::maps::{normalize3, DepthMap, Grid, LabelMap, NormalMap};
use crate::metrics::{ConfusionMatrix, DepthAccumulator, MetricReport, NormalAccumulator};
use crate::model::{plane_targets, resample_to_input, Depth, Head, Inputs, Mode, Model, PlaneTargets, Recorded, Task};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// Base learning rate of phase 2.
    pub phase2_lr: f64,
    pub momentum: f64,
    /// Phase-1 step at which the learning rate drops (inclusive).
    pub lr_step_at: u64,
    pub lr_step_factor: f64,
    /// Phase-2 counterpart of `lr_step_at`, counted from the phase start.
    pub phase2_lr_step_at: u64,
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Median-frequency class weights for the semantic loss.
    pub class_weights: bool,
    /// Phase-2 crop (width, height) on the scale-3 plane; `None` uses the
    /// scale-2 plane size.
    pub crop: Option<(usize, usize)>,
    /// Write a checkpoint every this many steps (0 = never).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            base_lr: 0.003,
            phase2_lr: 0.0015,
            momentum: 0.9,
            lr_step_at: 1500,
            lr_step_factor: 0.1,
            phase2_lr_step_at: 750,
            phase1_steps: 2000,
            phase2_steps: 1000,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            class_weights: true,
            crop: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the task's learning-rate preset: normals train at 10×
    /// the depth rate.
    pub fn for_task(task: Task) -> Self {
        let mut c = TrainConfig::default();
        if task == Task::Normals {
            c.base_lr *= 10.0;
            c.phase2_lr *= 10.0;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        for lr in [self.base_lr, self.phase2_lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("learning rate must be finite and >= 0, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_step_factor > 0.0 && self.lr_step_factor.is_finite()) {
            return bad(format!("lr step factor must be positive, got {}", self.lr_step_factor));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let Some((w, h)) = self.crop {
            if w == 0 || h == 0 {
                return bad("crop must be non-empty".into());
            }
        }
        Ok(())
    }

    /// `train.*` and `augment.*` lines of a config file.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "train.batch={}", self.batch_size);
        let _ = writeln!(s, "train.lr={}", self.base_lr);
        let _ = writeln!(s, "train.phase2_lr={}", self.phase2_lr);
        let _ = writeln!(s, "train.momentum={}", self.momentum);
        let _ = writeln!(s, "train.lr_step_at={}", self.lr_step_at);
        let _ = writeln!(s, "train.lr_step_factor={}", self.lr_step_factor);
        let _ = writeln!(s, "train.phase2_lr_step_at={}", self.phase2_lr_step_at);
        let _ = writeln!(s, "train.phase1_steps={}", self.phase1_steps);
        let _ = writeln!(s, "train.phase2_steps={}", self.phase2_steps);
        let _ = writeln!(s, "train.seed={}", self.seed);
        let _ = writeln!(s, "train.class_weights={}", self.class_weights);
        if let Some((w, h)) = self.crop {
            let _ = writeln!(s, "train.crop={w}x{h}");
        }
        let _ = writeln!(s, "train.checkpoint_every={}", self.checkpoint_every);
        match &self.augment {
            None => s += "augment.enabled=false\n",
            Some(a) => {
                s += "augment.enabled=true\n";
                let _ = writeln!(s, "augment.scale={},{}", a.scale.0, a.scale.1);
                let _ = writeln!(s, "augment.rotation_deg={},{}", a.rotation_deg.0, a.rotation_deg.1);
                let _ = writeln!(s, "augment.translation={}", a.max_translation);
                let _ = writeln!(s, "augment.gain={},{}", a.gain.0, a.gain.1);
                let _ = writeln!(s, "augment.contrast={},{}", a.contrast.0, a.contrast.1);
                let _ = writeln!(s, "augment.flip={}", a.flip_prob);
            }
        }
        s
    }

    /// Reads `train.*` and `augment.*` keys over the defaults; unknown keys
    /// in those sections are rejected.
    pub fn from_kv(kv: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut aug = AugmentConfig::default();
        let mut aug_on = true;
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "train.batch" => c.batch_size = num(k, v)?,
                "train.lr" => c.base_lr = num(k, v)?,
                "train.phase2_lr" => c.phase2_lr = num(k, v)?,
                "train.momentum" => c.momentum = num(k, v)?,
                "train.lr_step_at" => c.lr_step_at = num(k, v)?,
                "train.lr_step_factor" => c.lr_step_factor = num(k, v)?,
                "train.phase2_lr_step_at" => c.phase2_lr_step_at = num(k, v)?,
                "train.phase1_steps" => c.phase1_steps = num(k, v)?,
                "train.phase2_steps" => c.phase2_steps = num(k, v)?,
                "train.seed" => c.seed = num(k, v)?,
                "train.class_weights" => c.class_weights = num(k, v)?,
                "train.crop" => c.crop = Some(crate::model::parse_size(v)?),
                "train.checkpoint_every" => c.checkpoint_every = num(k, v)?,
                "augment.enabled" => aug_on = num(k, v)?,
                "augment.scale" => aug.scale = pair(k, v)?,
                "augment.rotation_deg" => aug.rotation_deg = pair(k, v)?,
                "augment.translation" => aug.max_translation = num(k, v)?,
                "augment.gain" => aug.gain = pair(k, v)?,
                "augment.contrast" => aug.contrast = pair(k, v)?,
                "augment.flip" => aug.flip_prob = num(k, v)?,
                other if other.starts_with("train.") || other.starts_with("augment.") => {
                    return Err(Error::Input(format!("unknown config key `{other}`")))
                }
                _ => {}
            }
        }
        c.augment = aug_on.then_some(aug);
        c.validate()?;
        Ok(c)
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Input(format!("bad value `{v}` for `{key}`")))
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v.split_once(',').ok_or_else(|| Error::Input(format!("`{key}` needs lo,hi")))?;
    Ok((num(key, a)?, num(key, b)?))
}

/// Global learning rate at a step counted from the start of `phase`: the
/// phase's base rate before its step boundary, times `lr_step_factor` from
/// the boundary on.
pub fn lr_at_step(step: u64, config: &TrainConfig, phase: Phase) -> f64 {
    let (base, at) = match phase {
        Phase::One => (config.base_lr, config.lr_step_at),
        Phase::Two => (config.phase2_lr, config.phase2_lr_step_at),
    };
    if step >= at {
        base * config.lr_step_factor
    } else {
        base
    }
}

/// Momentum SGD on every parameter with a gradient:
/// `v ← μv − lr·mult·g`, `w ← w + v`. Nothing is modified when any gradient
/// is non-finite.
pub fn sgd_update(model: &mut Model, grads: &[Option<Vec<f64>>], velocity: &mut [Vec<f64>], lr: f64, momentum: f64) -> Result<()> {
    let n = model.params().len();
    if grads.len() != n || velocity.len() != n {
        return Err(Error::Input(format!("{} gradients and {} momentum buffers for {n} parameters", grads.len(), velocity.len())));
    }
    for (p, g) in model.params().iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.tensor.len() {
                return Err(Error::Input(format!("gradient for `{}` has {} entries, expected {}", p.name, g.len(), p.tensor.len())));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: p.layer.clone(), msg: format!("gradient of `{}` is {} at index {i}", p.name, g[i]) });
            }
        }
    }
    for ((p, g), v) in model.params_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let Some(g) = g else { continue };
        if v.is_empty() {
            *v = vec![0.0; g.len()];
        }
        let step = lr * p.lr_mult;
        for ((w, vi), gi) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi - step * gi;
            *w += *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// `step,loss,lr` with a header row.
pub fn loss_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{}", p.step, p.loss, p.lr);
    }
    s
}

/// Optimizer progress: counters, momentum buffers, the loss curve and the
/// random stream.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Steps taken over both phases.
    pub step: u64,
    pub phase1_done: u64,
    pub phase2_done: u64,
    /// Per parameter, empty until first updated.
    pub velocity: Vec<Vec<f64>>,
    pub curve: Vec<LossPoint>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model, seed: u64) -> Self {
        TrainState {
            step: 0,
            phase1_done: 0,
            phase2_done: 0,
            velocity: vec![Vec::new(); model.params().len()],
            curve: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Model checkpoint extended with optimizer state and the run config.
    pub fn to_checkpoint(&self, model: &Model, config: &TrainConfig) -> Result<Checkpoint> {
        let mut ck = model.to_checkpoint();
        ck.text += &config.to_kv();
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let _ = write!(
            ck.text,
            "state.step={}\nstate.phase1_done={}\nstate.phase2_done={}\nstate.rng_seed={seed}\nstate.rng_stream={}\nstate.rng_word_pos={}\n",
            self.step,
            self.phase1_done,
            self.phase2_done,
            self.rng.get_stream(),
            self.rng.get_word_pos()
        );
        for (p, v) in model.params().iter().zip(&self.velocity) {
            if !v.is_empty() {
                ck.tensors.push((format!("momentum/{}", p.name), Tensor::from_vec(p.tensor.dims(), v.clone())?));
            }
        }
        Ok(ck)
    }

    /// Restores model, run config and optimizer state written by
    /// [`TrainState::to_checkpoint`]. The loss curve starts empty.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, TrainConfig, TrainState)> {
        let model = Model::from_checkpoint(ck)?;
        let kv = parse_kv(&ck.text)?;
        let config = TrainConfig::from_kv(&kv)?;
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Validation(format!("checkpoint lacks `{k}`")));
        let hex = get("state.rng_seed")?;
        if hex.len() != 64 {
            return Err(Error::Validation("state.rng_seed must be 64 hex digits".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| Error::Validation("state.rng_seed is not hex".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(num("state.rng_stream", get("state.rng_stream")?)?);
        rng.set_word_pos(num("state.rng_word_pos", get("state.rng_word_pos")?)?);
        let mut velocity = Vec::with_capacity(model.params().len());
        for p in model.params() {
            velocity.push(match ck.get(&format!("momentum/{}", p.name)) {
                Some(t) if t.dims() == p.tensor.dims() => t.data().to_vec(),
                Some(_) => return Err(Error::Validation(format!("momentum for `{}` has the wrong shape", p.name))),
                None => Vec::new(),
            });
        }
        let state = TrainState {
            step: num("state.step", get("state.step")?)?,
            phase1_done: num("state.phase1_done", get("state.phase1_done")?)?,
            phase2_done: num("state.phase2_done", get("state.phase2_done")?)?,
            velocity,
            curve: Vec::new(),
            rng,
        };
        Ok((model, config, state))
    }
}

/// Loss of one head over the images that have valid targets; images with
/// an empty mask get zero gradient.
fn head_loss(head: Head, pred: &Tensor, targets: &[&PlaneTargets], weights: Option<&ClassWeights>) -> Result<Option<LossOutput>> {
    let valid: Vec<usize> = (0..targets.len())
        .filter(|&i| match head {
            Head::Depth => targets[i].depth.mask.count() > 0,
            Head::Normals => targets[i].normals.mask.count() > 0,
            Head::Semantic(_) => targets[i].labels.mask.count() > 0,
        })
        .collect();
    if valid.is_empty() {
        return Ok(None);
    }
    let all = valid.len() == targets.len();
    let sub = if all { pred.clone() } else { Tensor::stack(&valid.iter().map(|&i| pred.batch_item(i)).collect::<Vec<_>>())? };
    let out = match head {
        Head::Depth => depth_loss(&sub, &valid.iter().map(|&i| targets[i].depth.clone()).collect::<Vec<_>>())?,
        Head::Normals => normals_loss(&sub, &valid.iter().map(|&i| targets[i].normals.clone()).collect::<Vec<_>>())?,
        Head::Semantic(_) => semantic_loss(&sub, &valid.iter().map(|&i| targets[i].labels.clone()).collect::<Vec<_>>(), weights)?,
    };
    if all {
        return Ok(Some(out));
    }
    let per = pred.len() / targets.len();
    let mut grad = vec![0.0; pred.len()];
    for (j, &i) in valid.iter().enumerate() {
        grad[i * per..(i + 1) * per].copy_from_slice(&out.grad.data()[j * per..(j + 1) * per]);
    }
    Ok(Some(LossOutput { value: out.value, grad: Tensor::from_vec(pred.dims(), grad)? }))
}

/// Backpropagates the summed head losses; returns the total loss and the
/// gradient of every parameter bound as a variable.
fn backprop(tape: &mut Tape, rec: &Recorded, targets: &[&PlaneTargets], weights: Option<&ClassWeights>) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut total = 0.0;
    let mut any = false;
    for &(head, v) in &rec.heads {
        if let Some(out) = head_loss(head, tape.value(v), targets, weights)? {
            total += out.value;
            any = true;
            tape.backward(v, out.grad.data())?;
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    let grads = rec
        .params
        .iter()
        .map(|v| v.filter(|&v| tape.requires_grad(v)).map(|v| param_grad(tape, v)))
        .collect();
    Ok((total, grads))
}

fn param_grad(tape: &Tape, v: Var) -> Vec<f64> {
    tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)
}

/// Drives both training phases over an in-memory dataset.
pub struct Trainer<'a> {
    pub model: &'a mut Model,
    pub config: TrainConfig,
    pub state: TrainState,
    weights: Option<ClassWeights>,
    checkpoint_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Model, config: TrainConfig, data: &[Sample]) -> Result<Self> {
        let state = TrainState::new(model, config.seed);
        Self::resume(model, config, state, data)
    }

    pub fn resume(model: &'a mut Model, config: TrainConfig, state: TrainState, data: &[Sample]) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        if state.velocity.len() != model.params().len() {
            return Err(Error::Input("train state does not belong to this model".into()));
        }
        let (w, h) = model.spec().input;
        if let Some(s) = data.iter().find(|s| (s.width(), s.height()) != (w, h)) {
            return Err(Error::Input(format!("sample is {}x{}, model expects {w}x{h}", s.width(), s.height())));
        }
        let weights = match model.task() {
            Task::Semantic(k) if config.class_weights => Some(median_freq_weights(data.iter().map(|s| &s.labels), k)?),
            Task::Semantic(k) => {
                if let Some(l) = data.iter().flat_map(|s| s.labels.labels.as_slice()).find(|&&l| l as usize >= k) {
                    return Err(Error::Input(format!("label {l} out of range for {k} classes")));
                }
                None
            }
            _ => None,
        };
        Ok(Trainer { model, config, state, weights, checkpoint_dir: None })
    }

    /// Writes `step_<n>.ckpt` files into `dir` every
    /// `config.checkpoint_every` steps.
    pub fn with_checkpoints(mut self, dir: impl AsRef<Path>) -> Self {
        self.checkpoint_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn class_weights(&self) -> Option<&ClassWeights> {
        self.weights.as_ref()
    }

    fn draw_batch(&mut self, data: &[Sample]) -> Result<Vec<Sample>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for &i in order.iter().cycle().take(self.config.batch_size) {
            batch.push(match &self.config.augment {
                Some(cfg) => {
                    let p = sample_params(&mut self.state.rng, cfg, data[i].width(), data[i].height())?;
                    apply_augment(&data[i], &p)?
                }
                None => data[i].clone(),
            });
        }
        Ok(batch)
    }

    fn classes(&self) -> usize {
        self.model.task().classes().unwrap_or(0)
    }

    /// One phase-1 step; returns the batch loss before the update.
    pub fn step_phase1(&mut self, data: &[Sample]) -> Result<f64> {
        let batch = self.draw_batch(data)?;
        let lr = lr_at_step(self.state.phase1_done, &self.config, Phase::One);
        let plane = self.model.config().s2;
        let targets: Vec<PlaneTargets> = batch.iter().map(|s| plane_targets(s, &plane, self.classes())).collect();
        let inputs = Inputs::from_samples(&batch, &self.model.spec().modalities)?;
        let mut tape = Tape::new();
        let rec = self.model.record(&mut tape, &inputs, Mode::Train, &mut self.state.rng, Depth::Scale2, |p| p.scale <= 2)?;
        let (loss, grads) = backprop(&mut tape, &rec, &targets.iter().collect::<Vec<_>>(), self.weights.as_ref())?;
        drop(tape);
        sgd_update(self.model, &grads, &mut self.state.velocity, lr, self.config.momentum)?;
        self.finish_step(loss, lr)?;
        self.state.phase1_done += 1;
        Ok(loss)
    }

    /// One phase-2 step: eval-mode scales 1–2 on full images, then scale 3
    /// on a random crop of its plane shared across the batch.
    pub fn step_phase2(&mut self, data: &[Sample]) -> Result<f64> {
        let cfg = self.model.config().clone();
        if !cfg.spec.scales.has(3) {
            return Err(Error::config("3.1", "phase 2 needs a model with scale 3"));
        }
        let (cw, ch) = self.config.crop.unwrap_or((cfg.s2.width, cfg.s2.height));
        if cw > cfg.s3.width || ch > cfg.s3.height {
            return Err(Error::config(
                "3.1",
                format!("crop {cw}x{ch} larger than the {}x{} scale-3 plane", cfg.s3.width, cfg.s3.height),
            ));
        }
        let batch = self.draw_batch(data)?;
        let lr = lr_at_step(self.state.phase2_done, &self.config, Phase::Two);
        let x0 = self.state.rng.gen_range(0..=cfg.s3.width - cw);
        let y0 = self.state.rng.gen_range(0..=cfg.s3.height - ch);
        let inputs = Inputs::from_samples(&batch, &cfg.spec.modalities)?;
        let s2: Vec<Tensor> = self
            .model
            .forward_heads(&inputs, Mode::Eval, &mut self.state.rng, Depth::Scale2)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let targets: Vec<PlaneTargets> = batch
            .iter()
            .map(|s| plane_targets(s, &cfg.s3, self.classes()).window(x0, y0, cw, ch))
            .collect();
        let mut tape = Tape::new();
        let rec = self.model.record_scale3_crop(&mut tape, &inputs, &s2, (x0, y0), (cw, ch), |p| p.scale == 3)?;
        let (loss, grads) = backprop(&mut tape, &rec, &targets.iter().collect::<Vec<_>>(), self.weights.as_ref())?;
        drop(tape);
        sgd_update(self.model, &grads, &mut self.state.velocity, lr, self.config.momentum)?;
        self.finish_step(loss, lr)?;
        self.state.phase2_done += 1;
        Ok(loss)
    }

    fn finish_step(&mut self, loss: f64, lr: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFinite { layer: "loss".into(), msg: format!("loss is {loss} at step {}", self.state.step) });
        }
        self.state.curve.push(LossPoint { step: self.state.step, loss, lr });
        self.state.step += 1;
        if self.config.checkpoint_every > 0 && self.state.step % self.config.checkpoint_every == 0 {
            if let Some(dir) = &self.checkpoint_dir {
                let ck = self.state.to_checkpoint(self.model, &self.config)?;
                ck.write(dir.join(format!("step_{}.ckpt", self.state.step)))?;
            }
        }
        if self.state.step % 100 == 0 {
            log::info!("step {} loss {loss:.5} lr {lr}", self.state.step);
        }
        Ok(())
    }

    /// Runs phase 1 until `config.phase1_steps` phase-1 steps are done.
    pub fn run_phase1(&mut self, data: &[Sample]) -> Result<()> {
        while self.state.phase1_done < self.config.phase1_steps {
            self.step_phase1(data)?;
        }
        Ok(())
    }

    /// Runs phase 2 until `config.phase2_steps` phase-2 steps are done.
    pub fn run_phase2(&mut self, data: &[Sample]) -> Result<()> {
        while self.state.phase2_done < self.config.phase2_steps {
            self.step_phase2(data)?;
        }
        Ok(())
    }

    /// Phase 1, then phase 2 when the model has scale 3.
    pub fn run(&mut self, data: &[Sample]) -> Result<()> {
        self.run_phase1(data)?;
        if self.model.spec().scales.has(3) {
            self.run_phase2(data)?;
        }
        Ok(())
    }
}

/// Eval-mode loss of `model` on `samples` against targets on the plane of
/// the pass selected by `depth`, without class weights.
pub fn batch_loss(model: &Model, samples: &[Sample], depth: Depth) -> Result<f64> {
    let cfg = model.config();
    let plane = if depth == Depth::Full { cfg.output_plane() } else { cfg.s2 };
    let classes = model.task().classes().unwrap_or(0);
    let targets: Vec<PlaneTargets> = samples.iter().map(|s| plane_targets(s, &plane, classes)).collect();
    let inputs = Inputs::from_samples(samples, &cfg.spec.modalities)?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let heads = model.forward_heads(&inputs, Mode::Eval, &mut rng, depth)?;
    let refs: Vec<&PlaneTargets> = targets.iter().collect();
    let mut total = 0.0;
    for (head, t) in heads {
        if let Some(out) = head_loss(head, &t, &refs, None)? {
            total += out.value;
        }
    }
    Ok(total)
}

/// Summed head loss and the gradient of every parameter, all scales
/// trainable. `rng` drives dropout in train mode.
pub fn loss_gradients<R: Rng + ?Sized>(
    model: &Model,
    samples: &[Sample],
    mode: Mode,
    rng: &mut R,
    depth: Depth,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let cfg = model.config();
    let plane = if depth == Depth::Full { cfg.output_plane() } else { cfg.s2 };
    let classes = model.task().classes().unwrap_or(0);
    let targets: Vec<PlaneTargets> = samples.iter().map(|s| plane_targets(s, &plane, classes)).collect();
    let inputs = Inputs::from_samples(samples, &cfg.spec.modalities)?;
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, &inputs, mode, rng, depth, |_| true)?;
    let (loss, grads) = backprop(&mut tape, &rec, &targets.iter().collect::<Vec<_>>(), None)?;
    let grads = grads
        .into_iter()
        .zip(model.params())
        .map(|(g, p)| g.unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect();
    Ok((loss, grads))
}

/// Phase-1 training from a fresh state; returns the loss curve.
pub fn train_phase1(model: &mut Model, data: &[Sample], config: &TrainConfig) -> Result<Vec<LossPoint>> {
    let mut t = Trainer::new(model, config.clone(), data)?;
    t.run_phase1(data)?;
    Ok(t.state.curve)
}

/// Phase-2 training from a fresh state; returns the loss curve.
pub fn train_phase2(model: &mut Model, data: &[Sample], config: &TrainConfig) -> Result<Vec<LossPoint>> {
    let mut t = Trainer::new(model, config.clone(), data)?;
    t.run_phase2(data)?;
    Ok(t.state.curve)
}

/// Per-pixel prediction at input resolution. Maps not produced by the
/// predictor are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub depth: Option<DepthMap>,
    pub normals: Option<NormalMap>,
    pub labels: Option<LabelMap>,
}

pub trait Predictor {
    fn predict(&self, batch: &[Sample]) -> Result<Vec<Prediction>>;
}

/// Echoes the ground truth; evaluates to perfect scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn predict(&self, batch: &[Sample]) -> Result<Vec<Prediction>> {
        Ok(batch
            .iter()
            .map(|s| Prediction { depth: Some(s.depth.clone()), normals: Some(s.normals.clone()), labels: Some(s.labels.clone()) })
            .collect())
    }
}

impl Predictor for Model {
    /// Eval-mode forward, then bilinear resampling of each head to input
    /// resolution: depth is exponentiated, normals renormalized and class
    /// scores arg-maxed (lowest class on ties).
    fn predict(&self, batch: &[Sample]) -> Result<Vec<Prediction>> {
        let inputs = Inputs::from_samples(batch, &self.spec().modalities)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let heads = self.forward_heads(&inputs, Mode::Eval, &mut rng, Depth::Full)?;
        let plane = self.config().output_plane();
        let (w, h) = self.spec().input;
        let mut out: Vec<Prediction> = (0..batch.len()).map(|_| Prediction { depth: None, normals: None, labels: None }).collect();
        for (head, t) in heads {
            let c = head.channels();
            for (b, pred) in out.iter_mut().enumerate() {
                let item = t.batch_item(b);
                let up = resample_to_input(item.data(), c, &plane, w, h);
                let at = |ch: usize, x: usize, y: usize| up[(ch * h + y) * w + x];
                match head {
                    Head::Depth => {
                        pred.depth = Some(DepthMap { depth: Grid::from_fn(w, h, |x, y| at(0, x, y).exp()), mask: Grid::filled(w, h, true) });
                    }
                    Head::Normals => {
                        let normals = Grid::from_fn(w, h, |x, y| normalize3([at(0, x, y), at(1, x, y), at(2, x, y)]).unwrap_or([0.0, 0.0, -1.0]));
                        pred.normals = Some(NormalMap { normals, mask: Grid::filled(w, h, true) });
                    }
                    Head::Semantic(k) => {
                        let labels = Grid::from_fn(w, h, |x, y| (0..k).fold(0, |best, ch| if at(ch, x, y) > at(best, x, y) { ch } else { best }) as u8);
                        pred.labels = Some(LabelMap { labels, mask: Grid::filled(w, h, true) });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Pooled metrics of `predictor` on `data`, one report per head of `task`.
pub fn evaluate(predictor: &dyn Predictor, data: &[Sample], task: Task, batch_size: usize) -> Result<Vec<MetricReport>> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut depth = DepthAccumulator::default();
    let mut normals = NormalAccumulator::default();
    let mut conf = ConfusionMatrix::new(task.classes().unwrap_or(0));
    let missing = |what: &str| Error::Input(format!("predictor produced no {what} map"));
    for chunk in data.chunks(batch_size.max(1)) {
        let preds = predictor.predict(chunk)?;
        for (p, s) in preds.iter().zip(chunk) {
            for (_, head) in task.heads() {
                match head {
                    Head::Depth => depth.add(p.depth.as_ref().ok_or_else(|| missing("depth"))?, &s.depth)?,
                    Head::Normals => normals.add(p.normals.as_ref().ok_or_else(|| missing("normals"))?, &s.normals)?,
                    Head::Semantic(_) => conf.add(p.labels.as_ref().ok_or_else(|| missing("label"))?, &s.labels)?,
                }
            }
        }
    }
    task.heads()
        .into_iter()
        .map(|(_, head)| match head {
            Head::Depth => depth.finish(),
            Head::Normals => normals.finish(),
            Head::Semantic(_) => conf.finish(),
        })
        .collect()
}
