//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{OpKind, Tape, Var};
use crate::data::dataset::generate_split;
use crate::data::{Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::losses::{depth_loss, normals_loss, semantic_loss, ClassWeights, LossOutput};
use crate::maps::{normalize3, DepthMap, Grid, LabelMap, NormalMap, ValidMask};
use crate::model::{build_model, Depth, Mode, Model, ModelSpec, Task};
use crate::ops::{ConvGeom, Window};
use crate::tensor::Tensor;
use crate::trainer::loss_gradients;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Denominator floor: entries where both gradients are below it are
    /// compared on an absolute scale of `floor`.
    pub floor: f64,
    /// Sign flip injected into the backward pass of one op family inside
    /// tape-built primitive checks; a negative control.
    pub fault: Option<OpKind>,
}

impl GradcheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradcheckOptions { tolerance, ..Self::default() }
    }
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Entry indices whose relative error exceeded the tolerance.
    pub flagged: Vec<usize>,
    /// Set when the function or either gradient produced NaN/Inf.
    pub non_finite: bool,
    /// Relative error of every checked entry, by entry index.
    pub errors: Vec<(usize, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.non_finite && self.flagged.is_empty() && self.max_rel_error.is_finite()
    }

    /// Merges another report (e.g. for a second parameter) into this one.
    pub fn merge(&mut self, other: &GradcheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.tolerance = self.tolerance.max(other.tolerance);
        let off = self.checked;
        self.flagged.extend(other.flagged.iter().map(|i| i + off));
        self.errors.extend(other.errors.iter().map(|&(i, e)| (i + off, e)));
        self.checked += other.checked;
        self.non_finite |= other.non_finite;
    }
}

/// Compares the analytic gradient returned by `f` with central differences
/// at every entry of `input`.
///
/// `f` must map an input to `(scalar, d scalar / d input)` deterministically.
pub fn gradcheck<F>(f: F, input: &Tensor, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: FnMut(&Tensor) -> Result<(f64, Vec<f64>)>,
{
    let all: Vec<usize> = (0..input.len()).collect();
    gradcheck_entries(f, input, &all, opts)
}

/// As [`gradcheck`], restricted to the listed entries.
pub fn gradcheck_entries<F>(mut f: F, input: &Tensor, entries: &[usize], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: FnMut(&Tensor) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(input)?;
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        tolerance: opts.tolerance,
        checked: entries.len(),
        flagged: Vec::new(),
        non_finite: !value.is_finite() || analytic.iter().any(|g| !g.is_finite()),
        errors: Vec::new(),
    };
    if report.non_finite {
        report.max_rel_error = f64::INFINITY;
        return Ok(report);
    }
    let mut probe = input.clone();
    for &i in entries {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.step;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - opts.step;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        if !numeric.is_finite() {
            report.non_finite = true;
            report.max_rel_error = f64::INFINITY;
            report.flagged.push(i);
            continue;
        }
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.errors.push((i, rel));
        if rel > opts.tolerance {
            report.flagged.push(i);
        }
    }
    Ok(report)
}

/// One named entry of [`run_suite`].
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradcheckReport,
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("dims")
}

/// Random values bounded away from zero, so ReLU kinks sit outside `±h`.
fn off_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, dims, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Checks a tape-built graph against every one of its inputs, using the
/// objective `Σ r ⊙ out` with fixed random `r`.
fn check_graph<B>(inputs: &[Tensor], rng: &mut ChaCha8Rng, opts: GradcheckOptions, build: B) -> Result<GradcheckReport>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).len()
    };
    let r: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut total: Option<GradcheckReport> = None;
    for k in 0..inputs.len() {
        let f = |t: &Tensor| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::new();
            if let Some(kind) = opts.fault {
                tape.inject_sign_flip(kind);
            }
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, x)| tape.variable(if i == k { t.clone() } else { x.clone() }))
                .collect();
            let out = build(&mut tape, &vars)?;
            let value = tape.value(out).data().iter().zip(&r).map(|(a, b)| a * b).sum();
            tape.backward(out, &r)?;
            let g = tape.grad(vars[k]).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
            Ok((value, g))
        };
        let rep = gradcheck(f, &inputs[k], opts)?;
        match total.as_mut() {
            Some(t) => t.merge(&rep),
            None => total = Some(rep),
        }
    }
    Ok(total.expect("at least one input"))
}

fn check_loss<L>(pred: &Tensor, opts: GradcheckOptions, loss: L) -> Result<GradcheckReport>
where
    L: Fn(&Tensor) -> Result<LossOutput>,
{
    gradcheck(
        |t| {
            let out = loss(t)?;
            Ok((out.value, out.grad.into_data()))
        },
        pred,
        opts,
    )
}

fn holed_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ValidMask {
    Grid::from_fn(w, h, |_, _| rng.gen::<f64>() > 0.25)
}

/// Every differentiable primitive, checked at `tolerance`.
pub fn primitive_suite(seed: u64, tolerance: f64) -> Result<Vec<SuiteEntry>> {
    primitive_suite_with(seed, GradcheckOptions::with_tolerance(tolerance))
}

pub fn primitive_suite_with(seed: u64, opts: GradcheckOptions) -> Result<Vec<SuiteEntry>> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradcheckReport| out.push(SuiteEntry { name: name.to_string(), report });

    for (k, s, p) in [(3, 2, 1), (5, 1, 2), (1, 1, 0)] {
        let x = random_tensor(rng, &[2, 3, 7, 6], -1.0, 1.0);
        let w = random_tensor(rng, &[4, 3, k, k], -0.5, 0.5);
        let b = random_tensor(rng, &[4], -0.5, 0.5);
        let geom = ConvGeom::square(k, s, p);
        let rep = check_graph(&[x, w, b], rng, opts, |t, v| t.conv2d(v[0], v[1], v[2], geom, "conv"))?;
        push(&format!("conv2d k{k} s{s} p{p}"), rep);
    }
    let rect = ConvGeom { kernel_h: 2, kernel_w: 3, stride: 1, pad: 1 };
    let x = random_tensor(rng, &[1, 2, 5, 4], -1.0, 1.0);
    let w = random_tensor(rng, &[3, 2, 2, 3], -0.5, 0.5);
    let b = random_tensor(rng, &[3], -0.5, 0.5);
    push("conv2d 2x3", check_graph(&[x, w, b], rng, opts, |t, v| t.conv2d(v[0], v[1], v[2], rect, "conv"))?);

    let x = random_tensor(rng, &[2, 2, 7, 7], -1.0, 1.0);
    push("maxpool 3/2", check_graph(&[x], rng, opts, |t, v| t.maxpool(v[0], 3, 2))?);
    let x = random_tensor(rng, &[1, 3, 4, 6], -1.0, 1.0);
    push("maxpool 2/2", check_graph(&[x], rng, opts, |t, v| t.maxpool(v[0], 2, 2))?);

    let x = random_tensor(rng, &[3, 2, 2, 2], -1.0, 1.0);
    let w = random_tensor(rng, &[5, 8], -0.5, 0.5);
    let b = random_tensor(rng, &[5], -0.5, 0.5);
    push("linear", check_graph(&[x, w, b], rng, opts, |t, v| t.linear(v[0], v[1], v[2]))?);

    let x = off_zero(rng, &[2, 3, 4, 4]);
    push("relu", check_graph(&[x], rng, opts, |t, v| Ok(t.relu(v[0])))?);

    let x = random_tensor(rng, &[2, 4, 3, 3], -1.0, 1.0);
    let mask_seed = rng.gen::<u64>();
    push(
        "dropout",
        check_graph(&[x], rng, opts, |t, v| t.dropout(v[0], 0.5, &mut ChaCha8Rng::seed_from_u64(mask_seed), true))?,
    );

    for f in [2, 3] {
        let x = random_tensor(rng, &[1, 2, 3, 4], -1.0, 1.0);
        push(&format!("upsample x{f}"), check_graph(&[x], rng, opts, |t, v| t.upsample(v[0], f))?);
    }

    let x = random_tensor(rng, &[2, 2, 6, 7], -1.0, 1.0);
    let win = Window { y0: 1, x0: 2, height: 3, width: 4 };
    push("crop", check_graph(&[x], rng, opts, |t, v| t.crop(v[0], win))?);

    let x = random_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0);
    push("pad", check_graph(&[x], rng, opts, |t, v| Ok(t.pad(v[0], 2)))?);

    let a = random_tensor(rng, &[2, 1, 3, 3], -1.0, 1.0);
    let b = random_tensor(rng, &[2, 3, 3, 3], -1.0, 1.0);
    push("concat", check_graph(&[a, b], rng, opts, |t, v| t.concat(&[v[0], v[1]]))?);

    let x = random_tensor(rng, &[2, 3, 3, 4], -1.0, 1.0);
    push("l2_normalize", check_graph(&[x], rng, opts, |t, v| t.l2_normalize(v[0], 1e-12))?);

    let x = random_tensor(rng, &[2, 4, 3, 3], -3.0, 3.0);
    push("softmax", check_graph(&[x], rng, opts, |t, v| Ok(t.softmax(v[0])))?);

    let x = random_tensor(rng, &[2, 3, 2, 2], -1.0, 1.0);
    push("reshape", check_graph(&[x], rng, opts, |t, v| t.reshape(v[0], &[2, 12]))?);

    let x = off_zero(rng, &[1, 2, 6, 6]);
    let w = random_tensor(rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = random_tensor(rng, &[3], -0.5, 0.5);
    push(
        "conv-relu-pool chain",
        check_graph(&[x, w, b], rng, opts, |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], ConvGeom::square(3, 1, 1), "conv")?;
            let r = t.relu(c);
            t.maxpool(r, 2, 2)
        })?,
    );
    Ok(out)
}

/// The three task losses, with masked-out pixels and class weights.
pub fn loss_suite(seed: u64, tolerance: f64) -> Result<Vec<SuiteEntry>> {
    let opts = GradcheckOptions::with_tolerance(tolerance);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (5, 4);
    let mut out = Vec::new();

    let targets: Vec<DepthMap> = (0..2)
        .map(|_| DepthMap::new(Grid::from_fn(w, h, |_, _| rng.gen_range(0.5..5.0)), holed_mask(rng, w, h)))
        .collect::<Result<_>>()?;
    let pred = random_tensor(rng, &[2, 1, h, w], -0.5, 1.5);
    out.push(SuiteEntry { name: "depth loss".into(), report: check_loss(&pred, opts, |p| depth_loss(p, &targets))? });

    let normals: Vec<NormalMap> = (0..2)
        .map(|_| NormalMap {
            normals: Grid::from_fn(w, h, |_, _| {
                normalize3([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)]).expect("nonzero")
            }),
            mask: holed_mask(rng, w, h),
        })
        .collect();
    let raw = random_tensor(rng, &[2, 3, h, w], -1.0, 1.0);
    let rep = gradcheck(
        |t| {
            let mut tape = Tape::new();
            let x = tape.variable(t.clone());
            let y = tape.l2_normalize(x, 1e-12)?;
            let l = normals_loss(tape.value(y), &normals)?;
            tape.backward(y, l.grad.data())?;
            Ok((l.value, tape.grad(x).expect("grad").to_vec()))
        },
        &raw,
        opts,
    )?;
    out.push(SuiteEntry { name: "normals loss".into(), report: rep });

    let classes = 4;
    let labels: Vec<LabelMap> = (0..2)
        .map(|_| LabelMap { labels: Grid::from_fn(w, h, |_, _| rng.gen_range(0..classes as u8)), mask: holed_mask(rng, w, h) })
        .collect();
    let weights = ClassWeights { weights: (0..classes).map(|_| rng.gen_range(0.2..3.0)).collect() };
    let scores = random_tensor(rng, &[2, classes, h, w], -3.0, 3.0);
    out.push(SuiteEntry {
        name: "semantic loss".into(),
        report: check_loss(&scores, opts, |p| semantic_loss(p, &labels, Some(&weights)))?,
    });
    Ok(out)
}

/// End-to-end check of a whole model plus its task loss, train mode with a
/// fixed dropout mask. At most `per_param` entries of each parameter are
/// probed.
pub fn model_suite(model: &Model, samples: &[Sample], seed: u64, tolerance: f64, per_param: usize) -> Result<GradcheckReport> {
    let opts = GradcheckOptions::with_tolerance(tolerance);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let run = |m: &Model| loss_gradients(m, samples, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed), Depth::Full);
    let (_, base) = run(model)?;
    let mut total: Option<GradcheckReport> = None;
    for (k, p) in model.params().iter().enumerate() {
        let mut entries: Vec<usize> = (0..p.tensor.len()).collect();
        entries.shuffle(rng);
        entries.truncate(per_param);
        let mut probe = model.clone();
        let mut check = |entries: &[usize], step: f64| {
            let f = |t: &Tensor| -> Result<(f64, Vec<f64>)> {
                probe.params_mut()[k].tensor = t.clone();
                let value = run(&probe)?.0;
                let grad = if t.data() == p.tensor.data() { base[k].clone() } else { Vec::new() };
                Ok((value, grad))
            };
            gradcheck_entries(f, &p.tensor, entries, GradcheckOptions { step, ..opts })
        };
        let mut rep = check(&entries, opts.step)?;
        // A ReLU or max-pool switch inside ±h spoils the difference quotient;
        // flagged entries get two retries with smaller steps.
        for shrink in [0.1, 0.01] {
            if rep.flagged.is_empty() || rep.non_finite {
                break;
            }
            let again = check(&rep.flagged, opts.step * shrink)?;
            for &(i, e) in &again.errors {
                if let Some(slot) = rep.errors.iter_mut().find(|(j, _)| *j == i) {
                    slot.1 = e;
                }
            }
            rep.flagged = again.flagged;
            rep.max_rel_error = rep.errors.iter().map(|e| e.1).fold(0.0, f64::max);
        }
        match total.as_mut() {
            Some(t) => t.merge(&rep),
            None => total = Some(rep),
        }
    }
    total.ok_or_else(|| Error::Input("model has no parameters".into()))
}

/// Moves a normals model away from the normalization singularity: output
/// biases of normals heads get a camera-facing z of −1, so predicted vectors
/// keep a length near one and the difference quotient stays well conditioned.
pub fn lift_normal_biases(model: &mut Model) {
    let has_normals = matches!(model.task(), Task::Normals | Task::DepthNormals);
    for p in model.params_mut() {
        let output = ["2.5.bias", "3.4.bias"].iter().any(|n| p.name.strip_prefix("normals:").unwrap_or(&p.name) == *n);
        if has_normals && output && p.tensor.len() == 3 {
            p.tensor.data_mut()[2] = -1.0;
        }
    }
}

/// Primitives, losses and every tiny-model task end to end.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    run_suite_with(seed, None)
}

/// [`run_suite`] with an optional injected backward fault.
pub fn run_suite_with(seed: u64, fault: Option<OpKind>) -> Result<Vec<SuiteEntry>> {
    let mut out = primitive_suite_with(seed, GradcheckOptions { fault, ..GradcheckOptions::with_tolerance(1e-6) })?;
    out.extend(loss_suite(seed, 1e-6)?);
    let samples = generate_split(&SceneSpec::desk(8, 6, 5), (seed, seed + 2))?;
    for task in [Task::Depth, Task::Normals, Task::Semantic(5), Task::DepthNormals] {
        let mut spec = ModelSpec::tiny(task);
        spec.dropout = Some(0.5);
        let mut model = build_model(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        lift_normal_biases(&mut model);
        let report = model_suite(&model, &samples, seed, 1e-4, 24)?;
        out.push(SuiteEntry { name: format!("model {}", task.name()), report });
    }
    Ok(out)
}
