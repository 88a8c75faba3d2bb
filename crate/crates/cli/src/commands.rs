use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mscale::autograd::OpKind;
use mscale::data::dataset::generate_dataset;
use mscale::data::netpbm::read_rgb;
use mscale::data::{load_split, read_meta, Checkpoint, Sample, SceneSpec, Split};
use mscale::geometry::Intrinsics;
use mscale::gradcheck::run_suite_with;
use mscale::metrics::MetricReport;
use mscale::model::{build_model, parse_size, Modality, Model, ModelSpec, ScaleSet, Task};
use mscale::trainer::{evaluate, loss_csv, GroundTruth, Prediction, Predictor, TrainConfig, TrainState, Trainer};
use mscale::{DepthMap, Error, Grid, LabelMap, NormalMap, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dump::write_predictions;
use crate::run_config::RunConfig;
use crate::ConfigArgs;

const LOG_EVERY: u64 = 100;

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Input(format!("split must be train or test, got `{other}`"))),
    }
}

fn load_nonempty(root: &Path, split: Split) -> Result<Vec<Sample>> {
    let (_, samples) = load_split(root, split)?;
    if samples.is_empty() {
        return Err(Error::Input(format!("the {split} split of {} is empty", root.display())));
    }
    Ok(samples)
}

fn read_model(path: &Path) -> Result<Model> {
    Model::from_checkpoint(&Checkpoint::read(path)?)
}

pub fn gen_data(count: usize, test: usize, size: &str, classes: usize, seed: u64, out: &Path) -> Result<bool> {
    let (w, h) = parse_size(size)?;
    let spec = SceneSpec::desk(w, h, classes);
    let meta = generate_dataset(out, &spec, seed, count, test)?;
    println!(
        "wrote {} train + {} test samples ({w}x{h}, {classes} classes) to {}",
        meta.count(Split::Train),
        meta.count(Split::Test),
        out.display()
    );
    Ok(true)
}

/// Phase 1, then phase 2 when scale 3 is active, logging the loss.
fn run_training(model: &mut Model, cfg: TrainConfig, data: &[Sample], checkpoints: Option<&Path>) -> Result<TrainState> {
    let has3 = model.spec().scales.has(3);
    let mut t = Trainer::new(model, cfg, data)?;
    if let Some(dir) = checkpoints.filter(|_| t.config.checkpoint_every > 0) {
        fs::create_dir_all(dir)?;
        t = t.with_checkpoints(dir);
    }
    let t0 = Instant::now();
    while t.state.phase1_done < t.config.phase1_steps {
        let loss = t.step_phase1(data)?;
        if t.state.phase1_done % LOG_EVERY == 0 {
            info!("phase 1 step {} loss {loss:.5} ({:.0}s)", t.state.phase1_done, t0.elapsed().as_secs_f64());
        }
    }
    if has3 {
        while t.state.phase2_done < t.config.phase2_steps {
            let loss = t.step_phase2(data)?;
            if t.state.phase2_done % LOG_EVERY == 0 {
                info!("phase 2 step {} loss {loss:.5} ({:.0}s)", t.state.phase2_done, t0.elapsed().as_secs_f64());
            }
        }
    }
    Ok(t.state)
}

fn report_text(reports: &[MetricReport]) -> String {
    reports.iter().map(|r| format!("[{}] {} pixels\n{}", r.task, r.pixels, r.to_table())).collect::<Vec<_>>().join("\n")
}

pub fn train(args: &ConfigArgs, out: &Path) -> Result<bool> {
    let cfg = RunConfig::resolve(args)?;
    cfg.write(out)?;
    let data = load_nonempty(&cfg.data, Split::Train)?;
    info!("training {} on {} samples, base lr {}", cfg.task().name(), data.len(), cfg.train.base_lr);
    let mut model = build_model(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let state = run_training(&mut model, cfg.train.clone(), &data, Some(&out.join("checkpoints")))?;
    state.to_checkpoint(&model, &cfg.train)?.write(out.join("model.ckpt"))?;
    fs::write(out.join("loss.csv"), loss_csv(&state.curve))?;
    let reports = evaluate(&model, &data, cfg.task(), cfg.train.batch_size)?;
    let text = report_text(&reports);
    fs::write(out.join("train_metrics.txt"), reports.iter().map(MetricReport::to_kv).collect::<Vec<_>>().join("\n"))?;
    println!("training-set metrics after {} steps:\n{text}", state.step);
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(true)
}

pub fn eval(
    checkpoint: Option<&Path>,
    ground_truth: Option<&str>,
    data: &Path,
    split: &str,
    batch: usize,
    dump: bool,
    out: &Path,
) -> Result<bool> {
    let split = parse_split(split)?;
    let samples = load_nonempty(data, split)?;
    let meta = read_meta(data)?;
    let (predictor, task): (Box<dyn Predictor>, Task) = match (checkpoint, ground_truth) {
        (Some(path), _) => {
            let m = read_model(path)?;
            let task = m.task();
            (Box::new(m), task)
        }
        (None, Some(name)) => (Box::new(GroundTruth), Task::parse(name, meta.classes)?),
        (None, None) => return Err(Error::Input("eval needs --checkpoint or --ground-truth".into())),
    };
    let reports = evaluate(predictor.as_ref(), &samples, task, batch)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("metrics_{split}.txt")), reports.iter().map(MetricReport::to_kv).collect::<Vec<_>>().join("\n"))?;
    println!("{}", report_text(&reports));
    if dump {
        let preds = predict_all(predictor.as_ref(), &samples, batch)?;
        let n = write_predictions(&out.join("predictions"), &preds)?;
        println!("wrote {n} prediction files to {}", out.join("predictions").display());
    }
    Ok(true)
}

fn predict_all(predictor: &dyn Predictor, samples: &[Sample], batch: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        out.extend(predictor.predict(chunk)?);
    }
    Ok(out)
}

/// A sample carrying only an image; every target is masked out.
fn image_sample(path: &Path) -> Result<Sample> {
    let rgb = read_rgb(path)?;
    let (w, h) = (rgb.width(), rgb.height());
    let none = Grid::filled(w, h, false);
    Sample::new(
        rgb,
        DepthMap { depth: Grid::filled(w, h, 1.0), mask: none.clone() },
        NormalMap { normals: Grid::filled(w, h, [0.0, 0.0, -1.0]), mask: none.clone() },
        LabelMap { labels: Grid::filled(w, h, 0), mask: none },
        Intrinsics::default_for(w, h),
    )
}

pub fn predict(checkpoint: &Path, data: Option<&Path>, split: &str, images: &[PathBuf], out: &Path) -> Result<bool> {
    let model = read_model(checkpoint)?;
    let samples = match data {
        Some(root) => load_nonempty(root, parse_split(split)?)?,
        None => {
            if model.spec().modalities != [Modality::Rgb] {
                return Err(Error::Input("--image needs a model with RGB input only".into()));
            }
            images.iter().map(|p| image_sample(p)).collect::<Result<Vec<_>>>()?
        }
    };
    let preds = predict_all(&model, &samples, 8)?;
    let n = write_predictions(out, &preds)?;
    println!("wrote {n} files for {} samples to {}", preds.len(), out.display());
    Ok(true)
}

/// Training config of one ablation row: the whole budget in phase 1, or
/// split evenly across both phases with phase 2 on the full scale-3 plane.
fn budget_config(base: &TrainConfig, spec: &ModelSpec, budget: u64) -> Result<TrainConfig> {
    let mut c = base.clone();
    if spec.scales.has(3) {
        let plane = mscale::model::ModelConfig::resolve(spec)?.s3;
        c.phase1_steps = budget / 2;
        c.phase2_steps = budget - budget / 2;
        c.crop = Some((plane.width, plane.height));
    } else {
        c.phase1_steps = budget;
        c.phase2_steps = 0;
    }
    c.lr_step_at = c.phase1_steps * 3 / 4;
    c.phase2_lr_step_at = c.phase2_steps * 3 / 4;
    Ok(c)
}

/// Replaces depth and normals by a donor model's predictions.
fn with_donor_maps(donor: &Model, samples: &[Sample]) -> Result<Vec<Sample>> {
    let preds = predict_all(donor, samples, 8)?;
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| match (p.depth, p.normals) {
            (Some(depth), Some(normals)) => Ok(Sample { depth, normals, ..s.clone() }),
            _ => Err(Error::Input("donor checkpoint must predict depth and normals".into())),
        })
        .collect()
}

struct Row {
    label: String,
    reports: Vec<MetricReport>,
}

fn ablation_table(rows: &[Row]) -> String {
    let names: Vec<String> = rows
        .first()
        .map(|r| r.reports.iter().flat_map(|rep| rep.values.iter().map(move |(n, _)| format!("{}:{n}", rep.task))).collect())
        .unwrap_or_default();
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<label_w$}", "config");
    for n in &names {
        let _ = write!(s, " {n:>w$}", w = n.len().max(10));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<label_w$}", r.label);
        let values = r.reports.iter().flat_map(|rep| rep.values.iter().map(|(_, v)| *v));
        for (n, v) in names.iter().zip(values) {
            let _ = write!(s, " {v:>w$.4}", w = n.len().max(10));
        }
        s.push('\n');
    }
    s
}

pub fn ablate(
    args: &ConfigArgs,
    scale_sets: &str,
    conditions: Option<&str>,
    donor: Option<&Path>,
    budget: u64,
    split: &str,
    out: &Path,
) -> Result<bool> {
    let cfg = RunConfig::resolve(args)?;
    cfg.write(out)?;
    let eval_split = parse_split(split)?;
    let train_data = load_nonempty(&cfg.data, Split::Train)?;
    let eval_data = load_nonempty(&cfg.data, eval_split)?;

    let mut runs: Vec<(String, ModelSpec, Vec<Sample>, Vec<Sample>)> = Vec::new();
    match conditions {
        None => {
            for set in scale_sets.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let spec = cfg.model.clone().with_scales(ScaleSet::parse(set)?);
                runs.push((format!("scales {{{set}}}"), spec, train_data.clone(), eval_data.clone()));
            }
        }
        Some(list) => {
            let mut donor_model = None;
            for c in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let rgb_dn = vec![Modality::Rgb, Modality::Depth, Modality::Normals];
                let (label, modalities, tr, ev) = match c {
                    "a" => ("(a) rgb", vec![Modality::Rgb], train_data.clone(), eval_data.clone()),
                    "b" => {
                        let path = donor.ok_or_else(|| Error::Input("condition b needs --donor <depth+normals checkpoint>".into()))?;
                        if donor_model.is_none() {
                            donor_model = Some(read_model(path)?);
                        }
                        let d = donor_model.as_ref().expect("loaded");
                        ("(b) rgb + predicted depth, normals", rgb_dn, with_donor_maps(d, &train_data)?, with_donor_maps(d, &eval_data)?)
                    }
                    "c" => ("(c) rgb + true depth, normals", rgb_dn, train_data.clone(), eval_data.clone()),
                    other => return Err(Error::Input(format!("unknown input condition `{other}` (a, b or c)"))),
                };
                let spec = ModelSpec { modalities, ..cfg.model.clone() };
                runs.push((label.to_string(), spec, tr, ev));
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::Input("nothing to compare".into()));
    }

    let mut rows = Vec::new();
    for (label, spec, tr, ev) in runs {
        let t0 = Instant::now();
        let mut model = build_model(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
        run_training(&mut model, budget_config(&cfg.train, &spec, budget)?, &tr, None)?;
        let reports = evaluate(&model, &ev, spec.task, cfg.train.batch_size)?;
        info!("{label}: done in {:.0}s", t0.elapsed().as_secs_f64());
        rows.push(Row { label, reports });
    }
    let table = ablation_table(&rows);
    fs::write(out.join("ablation.txt"), &table)?;
    println!("{} split, budget {budget} steps, seed {}\n{table}", eval_split, cfg.train.seed);
    Ok(true)
}

pub fn gradcheck(seed: u64, fault: Option<&str>) -> Result<bool> {
    let fault = fault
        .map(|name| {
            OpKind::parse(name).ok_or_else(|| {
                let known: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
                Error::Input(format!("unknown op `{name}`; one of {}", known.join(", ")))
            })
        })
        .transpose()?;
    let t0 = Instant::now();
    let entries = run_suite_with(seed, fault)?;
    let mut ok = true;
    for e in &entries {
        let pass = e.report.passed() && e.report.checked > 0;
        ok &= pass;
        println!(
            "{:<24} checked {:>5}  max rel err {:>9.2e}  tol {:.0e}  {}",
            e.name,
            e.report.checked,
            e.report.max_rel_error,
            e.report.tolerance,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{} in {:.1}s", if ok { "all checks passed" } else { "gradient check FAILED" }, t0.elapsed().as_secs_f64());
    Ok(ok)
}
