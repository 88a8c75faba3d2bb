//! Resolution of the run configuration: task preset, then config file, then
//! flags, then `--set` pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mscale::config::parse_kv;
use mscale::data::read_meta;
use mscale::model::{ModelSpec, Task};
use mscale::trainer::TrainConfig;
use mscale::{Error, Result};

use crate::ConfigArgs;

/// Fully resolved settings of a `train` or `ablate` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut kv = match &args.config {
            Some(path) => parse_kv(&fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        put("data.root", args.data.as_ref().map(|p| p.display().to_string()));
        put("model.task", args.task.clone());
        put("model.classes", args.classes.map(|c| c.to_string()));
        put("model.scales", args.scales.clone());
        put("model.inputs", args.inputs.clone());
        put("model.preset", args.preset.clone());
        put("model.width", args.width.map(|w| w.to_string()));
        put("train.lr", args.lr.map(|v| v.to_string()));
        put("train.batch", args.batch.map(|v| v.to_string()));
        put("train.phase1_steps", args.steps1.map(|v| v.to_string()));
        put("train.phase2_steps", args.steps2.map(|v| v.to_string()));
        put("train.seed", args.seed.map(|v| v.to_string()));
        if let Some(r) = &args.reweight {
            let on = match r.as_str() {
                "none" => false,
                "median-freq" => true,
                other => return Err(Error::Input(format!("--reweight takes none or median-freq, got `{other}`"))),
            };
            put("train.class_weights", Some(on.to_string()));
        }
        if args.no_augment {
            put("augment.enabled", Some("false".into()));
        }
        for pair in &args.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| Error::Input(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_kv(kv)
    }

    fn from_kv(mut kv: BTreeMap<String, String>) -> Result<Self> {
        let data = PathBuf::from(kv.get("data.root").ok_or_else(|| Error::Input("no dataset given (--data or data.root)".into()))?);
        let meta = read_meta(&data)?;
        kv.entry("model.input".into()).or_insert_with(|| format!("{}x{}", meta.width, meta.height));
        if kv.get("model.task").is_some_and(|t| t == "semantic") {
            kv.entry("model.classes".into()).or_insert_with(|| meta.classes.to_string());
        }
        let model = ModelSpec::from_kv(&kv)?;
        if model.input != (meta.width, meta.height) {
            return Err(Error::Input(format!(
                "model input {}x{} does not match the {}x{} dataset",
                model.input.0, model.input.1, meta.width, meta.height
            )));
        }
        if let Some(k) = model.task.classes() {
            if k < meta.classes {
                return Err(Error::Input(format!("model has {k} classes, dataset labels use {}", meta.classes)));
            }
        }
        // Task preset first, explicit keys on top.
        let mut train_kv = parse_kv(&TrainConfig::for_task(model.task).to_kv())?;
        let explicit_lr = kv.contains_key("train.lr");
        train_kv.extend(kv.iter().filter(|(k, _)| k.starts_with("train.") || k.starts_with("augment.")).map(|(k, v)| (k.clone(), v.clone())));
        if explicit_lr && !kv.contains_key("train.phase2_lr") {
            let base: f64 = train_kv["train.lr"].parse().map_err(|_| Error::Input("bad train.lr".into()))?;
            let ratio = TrainConfig::default().phase2_lr / TrainConfig::default().base_lr;
            train_kv.insert("train.phase2_lr".into(), (base * ratio).to_string());
        }
        let train = TrainConfig::from_kv(&train_kv)?;
        let unknown: Vec<&String> = kv
            .keys()
            .filter(|k| !["data.", "model.", "train.", "augment."].iter().any(|p| k.starts_with(p)))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Input(format!("unknown config keys {unknown:?}")));
        }
        Ok(RunConfig { data, model, train })
    }

    /// Complete key=value text; feeding it back through `--config`
    /// reproduces the run.
    pub fn to_kv(&self) -> String {
        format!("data.root={}\n{}{}", self.data.display(), self.model.to_kv(), self.train.to_kv())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), self.to_kv())?;
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.model.task
    }
}
