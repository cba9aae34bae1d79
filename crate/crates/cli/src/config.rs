//! Experiment configuration: one JSON document, with command-line overrides
//! addressed by dotted path.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dha_core::group::{regular_copies, FiniteGroup, Representation};
use dha_core::koopman::{Architecture, Observables, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{config, io, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Group descriptor such as "C3" or "C2xC2".
    pub group: String,
    /// State dimension; the state carries `state_dim / |G|` copies of the
    /// regular representation.
    pub state_dim: usize,
    /// Latent dimension of the autoencoders (default `round_up(2m, |G|)`).
    pub latent_dim: Option<usize>,
    pub system: SystemConfig,
    pub dataset: DatasetConfig,
    pub variants: Vec<Variant>,
    pub training: TrainingConfig,
    pub linear: LinearConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepConfig>,
    pub output: PathBuf,
    /// Worker threads for sweeps (default: available parallelism).
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub spectral_radius: f64,
    pub sigma: f64,
    pub n_constraints: usize,
    /// Fixes the system across seeds; otherwise each seed draws its own.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub init_box: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub horizon: usize,
    pub gamma: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    /// Hidden widths (default: 4 layers of `round_up(4m, |G|)`).
    pub hidden: Option<Vec<usize>>,
    pub equivariant_decoder: bool,
    pub train_windows: Option<usize>,
    /// Optimizer-step cap; with a large `epochs` this gives every sample
    /// budget the same number of updates.
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub observables: Observables,
    pub ridge: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Training-window budget.
    Samples,
    StateDim,
    LatentDim,
    Sigma,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Samples => "samples",
            Axis::StateDim => "state_dim",
            Axis::LatentDim => "latent_dim",
            Axis::Sigma => "sigma",
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Axis::Sigma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            group: "C3".into(),
            state_dim: 6,
            latent_dim: None,
            system: SystemConfig::default(),
            dataset: DatasetConfig::default(),
            variants: vec![Variant::Dae, Variant::Edae],
            training: TrainingConfig::default(),
            linear: LinearConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![0],
            sweep: None,
            output: PathBuf::from("runs"),
            workers: None,
        }
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            spectral_radius: 0.95,
            sigma: 0.01,
            n_constraints: 2,
            seed: None,
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 36,
            n_test: 40,
            horizon: 100,
            init_box: [-1.0, 1.0],
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            horizon: t.horizon,
            gamma: None,
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            patience: t.patience,
            hidden: None,
            equivariant_decoder: true,
            train_windows: None,
            max_steps: None,
        }
    }
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            observables: Observables::Identity,
            ridge: None,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { horizon: 10 }
    }
}

/// Reads `path` (or the defaults) and applies `key.path=value` overrides.
/// Values parse as JSON when possible and as plain strings otherwise.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(Config::default()).expect("defaults serialize"),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: Config = serde_json::from_value(doc).map_err(|e| config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config(format!("override {assignment:?} is not of the form path=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(config(format!("bad override path {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config(format!("{} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}

impl Config {
    pub fn group(&self) -> Result<Arc<FiniteGroup>> {
        FiniteGroup::parse(&self.group)
            .map(Arc::new)
            .map_err(|e| config(format!("group {:?}: {e}", self.group)))
    }

    pub fn state_rep(&self) -> Result<Representation> {
        let g = self.group()?;
        Ok(regular_copies(&g, self.state_dim / g.order())?)
    }

    pub fn latent_dim(&self) -> Result<usize> {
        let order = self.group()?.order();
        Ok(self
            .latent_dim
            .unwrap_or_else(|| Architecture::default_for(self.state_dim, order).latent_dim))
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let order = self.group()?.order();
        let base = Architecture::default_for(self.state_dim, order);
        Ok(Architecture {
            latent_dim: self.latent_dim()?,
            hidden: self.training.hidden.clone().unwrap_or(base.hidden),
            equivariant_decoder: self.training.equivariant_decoder,
        })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.training;
        Ok(TrainConfig {
            architecture: Some(self.architecture()?),
            horizon: t.horizon,
            gamma: t.gamma,
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            patience: t.patience,
            seed,
            train_windows: t.train_windows,
            max_steps: t.max_steps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let order = self.group()?.order();
        let m = self.state_dim;
        if m == 0 || m % order != 0 {
            return Err(config(format!(
                "state_dim {m} must be a positive multiple of |G| = {order}; the state carries copies of the regular representation"
            )));
        }
        let l = self.latent_dim()?;
        if l == 0 {
            return Err(config("latent_dim must be positive"));
        }
        let equivariant: Vec<&str> = self
            .variants
            .iter()
            .filter(|v| **v == Variant::Edae)
            .map(|v| v.name())
            .collect();
        if !equivariant.is_empty() && l % order != 0 {
            return Err(config(format!(
                "latent_dim {l} is not divisible by |G| = {order}: the equivariant latent space of {} is a direct sum of latent_dim/|G| copies of the regular representation",
                equivariant.join(", ")
            )));
        }
        if let Some(hidden) = &self.training.hidden {
            if self.variants.contains(&Variant::Edae) {
                if let Some(w) = hidden.iter().find(|w| **w == 0 || *w % order != 0) {
                    return Err(config(format!(
                        "hidden width {w} is not a positive multiple of |G| = {order}; equivariant hidden layers hold copies of the regular representation"
                    )));
                }
            }
        }
        if self.variants.is_empty() {
            return Err(config("no model variants selected"));
        }
        if self.seeds.is_empty() {
            return Err(config("seeds list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config("seeds must be distinct"));
        }
        let s = &self.system;
        if !(s.spectral_radius > 0.0 && s.spectral_radius.is_finite()) {
            return Err(config("system.spectral_radius must be positive"));
        }
        if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
            return Err(config("system.sigma must be non-negative"));
        }
        let d = &self.dataset;
        if d.n_train == 0 || d.n_test == 0 || d.horizon == 0 {
            return Err(config("dataset sizes and horizon must be positive"));
        }
        if !(d.init_box[0] < d.init_box[1]) {
            return Err(config("dataset.init_box must be an increasing pair"));
        }
        let t = &self.training;
        if self.variants.iter().any(|v| v.is_autoencoder()) {
            if t.horizon == 0 || t.batch == 0 || !(t.lr > 0.0) {
                return Err(config("training.horizon, training.batch and training.lr must be positive"));
            }
            if t.horizon >= d.horizon {
                return Err(config(format!(
                    "training.horizon {} leaves no windows in trajectories of length {}",
                    t.horizon,
                    d.horizon + 1
                )));
            }
        }
        if self.eval.horizon == 0 || self.eval.horizon > d.horizon {
            return Err(config(format!(
                "eval.horizon must lie in 1..={} (the dataset horizon)",
                d.horizon
            )));
        }
        if self.workers == Some(0) {
            return Err(config("workers must be positive"));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(config("sweep.values is empty"));
            }
            for &v in &sw.values {
                if !v.is_finite() || v < 0.0 || (sw.axis.is_integer() && (v.fract() != 0.0 || v == 0.0)) {
                    return Err(config(format!("sweep value {v} is invalid for axis {}", sw.axis.name())));
                }
            }
        }
        Ok(())
    }

    /// The configuration at one sweep point.
    pub fn at(&self, axis: Axis, value: f64) -> Result<Config> {
        let mut c = self.clone();
        c.sweep = None;
        match axis {
            Axis::Samples => c.training.train_windows = Some(value as usize),
            Axis::StateDim => c.state_dim = value as usize,
            Axis::LatentDim => c.latent_dim = Some(value as usize),
            Axis::Sigma => c.system.sigma = value,
        }
        c.validate()?;
        Ok(c)
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

/// Independent seeds for the parts of one run, derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    pub system: u64,
    pub init: u64,
    pub noise: u64,
    pub training: u64,
}

pub fn derive_seed(run: u64, stream: &str) -> u64 {
    let digest = Sha256::digest(format!("{stream}:{run}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl RunSeeds {
    pub fn new(run: u64, fixed_system: Option<u64>) -> Self {
        RunSeeds {
            system: fixed_system.unwrap_or_else(|| derive_seed(run, "system")),
            init: derive_seed(run, "init"),
            noise: derive_seed(run, "noise"),
            training: derive_seed(run, "training"),
        }
    }
}
