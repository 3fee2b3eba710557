//! Flat `key = value` run configuration.
//!
//! Unknown keys are rejected. `seed` drives model initialisation, batching
//! and sampling; `data.seed` (generator and split) falls back to it when
//! unset. The optimizer defaults (lr 1e-3, weight decay 1e-4, batch 64) are
//! choices for desk-scale training, not values taken from a reference run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::controlpath::Scheme;
use crate::data::{CsvPaths, CsvSchema, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};
use crate::ncde::SolverMethod;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// No time mask in the contrastive loss.
    A1,
    /// No contrastive loss.
    A2,
    /// Partial likelihood only.
    A3,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Ablation::None),
            "a1" => Ok(Ablation::A1),
            "a2" => Ok(Ablation::A2),
            "a3" => Ok(Ablation::A3),
            other => Err(Error::config(format!("unknown ablation `{other}` (expected a1, a2, a3 or none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSource {
    pub observations: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub severity: Option<PathBuf>,
    pub features: Vec<String>,
    pub min_observed: usize,
}

impl Default for CsvSource {
    fn default() -> Self {
        CsvSource {
            observations: None,
            labels: None,
            severity: None,
            features: Vec::new(),
            min_observed: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub calibration_bins: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpretConfig {
    pub n_samples: usize,
    pub clusters: usize,
    pub dba_iters: usize,
    pub k_neighbors: usize,
    /// Probe points per axis of the phenotype map.
    pub probe_grid: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    pub csv: CsvSource,
    pub window_h: f64,
    pub split: (f64, f64, f64),
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub interpret: InterpretConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_seed: None,
            source: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            csv: CsvSource::default(),
            window_h: 36.0,
            split: (0.7, 0.1, 0.2),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig { calibration_bins: 10 },
            interpret: InterpretConfig {
                n_samples: 2048,
                clusters: 4,
                dba_iters: 10,
                k_neighbors: 50,
                probe_grid: 25,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.seed" => self.data_seed = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "data.source" => {
                self.source = match v {
                    "synthetic" => DataSource::Synthetic,
                    "csv" => DataSource::Csv,
                    _ => return Err(Error::config(format!("data.source must be synthetic or csv, got `{v}`"))),
                }
            }
            "data.window_h" => self.window_h = parse(key, v)?,
            "data.n_patients" => s.n_patients = parse(key, v)?,
            "data.d_features" => s.d_features = parse(key, v)?,
            "data.obs_rate" => s.obs_rate = parse(key, v)?,
            "data.missing_frac" => s.missing_frac = parse(key, v)?,
            "data.families" => s.families = parse_list(key, v)?,
            "data.n_signal" => s.n_signal = parse(key, v)?,
            "data.tie_first_pair" => s.tie_first_pair = parse_bool(key, v)?,
            "data.beta" => {
                let b: Vec<f64> = parse_list(key, v)?;
                s.beta = b
                    .try_into()
                    .map_err(|_| Error::config("data.beta needs exactly two comma-separated values"))?;
            }
            "data.effect_size" => s.effect_size = parse(key, v)?,
            "data.base_hazard" => s.base_hazard = parse(key, v)?,
            "data.admin_horizon_h" => s.admin_horizon_h = parse(key, v)?,
            "data.dropout_rate" => s.dropout_rate = parse(key, v)?,
            "data.start_spread" => s.start_spread = parse(key, v)?,
            "data.diffusion" => s.diffusion = parse(key, v)?,
            "data.noise_sd" => s.noise_sd = parse(key, v)?,
            "data.drift_amplitude" => s.drift_amplitude = parse(key, v)?,
            "data.trend_delta" => s.trend_delta = parse(key, v)?,
            "data.observations" => self.csv.observations = path_value(v),
            "data.labels" => self.csv.labels = path_value(v),
            "data.severity" => self.csv.severity = path_value(v),
            "data.features" => self.csv.features = parse_list(key, v)?,
            "data.min_observed" => self.csv.min_observed = parse(key, v)?,
            "split.train" => self.split.0 = parse(key, v)?,
            "split.val" => self.split.1 = parse(key, v)?,
            "split.test" => self.split.2 = parse(key, v)?,
            "model.latent_dim" => self.model.latent_dim = parse(key, v)?,
            "model.hidden" => self.model.hidden = parse(key, v)?,
            "model.head_hidden" => self.model.head_hidden = parse(key, v)?,
            "model.scheme" => self.model.scheme = v.parse::<Scheme>()?,
            "solver.method" => self.model.solver.method = v.parse::<SolverMethod>()?,
            "solver.steps_per_hour" => self.model.solver.steps_per_hour = parse(key, v)?,
            "solver.grid_per_hour" => self.model.solver.grid_per_hour = parse(key, v)?,
            "loss.alpha" => self.loss.alpha = parse(key, v)?,
            "loss.kappa1" => self.loss.tacl.kappa1 = parse(key, v)?,
            "loss.kappa2" => self.loss.tacl.kappa2 = parse(key, v)?,
            "loss.delta" => self.loss.tacl.delta = parse(key, v)?,
            "loss.use_tacl" => self.loss.use_tacl = parse_bool(key, v)?,
            "loss.use_time_mask" => self.loss.tacl.use_time_mask = parse_bool(key, v)?,
            "loss.use_ranking_loss" => self.loss.use_ranking_loss = parse_bool(key, v)?,
            "loss.include_self_pairs" => self.loss.include_self_pairs = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "eval.calibration_bins" => self.eval.calibration_bins = parse(key, v)?,
            "interpret.n_samples" => self.interpret.n_samples = parse(key, v)?,
            "interpret.clusters" => self.interpret.clusters = parse(key, v)?,
            "interpret.dba_iters" => self.interpret.dba_iters = parse(key, v)?,
            "interpret.k_neighbors" => self.interpret.k_neighbors = parse(key, v)?,
            "interpret.probe_grid" => self.interpret.probe_grid = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synthetic;
        let m = &self.model;
        let l = &self.loss;
        let t = &self.train;
        let i = &self.interpret;
        vec![
            ("seed", self.seed.to_string()),
            ("data.seed", self.data_seed.map(|x| x.to_string()).unwrap_or_default()),
            (
                "data.source",
                match self.source {
                    DataSource::Synthetic => "synthetic",
                    DataSource::Csv => "csv",
                }
                .to_string(),
            ),
            ("data.window_h", self.window_h.to_string()),
            ("data.n_patients", s.n_patients.to_string()),
            ("data.d_features", s.d_features.to_string()),
            ("data.obs_rate", s.obs_rate.to_string()),
            ("data.missing_frac", s.missing_frac.to_string()),
            ("data.families", join(&s.families)),
            ("data.n_signal", s.n_signal.to_string()),
            ("data.tie_first_pair", s.tie_first_pair.to_string()),
            ("data.beta", join(&s.beta)),
            ("data.effect_size", s.effect_size.to_string()),
            ("data.base_hazard", s.base_hazard.to_string()),
            ("data.admin_horizon_h", s.admin_horizon_h.to_string()),
            ("data.dropout_rate", s.dropout_rate.to_string()),
            ("data.start_spread", s.start_spread.to_string()),
            ("data.diffusion", s.diffusion.to_string()),
            ("data.noise_sd", s.noise_sd.to_string()),
            ("data.drift_amplitude", s.drift_amplitude.to_string()),
            ("data.trend_delta", s.trend_delta.to_string()),
            ("data.observations", opt_path(&self.csv.observations)),
            ("data.labels", opt_path(&self.csv.labels)),
            ("data.severity", opt_path(&self.csv.severity)),
            ("data.features", self.csv.features.join(",")),
            ("data.min_observed", self.csv.min_observed.to_string()),
            ("split.train", self.split.0.to_string()),
            ("split.val", self.split.1.to_string()),
            ("split.test", self.split.2.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.hidden", m.hidden.to_string()),
            ("model.head_hidden", m.head_hidden.to_string()),
            ("model.scheme", m.scheme.to_string()),
            ("solver.method", m.solver.method.to_string()),
            ("solver.steps_per_hour", m.solver.steps_per_hour.to_string()),
            ("solver.grid_per_hour", m.solver.grid_per_hour.to_string()),
            ("loss.alpha", l.alpha.to_string()),
            ("loss.kappa1", l.tacl.kappa1.to_string()),
            ("loss.kappa2", l.tacl.kappa2.to_string()),
            ("loss.delta", l.tacl.delta.to_string()),
            ("loss.use_tacl", l.use_tacl.to_string()),
            ("loss.use_time_mask", l.tacl.use_time_mask.to_string()),
            ("loss.use_ranking_loss", l.use_ranking_loss.to_string()),
            ("loss.include_self_pairs", l.include_self_pairs.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("eval.calibration_bins", self.eval.calibration_bins.to_string()),
            ("interpret.n_samples", i.n_samples.to_string()),
            ("interpret.clusters", i.clusters.to_string()),
            ("interpret.dba_iters", i.dba_iters.to_string()),
            ("interpret.k_neighbors", i.k_neighbors.to_string()),
            ("interpret.probe_grid", i.probe_grid.to_string()),
        ]
    }

    /// Canonical `key = value` text; parses back to the same config.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the entries that determine a trained model (everything
    /// except `eval.*` and `interpret.*`).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k.starts_with("eval.") || k.starts_with("interpret.") {
                continue;
            }
            h.update(format!("{k}={v}\n"));
        }
        hex::encode(h.finalize())
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::None => {}
            Ablation::A1 => self.loss.tacl.use_time_mask = false,
            Ablation::A2 => self.loss.use_tacl = false,
            Ablation::A3 => {
                self.loss.use_tacl = false;
                self.loss.use_ranking_loss = false;
            }
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Generator settings with the effective data seed and window applied.
    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.data_seed(),
            window_h: self.window_h as usize,
            ..self.synthetic.clone()
        }
    }

    pub fn csv_inputs(&self) -> Result<(CsvPaths, CsvSchema)> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::config(format!("data.source = csv requires `{key}`")))
        };
        let paths = CsvPaths {
            observations: need(&self.csv.observations, "data.observations")?,
            labels: need(&self.csv.labels, "data.labels")?,
            severity: self.csv.severity.clone(),
        };
        let mut schema = CsvSchema::new(self.csv.features.clone());
        schema.min_observed = self.csv.min_observed;
        schema.window_h = self.window_h;
        schema.trend_delta = self.synthetic.trend_delta;
        Ok((paths, schema))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m));
        if self.source == DataSource::Synthetic {
            if self.window_h.fract() != 0.0 {
                return bad("data.window_h must be a whole number of hours for synthetic data");
            }
            self.synthetic_config().validate()?;
        } else if self.csv.features.is_empty() {
            return bad("data.source = csv requires `data.features`");
        }
        if !(self.window_h > 0.0) {
            return bad("data.window_h must be positive");
        }
        let (a, b, c) = self.split;
        if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative, train positive, and sum to 1");
        }
        let m = &self.model;
        if m.latent_dim == 0 || m.hidden == 0 || m.head_hidden == 0 {
            return bad("model dimensions must be at least 1");
        }
        m.solver.validate()?;
        let l = &self.loss;
        if !(l.alpha >= 0.0) || !(l.tacl.kappa1 > 0.0) || !(l.tacl.kappa2 > 0.0) || !(l.tacl.delta > 0.0) {
            return bad("loss.alpha must be >= 0 and kappa1, kappa2, delta positive");
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size < 2 || !(t.lr > 0.0) || !(t.weight_decay >= 0.0) {
            return bad("train needs epochs >= 1, batch_size >= 2, lr > 0 and weight_decay >= 0");
        }
        if self.eval.calibration_bins == 0 {
            return bad("eval.calibration_bins must be at least 1");
        }
        let i = &self.interpret;
        if i.n_samples == 0 || i.clusters < 2 || i.k_neighbors == 0 || i.probe_grid < 2 {
            return bad("interpret needs n_samples >= 1, clusters >= 2, k_neighbors >= 1, probe_grid >= 2");
        }
        Ok(())
    }
}
