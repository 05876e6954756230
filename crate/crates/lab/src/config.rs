//! Experiment configuration: a TOML file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use turnpike_core::particles::EntropyMode;
use turnpike_core::training::TrainConfig;
use turnpike_core::{AttentionSpec, FeatureMap, RngStream, UnitVector};

use crate::error::{LabError, LabResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Exp0,
    SweepLambda2,
    SweepKappa,
    Stationary,
    Rate,
    Escape,
    Landscape,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp0 => "exp0",
            Experiment::SweepLambda2 => "sweep_lambda2",
            Experiment::SweepKappa => "sweep_kappa",
            Experiment::Stationary => "stationary",
            Experiment::Rate => "rate",
            Experiment::Escape => "escape",
            Experiment::Landscape => "landscape",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    /// diagonal of `A`, largest first
    pub a_diag: Vec<f64>,
    pub eps_sim: f64,
    pub eps_rate: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n: usize,
    pub m: usize,
    /// cap spread `s` of the initial particles around `e₁`
    pub init_spread: f64,
    pub record_stride: usize,
    pub features: FeatureMap,
    pub entropy: EntropyMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 2,
            a_diag: vec![1.0, 0.65],
            eps_sim: 1e-4,
            eps_rate: 0.1,
            horizon: 80.0,
            dt: 0.05,
            n: 64,
            m: 512,
            init_spread: 0.3,
            record_stride: 5,
            features: FeatureMap::identity(2),
            entropy: EntropyMode::Off,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Align,
    Bow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub target: Vec<f64>,
    pub kappa_cand: f64,
    pub vocab: usize,
    pub cand_mean: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::Align, target: vec![0.0, 1.0], kappa_cand: 2.0, vocab: 16, cand_mean: vec![0.0, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub resample_noise: bool,
    /// `0` disables clipping
    pub grad_clip: f64,
    pub bin_width: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            learning_rate: t.learning_rate,
            lambda_reg: t.lambda_reg,
            resample_noise: t.resample_noise,
            grad_clip: 0.0,
            bin_width: 0.25,
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            lambda_reg: self.lambda_reg,
            resample_noise: self.resample_noise,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
        }
    }
}

/// Grid-side escape analysis at `eps_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub horizon: f64,
    pub dt: f64,
    pub alpha: f64,
    /// smaller learning rate used by the escape consistency check
    pub alpha_small: f64,
    /// horizon of the escape consistency check
    pub escape_horizon: f64,
    /// fit window length, counted back from the horizon
    pub window: f64,
    pub floor: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { horizon: 20.0, dt: 0.01, alpha: 1e-3, alpha_small: 3e-4, escape_horizon: 8.0, window: 10.0, floor: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda2: Vec<f64>,
    pub kappa: Vec<f64>,
    /// also train particle runs at each sweep point
    pub particles: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda2: vec![0.3, 0.45, 0.65, 0.8], kappa: vec![0.5, 2.0, 8.0], particles: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub rate: RateConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            rate: RateConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> LabResult<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LabError::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| LabError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> LabResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| LabError::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table).try_into().map_err(|e| LabError::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Binds the config to the requested experiment and checks the fields it uses.
    pub fn resolve(mut self, experiment: Experiment) -> LabResult<Self> {
        match self.experiment {
            Some(e) if e != experiment => {
                return Err(LabError::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    e.name(),
                    experiment.name()
                )))
            }
            _ => self.experiment = Some(experiment),
        }
        self.validate()?;
        Ok(self)
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment.unwrap_or(Experiment::Exp0)
    }

    fn validate(&self) -> LabResult<()> {
        let bad = |m: String| Err(LabError::Config(m));
        let m = &self.model;
        if m.d != 2 {
            return bad(format!("model.d must be 2 for the circle experiments, got {}", m.d));
        }
        if m.a_diag.len() != m.d {
            return bad(format!("model.a_diag needs {} entries", m.d));
        }
        if m.a_diag.windows(2).any(|w| w[0] < w[1]) {
            return bad("model.a_diag must be sorted largest first".into());
        }
        if !(m.eps_sim >= 0.0) || !(m.eps_rate > 0.0) {
            return bad("model.eps_sim must be >= 0 and model.eps_rate > 0".into());
        }
        if !(m.dt > 0.0) || !(m.horizon > 0.0) || m.n == 0 || m.record_stride == 0 {
            return bad("model.dt, model.horizon, model.n and model.record_stride must be positive".into());
        }
        if m.m < 64 || m.m % 2 != 0 {
            return bad(format!("model.m must be even and >= 64, got {}", m.m));
        }
        if m.features.input_dim() != m.d {
            return bad("model.features does not act on dimension d".into());
        }
        if !(self.training.bin_width > 0.0) || self.training.bin_width < m.dt {
            return bad("training.bin_width must be >= model.dt".into());
        }
        let l = &self.loss;
        if l.target.len() != m.d || l.cand_mean.len() != m.d {
            return bad("loss.target and loss.cand_mean need d entries".into());
        }
        if l.vocab == 0 || !(l.kappa_cand >= 0.0) {
            return bad("loss.vocab must be positive and loss.kappa_cand >= 0".into());
        }
        let r = &self.rate;
        if !(r.dt > 0.0) || !(r.horizon > r.window) || !(r.window > 0.0) || !(r.alpha > 0.0) || !(r.alpha_small > 0.0) || !(r.escape_horizon > 0.0) {
            return bad("rate needs dt > 0, 0 < window < horizon and positive learning rates".into());
        }
        if !(r.floor > 0.0) {
            return bad("rate.floor must be positive".into());
        }
        match self.experiment() {
            Experiment::SweepLambda2 => {
                if self.sweep.lambda2.is_empty() || self.sweep.lambda2.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                    return bad("sweep.lambda2 values must lie in (0, 1)".into());
                }
            }
            Experiment::SweepKappa => {
                if self.sweep.kappa.is_empty() || self.sweep.kappa.iter().any(|v| !(*v > 0.0)) {
                    return bad("sweep.kappa values must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn attention(&self) -> LabResult<AttentionSpec> {
        AttentionSpec::diagonal_unchecked(&self.model.a_diag).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn with_lambda2(&self, l2: f64) -> Self {
        let mut c = self.clone();
        c.model.a_diag[1] = l2;
        c
    }

    pub fn target(&self) -> LabResult<UnitVector> {
        UnitVector::normalize(self.loss.target.clone()).map_err(|e| LabError::Config(format!("loss.target: {e}")))
    }

    pub fn cand_mean(&self) -> LabResult<UnitVector> {
        UnitVector::normalize(self.loss.cand_mean.clone()).map_err(|e| LabError::Config(format!("loss.cand_mean: {e}")))
    }

    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
