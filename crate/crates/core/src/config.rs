//! Experiment configuration.
//!
//! Configurations are TOML documents. A minimal FD experiment:
//!
//! ```toml
//! metric = "fd"
//! steps = 1000
//!
//! [reference]
//! mean = [0.0, 0.0]
//! cov_diag = [1.0, 1.0]
//!
//! [[arms]]
//! kind = "gaussian"
//! mean = [1.0, 0.0]
//! cov_diag = [1.0, 1.0]
//! ```
//!
//! Relative file paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arms::{symmetric_mixture, symmetric_peak_for_is, ArmSpec, Metric};
use crate::bandit::PolicyKind;
use crate::bonus::BonusMode;
use crate::embeddings::load_embeddings;
use crate::error::{Error, Result};
use crate::matstats::SymMatrix;
use crate::runner::{load_ref_stats, compute_ref_stats};
use crate::scores::RefStats;

pub const DEFAULT_BATCH_SIZE: usize = 5;
pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_CHECK_TRIALS: usize = 200;

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_check_trials() -> usize {
    DEFAULT_CHECK_TRIALS
}
fn default_true() -> bool {
    true
}
fn is_plugin(mode: &BonusMode) -> bool {
    *mode == BonusMode::Plugin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: Metric,
    /// Policies to compare; empty means all policies applicable to `metric`.
    #[serde(default)]
    pub policies: Vec<PolicyKind>,
    /// Horizon `T`.
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Total failure budget; divided by `steps` before use in the bandit loop.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Covariance thresholding multiplier `M`; 0 disables.
    #[serde(default)]
    pub threshold: f64,
    /// Burn-in samples per arm `N` (FD-UCB only).
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "BonusMode::default_plugin", skip_serializing_if = "is_plugin")]
    pub bonus: BonusMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub check: CheckConfig,
    pub arms: Vec<ArmConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BonusMode {
    fn default_plugin() -> Self {
        BonusMode::Plugin
    }
}

/// Source of the real-data reference statistics (exactly one of the fields
/// `path`, `stats`, or `mean` with a covariance).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Embedding dataset from which the statistics are computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Cached statistics written by `make-ref`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_diag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Sample sizes to test; empty picks a grid around the burn-in threshold.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_check_trials")]
    pub trials: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            sample_sizes: Vec::new(),
            trials: DEFAULT_CHECK_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmConfig {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov_diag: Option<Vec<f64>>,
        /// Variance truncation factor `τ ∈ (0, 1]` (covariance scaled by `τ²`).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation: Option<f64>,
    },
    /// Either explicit `prototypes`/`weights`, or a symmetric mixture over
    /// `classes` given by `peak` or `target_is`.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prototypes: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peak: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_is: Option<f64>,
    },
    Replay {
        path: PathBuf,
        #[serde(default = "default_true")]
        with_replacement: bool,
    },
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policies: Option<Vec<PolicyKind>>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub delta: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub kappa: Option<f64>,
    pub threshold: Option<f64>,
    pub burn_in: Option<usize>,
    pub norm_bound: Option<f64>,
    pub check_trials: Option<usize>,
}

/// Loads, completes, and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.apply_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn apply_defaults(&mut self) {
        if self.policies.is_empty() {
            self.policies = default_policies(self.metric);
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(p) = &o.policies {
            self.policies = p.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = o.$field {
                    self.$field = v;
                }
            )*};
        }
        set!(steps, batch_size, delta, trials, seed, kappa, threshold, burn_in);
        if let Some(c) = o.norm_bound {
            self.bonus = BonusMode::BoundedNorm { c };
        }
        if let Some(t) = o.check_trials {
            self.check.trials = t;
        }
        self.apply_defaults();
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::validation("steps", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.trials < 1 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", format!("{} is outside (0, 1)", self.delta)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::validation("kappa", "must be positive and finite"));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::validation("threshold", "must be non-negative and finite"));
        }
        if let BonusMode::BoundedNorm { c } = self.bonus {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::validation("bonus.c", "norm bound must be positive"));
            }
        }
        if self.check.trials < 1 {
            return Err(Error::validation("check.trials", "must be at least 1"));
        }
        if self.arms.is_empty() {
            return Err(Error::validation("arms", "at least one arm is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if !p.supports(self.metric) {
                return Err(Error::validation(
                    format!("policies[{i}]"),
                    format!("{p} does not apply to metric {}", self.metric),
                ));
            }
        }
        for (i, a) in self.arms.iter().enumerate() {
            let field = format!("arms[{i}]");
            match (self.metric, a) {
                (Metric::Fd, ArmConfig::Categorical { .. }) | (Metric::Is, ArmConfig::Gaussian { .. }) => {
                    return Err(Error::validation(field, format!("arm kind does not produce {} samples", self.metric)));
                }
                (_, ArmConfig::Gaussian { mean, cov, cov_diag, truncation }) => {
                    if cov.is_some() == cov_diag.is_some() {
                        return Err(Error::validation(field, "give exactly one of `cov` or `cov_diag`"));
                    }
                    let d = cov.as_ref().map(|c| c.len()).or(cov_diag.as_ref().map(|c| c.len())).unwrap();
                    if d != mean.len() || d == 0 {
                        return Err(Error::validation(field, "mean and covariance dimensions differ"));
                    }
                    if let Some(t) = truncation {
                        if !(*t > 0.0 && *t <= 1.0) {
                            return Err(Error::validation(field, "truncation must lie in (0, 1]"));
                        }
                    }
                }
                (_, ArmConfig::Categorical { prototypes, weights, classes, peak, target_is }) => {
                    let explicit = prototypes.is_some();
                    let symmetric = classes.is_some();
                    if explicit == symmetric {
                        return Err(Error::validation(field, "give either `prototypes` or `classes`"));
                    }
                    if symmetric && peak.is_some() == target_is.is_some() {
                        return Err(Error::validation(field, "symmetric arms need exactly one of `peak` or `target_is`"));
                    }
                    if explicit && weights.as_ref().map_or(false, |w| w.len() != prototypes.as_ref().unwrap().len()) {
                        return Err(Error::validation(field, "weights and prototypes differ in length"));
                    }
                }
                (_, ArmConfig::Replay { .. }) => {}
            }
        }
        if self.metric == Metric::Fd && self.reference.is_none() {
            return Err(Error::validation("reference", "FD experiments need reference statistics"));
        }
        if let Some(r) = &self.reference {
            let sources = [r.path.is_some(), r.stats.is_some(), r.mean.is_some()]
                .iter()
                .filter(|&&b| b)
                .count();
            if sources != 1 {
                return Err(Error::validation("reference", "give exactly one of `path`, `stats`, or `mean`"));
            }
            if r.mean.is_some() && r.cov.is_some() == r.cov_diag.is_some() {
                return Err(Error::validation("reference", "`mean` needs exactly one of `cov` or `cov_diag`"));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_reference(&self) -> Result<Option<Arc<RefStats>>> {
        let Some(r) = &self.reference else {
            return Ok(None);
        };
        let stats = if let Some(p) = &r.path {
            compute_ref_stats(&load_embeddings(&self.resolve(p))?)?
        } else if let Some(p) = &r.stats {
            load_ref_stats(&self.resolve(p))?
        } else {
            let mean = r.mean.clone().unwrap();
            RefStats::new(mean, covariance_from(r.cov.as_ref(), r.cov_diag.as_ref())?)?
        };
        Ok(Some(Arc::new(stats)))
    }

    pub fn build_arms(&self) -> Result<Vec<ArmSpec>> {
        self.arms
            .iter()
            .map(|a| {
                Ok(match a {
                    ArmConfig::Gaussian { mean, cov, cov_diag, truncation } => {
                        let mut c = covariance_from(cov.as_ref(), cov_diag.as_ref())?;
                        if let Some(t) = truncation {
                            c = c.scaled(t * t);
                        }
                        ArmSpec::Gaussian { mean: mean.clone(), cov: c }
                    }
                    ArmConfig::Categorical { prototypes, weights, classes, peak, target_is } => {
                        if let Some(p) = prototypes {
                            let w = weights.clone().unwrap_or_else(|| vec![1.0; p.len()]);
                            ArmSpec::Categorical { prototypes: p.clone(), weights: w }
                        } else {
                            let d = classes.unwrap();
                            let q = match (peak, target_is) {
                                (Some(q), _) => *q,
                                (None, Some(t)) => symmetric_peak_for_is(d, *t)?,
                                (None, None) => unreachable!("validated"),
                            };
                            let (prototypes, weights) = symmetric_mixture(d, q)?;
                            ArmSpec::Categorical { prototypes, weights }
                        }
                    }
                    ArmConfig::Replay { path, with_replacement } => ArmSpec::Replay {
                        data: Arc::new(load_embeddings(&self.resolve(path))?),
                        with_replacement: *with_replacement,
                        probabilities: self.metric == Metric::Is,
                    },
                })
            })
            .collect()
    }
}

fn covariance_from(cov: Option<&Vec<Vec<f64>>>, diag: Option<&Vec<f64>>) -> Result<SymMatrix> {
    match (cov, diag) {
        (Some(rows), _) => SymMatrix::from_rows(rows),
        (None, Some(d)) => Ok(SymMatrix::from_diag(d)),
        (None, None) => Err(Error::Config("missing covariance".into())),
    }
}

pub fn default_policies(metric: Metric) -> Vec<PolicyKind> {
    let ucb = match metric {
        Metric::Fd => PolicyKind::FdUcb,
        Metric::Is => PolicyKind::IsUcb,
    };
    vec![ucb, PolicyKind::NaiveUcb, PolicyKind::Greedy, PolicyKind::Random]
}
