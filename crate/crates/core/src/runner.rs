//! Experiment execution and the files it produces.
//!
//! `run` writes three files into the output directory:
//!
//! - `trials.csv`: one row per (policy, trial, step),
//! - `aggregate.csv`: per-step mean and standard error across trials,
//!   computable from `trials.csv` alone,
//! - `manifest.toml`: the resolved configuration, trial seeds, and ground truth.
//!
//! Output is byte-identical for a fixed configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arms::{derive_seed, ArmSpec, Metric};
use crate::bandit::{aggregate, run_trial, AggregateRow, Policy, TrialConfig, TrialLog};
use crate::bonus::{
    fd_bonus, fd_bonus_bounded, optimistic_is, ArmMomentSummary, BonusMode, BonusParams, IsSummary,
};
use crate::config::ExperimentConfig;
use crate::embeddings::Dataset;
use crate::error::{Error, Result};
use crate::matstats::{effective_rank, threshold_covariance, StreamingMoments, SymMatrix};
use crate::scores::{frechet_distance, ClassProfile, RefStats};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GENSELECT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "results";
/// Relative ridge added to a singular reference covariance.
pub const RIDGE_SCALE: f64 = 1e-6;
/// Coverage this far below `1 − δ` is reported as a violation.
pub const COVERAGE_SLACK: f64 = 0.05;

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Reference statistics with the ridge (if any) that made them usable.
#[derive(Debug, Clone)]
pub struct ReferenceFit {
    pub stats: RefStats,
    pub ridge: Option<f64>,
}

/// Fits mean and covariance to a dataset. A singular covariance is retried
/// once with `ε·I` added, `ε = 1e-6 · mean diagonal`.
pub fn fit_reference(data: &Dataset) -> Result<ReferenceFit> {
    if data.count() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let moments = StreamingMoments::from_samples(data.dim(), &data.rows_f64())?;
    let mean = moments.mean().to_vec();
    let cov = moments.covariance()?;
    match RefStats::new(mean.clone(), cov.clone()) {
        Ok(stats) => Ok(ReferenceFit { stats, ridge: None }),
        Err(Error::NotPositiveDefinite { .. }) => {
            let eps = RIDGE_SCALE * cov.trace() / cov.dim() as f64;
            if !(eps > 0.0) {
                return Err(Error::Degenerate("reference covariance is zero"));
            }
            let mut ridged = cov;
            for i in 0..ridged.dim() {
                let v = ridged.get(i, i) + eps;
                ridged.set(i, i, v);
            }
            let stats = RefStats::new(mean, ridged)?;
            Ok(ReferenceFit {
                stats,
                ridge: Some(eps),
            })
        }
        Err(e) => Err(e),
    }
}

pub fn compute_ref_stats(data: &Dataset) -> Result<RefStats> {
    fit_reference(data).map(|f| f.stats)
}

#[derive(Debug, Serialize, Deserialize)]
struct RefStatsFile {
    dim: usize,
    count: usize,
    #[serde(default)]
    ridge: Option<f64>,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

/// Writes reference statistics as JSON (floats round-trip exactly).
pub fn save_ref_stats(path: &Path, fit: &ReferenceFit, count: usize) -> Result<()> {
    let file = RefStatsFile {
        dim: fit.stats.dim(),
        count,
        ridge: fit.ridge,
        mean: fit.stats.mean().to_vec(),
        cov: fit.stats.cov().to_rows(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_ref_stats(path: &Path) -> Result<RefStats> {
    let text = fs::read_to_string(path)?;
    let file: RefStatsFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.mean.len() != file.dim {
        return Err(Error::DimensionMismatch {
            expected: file.dim,
            got: file.mean.len(),
        });
    }
    RefStats::new(file.mean, SymMatrix::from_rows(&file.cov)?)
}

/// A fully loaded experiment: reference, arms, and their true scores.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub reference: Option<Arc<RefStats>>,
    pub arms: Vec<ArmSpec>,
    pub true_scores: Vec<f64>,
}

impl Experiment {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let reference = config.load_reference()?;
        let arms = config.build_arms()?;
        let true_scores = arms
            .iter()
            .map(|a| a.true_score(config.metric, reference.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            reference,
            arms,
            true_scores,
        })
    }

    pub fn bonus_params(&self) -> Result<BonusParams> {
        let c = &self.config;
        BonusParams::for_horizon(c.delta, c.steps, c.kappa, c.bonus)
    }

    pub fn trial_config(&self, policy: crate::bandit::PolicyKind) -> Result<TrialConfig> {
        let c = &self.config;
        let mut p = Policy::new(policy, c.metric, self.bonus_params()?);
        p.burn_in = c.burn_in;
        p.threshold = c.threshold;
        TrialConfig::with_true_scores(
            p,
            c.steps,
            c.batch_size,
            self.arms.clone(),
            self.reference.clone(),
            self.true_scores.clone(),
        )
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.config.trials as u64)
            .map(|k| self.config.seed.wrapping_add(k))
            .collect()
    }

    /// Runs every (policy, trial) pair; logs are ordered by policy, then trial.
    pub fn run_all(&self) -> Result<Vec<TrialLog>> {
        let configs = self
            .config
            .policies
            .iter()
            .map(|&p| self.trial_config(p))
            .collect::<Result<Vec<_>>>()?;
        let seeds = self.trial_seeds();
        let jobs: Vec<(usize, u64)> = (0..configs.len())
            .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
            .collect();
        jobs.par_iter()
            .map(|&(p, s)| run_trial(&configs[p], s))
            .collect()
    }
}

/// Rows of one policy's aggregate, in step order.
#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub policy: crate::bandit::PolicyKind,
    pub rows: Vec<AggregateRow>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logs: Vec<TrialLog>,
    pub summaries: Vec<PolicySummary>,
    pub trials_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: String,
    per_step_delta: f64,
    optimal_arm: usize,
    true_scores: &'a [f64],
    trial_seeds: Vec<u64>,
    config: &'a ExperimentConfig,
}

/// Runs the experiment and writes its output files into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let exp = Experiment::load(config)?;
    let logs = exp.run_all()?;
    let mut summaries = Vec::new();
    for (i, &policy) in config.policies.iter().enumerate() {
        let slice = &logs[i * config.trials..(i + 1) * config.trials];
        summaries.push(PolicySummary {
            policy,
            rows: aggregate(slice)?,
        });
    }

    fs::create_dir_all(out_dir)?;
    let trials_csv = out_dir.join("trials.csv");
    let aggregate_csv = out_dir.join("aggregate.csv");
    let manifest = out_dir.join("manifest.toml");
    fs::write(&trials_csv, trials_csv_text(&logs, config.arms.len(), config.trials))?;
    fs::write(&aggregate_csv, aggregate_csv_text(&summaries))?;

    let probe = exp.trial_config(config.policies[0])?;
    let m = Manifest {
        generator: format!("genselect {}", env!("CARGO_PKG_VERSION")),
        per_step_delta: exp.bonus_params()?.delta,
        optimal_arm: probe.optimal_arm(),
        true_scores: &exp.true_scores,
        trial_seeds: exp.trial_seeds(),
        config,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&manifest, text)?;

    Ok(RunOutput {
        logs,
        summaries,
        trials_csv,
        aggregate_csv,
        manifest,
    })
}

/// Per-trial CSV. `trials` is the number of trials per policy; logs must be
/// grouped by policy in runs of that length.
pub fn trials_csv_text(logs: &[TrialLog], arms: usize, trials: usize) -> String {
    let mut out = String::from("policy,trial,step,chosen_arm,inst_regret,cum_regret,avg_regret,opr");
    for g in 0..arms {
        let _ = write!(out, ",samples_arm{g}");
    }
    out.push('\n');
    for (i, log) in logs.iter().enumerate() {
        let trial = i % trials.max(1);
        for s in &log.steps {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                log.policy,
                trial,
                s.decision.step,
                s.decision.arm,
                s.inst_regret,
                s.cum_regret,
                s.avg_regret,
                s.opr
            );
            for c in &s.decision.counts {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn aggregate_csv_text(summaries: &[PolicySummary]) -> String {
    let mut out = String::from("policy,step,avg_regret_mean,avg_regret_stderr,opr_mean,opr_stderr\n");
    for s in summaries {
        for r in &s.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.policy, r.step, r.avg_regret_mean, r.avg_regret_stderr, r.opr_mean, r.opr_stderr
            );
        }
    }
    out
}

/// Empirical coverage of the confidence bound for one arm and sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub arm: usize,
    pub n: usize,
    pub trials: usize,
    /// Fraction of trials where the optimistic score bounded the true score,
    /// with the bonus evaluated at the arm's true covariance (FD) or the
    /// empirical variances (IS).
    pub coverage: f64,
    /// FD only: coverage when the bonus uses plug-in estimates.
    pub plugin_coverage: Option<f64>,
    pub target: f64,
    /// Below the sample size at which the guarantee applies.
    pub untested: bool,
    pub violated: bool,
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub metric: Metric,
    pub delta: f64,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn violations(&self) -> impl Iterator<Item = &CoverageRow> {
        self.rows.iter().filter(|r| r.violated)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,n,trials,coverage,plugin_coverage,target,untested,violated\n");
        for r in &self.rows {
            let plugin = r.plugin_coverage.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.arm, r.n, r.trials, r.coverage, plugin, r.target, r.untested, r.violated
            );
        }
        out
    }
}

/// Smallest `n` for which the FD guarantee holds: `⌈4 r(Σ) + log(3/δ)⌉`.
pub fn fd_min_samples(cov: &SymMatrix, delta: f64) -> Result<usize> {
    let r = if cov.trace() > 0.0 { effective_rank(cov)? } else { 1.0 };
    Ok((4.0 * r + (3.0 / delta).ln()).ceil() as usize)
}

/// Monte Carlo check of the optimism guarantees at the configured `δ`
/// (not divided by the horizon). Replay arms have no known truth and are
/// rejected.
pub fn check_bounds(config: &ExperimentConfig) -> Result<CoverageReport> {
    let exp = Experiment::load(config)?;
    if let Some(g) = exp.arms.iter().position(|a| !a.is_synthetic()) {
        return Err(Error::validation(
            format!("arms[{g}]"),
            "bound checks need synthetic arms with known truth",
        ));
    }
    let params = BonusParams::new(config.delta, config.kappa, config.bonus)?;
    let mut rows = Vec::new();
    for (g, spec) in exp.arms.iter().enumerate() {
        let (grid, min_n) = match spec {
            ArmSpec::Gaussian { cov, .. } => {
                let min_n = fd_min_samples(cov, config.delta)?;
                let grid = if config.check.sample_sizes.is_empty() {
                    vec![(min_n / 2).max(2), min_n, 2 * min_n, 4 * min_n]
                } else {
                    config.check.sample_sizes.clone()
                };
                (grid, min_n)
            }
            _ => {
                let grid = if config.check.sample_sizes.is_empty() {
                    vec![10, 50, 200]
                } else {
                    config.check.sample_sizes.clone()
                };
                (grid, 2)
            }
        };
        let arm_seed = derive_seed(config.seed, g as u64);
        for &n in &grid {
            let n_seed = derive_seed(arm_seed, n as u64);
            let outcomes = (0..config.check.trials as u64)
                .into_par_iter()
                .map(|t| {
                    coverage_trial(spec, g, n, derive_seed(n_seed, t), exp.true_scores[g], &exp, &params, config)
                })
                .collect::<Result<Vec<_>>>()?;
            let trials = outcomes.len() as f64;
            let coverage = outcomes.iter().filter(|o| o.0).count() as f64 / trials;
            let plugin_coverage = match config.metric {
                Metric::Fd => Some(outcomes.iter().filter(|o| o.1).count() as f64 / trials),
                Metric::Is => None,
            };
            let target = 1.0 - config.delta;
            let untested = n < min_n;
            rows.push(CoverageRow {
                arm: g,
                n,
                trials: outcomes.len(),
                coverage,
                plugin_coverage,
                target,
                untested,
                violated: !untested && coverage < target - COVERAGE_SLACK,
            });
        }
    }
    Ok(CoverageReport {
        metric: config.metric,
        delta: config.delta,
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn coverage_trial(
    spec: &ArmSpec,
    g: usize,
    n: usize,
    seed: u64,
    truth: f64,
    exp: &Experiment,
    params: &BonusParams,
    config: &ExperimentConfig,
) -> Result<(bool, bool)> {
    let mut arm = spec.build(g, seed)?;
    let samples = arm.pull(n)?;
    match (config.metric, spec) {
        (Metric::Fd, ArmSpec::Gaussian { cov, .. }) => {
            let reference = exp.reference.as_deref().expect("validated");
            let m = StreamingMoments::from_samples(spec.dim(), &samples)?;
            let emp_cov = m.covariance()?;
            let fd = frechet_distance(m.mean(), &emp_cov, reference)?;
            let md = reference.mean_distance(m.mean());
            let bonus_at = |c: &SymMatrix| -> Result<f64> {
                match params.mode {
                    BonusMode::Plugin => Ok(fd_bonus(
                        &ArmMomentSummary::from_covariance(n, c, md)?,
                        reference.trace_sqrt_ref(),
                        params,
                    )),
                    BonusMode::BoundedNorm { c: bound } => fd_bonus_bounded(
                        &ArmMomentSummary::norm_bounded(n, spec.dim(), bound, md),
                        reference.trace_sqrt_ref(),
                        params,
                    ),
                }
            };
            let exact = fd - bonus_at(cov)? <= truth;
            let plugged = threshold_covariance(&emp_cov, n, config.threshold);
            let plugin = fd - bonus_at(&plugged)? <= truth;
            Ok((exact, plugin))
        }
        (Metric::Is, ArmSpec::Categorical { .. }) => {
            let profile = ClassProfile::from_probs(spec.dim(), samples)?;
            let s = IsSummary::from_profile(&profile)?;
            let covered = optimistic_is(&s, params.delta)? >= truth;
            Ok((covered, covered))
        }
        _ => Err(Error::Config("arm kind does not match metric".into())),
    }
}
