//! The online evaluation loop: pick an arm, draw a batch, update its
//! statistics, rescore it, and account regret and optimal-pick ratio.
//!
//! FD policies pick the arm with the lowest (optimistic) distance, IS
//! policies the arm with the highest (optimistic) score. Arms with fewer than
//! two samples carry a sentinel score (`−∞` for FD, `+∞` for IS) so each arm
//! is explored before any statistic is trusted. Ties go to the lowest index.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arms::{derive_seed, Arm, ArmSpec, Metric};
use crate::bonus::{
    empirical_is_from_summary, fd_bonus, fd_bonus_bounded, naive_bonus_fd, naive_bonus_is,
    optimistic_is, optimistic_is_exponent_with, ArmMomentSummary, BonusMode, BonusParams,
    IsSummary,
};
use crate::error::{Error, Result};
use crate::matstats::{threshold_covariance, RunningMoments, StreamingMoments};
use crate::scores::{entropy_functional, frechet_distance, validate_probability_vector, RefStats};

/// Seed stream reserved for the policy's own randomness (Random baseline).
const POLICY_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FdUcb,
    IsUcb,
    NaiveUcb,
    Greedy,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::FdUcb => "fd_ucb",
            PolicyKind::IsUcb => "is_ucb",
            PolicyKind::NaiveUcb => "naive_ucb",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Random => "random",
        }
    }

    pub fn supports(self, metric: Metric) -> bool {
        match self {
            PolicyKind::FdUcb => metric == Metric::Fd,
            PolicyKind::IsUcb => metric == Metric::Is,
            _ => true,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub metric: Metric,
    pub bonus: BonusParams,
    /// Samples drawn from every arm before the first step (FD-UCB only).
    pub burn_in: usize,
    /// Covariance thresholding multiplier for plugin bonus estimation; 0 disables.
    pub threshold: f64,
}

impl Policy {
    pub fn new(kind: PolicyKind, metric: Metric, bonus: BonusParams) -> Self {
        Self {
            kind,
            metric,
            bonus,
            burn_in: 0,
            threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kind.supports(self.metric) {
            return Err(Error::Config(format!(
                "policy {} cannot run with metric {}",
                self.kind, self.metric
            )));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::validation("threshold", "must be non-negative"));
        }
        self.bonus.validate()
    }

    /// Burn-in actually applied: only FD-UCB draws burn-in samples.
    pub fn effective_burn_in(&self) -> usize {
        if self.kind == PolicyKind::FdUcb {
            self.burn_in
        } else {
            0
        }
    }
}

#[derive(Debug, Clone)]
enum Accumulator {
    Fd(StreamingMoments),
    Is {
        classes: Vec<RunningMoments>,
        entropy: RunningMoments,
    },
}

/// Per-arm streaming state and current scores.
#[derive(Debug, Clone)]
pub struct ArmState {
    pub id: usize,
    acc: Accumulator,
    pub n: usize,
    pub optimistic_score: f64,
    pub empirical_score: f64,
    pub bonus: f64,
}

impl ArmState {
    pub fn new(id: usize, metric: Metric, dim: usize) -> Self {
        let acc = match metric {
            Metric::Fd => Accumulator::Fd(StreamingMoments::new(dim)),
            Metric::Is => Accumulator::Is {
                classes: vec![RunningMoments::new(); dim],
                entropy: RunningMoments::new(),
            },
        };
        let sentinel = sentinel(metric);
        Self {
            id,
            acc,
            n: 0,
            optimistic_score: sentinel,
            empirical_score: sentinel,
            bonus: f64::INFINITY,
        }
    }

    pub fn observe(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        match &mut self.acc {
            Accumulator::Fd(m) => m.update(batch)?,
            Accumulator::Is { classes, entropy } => {
                for p in batch {
                    validate_probability_vector(p, classes.len())?;
                }
                for p in batch {
                    for (acc, &v) in classes.iter_mut().zip(p) {
                        acc.push(v);
                    }
                    entropy.push(entropy_functional(p)?);
                }
            }
        }
        self.n += batch.len();
        Ok(())
    }

    pub fn moments(&self) -> Option<&StreamingMoments> {
        match &self.acc {
            Accumulator::Fd(m) => Some(m),
            Accumulator::Is { .. } => None,
        }
    }

    /// Sufficient statistics for IS scoring, once two samples are in.
    pub fn is_summary(&self) -> Option<IsSummary> {
        match &self.acc {
            Accumulator::Is { classes, entropy } if self.n >= 2 => Some(IsSummary {
                n: self.n,
                classes: classes.len(),
                cond_entropy_mean: entropy.mean(),
                cond_entropy_variance: entropy.sample_variance().unwrap_or(0.0),
                mean_cond_probs: classes.iter().map(|c| c.mean()).collect(),
                per_class_variances: classes
                    .iter()
                    .map(|c| c.sample_variance().unwrap_or(0.0))
                    .collect(),
            }),
            _ => None,
        }
    }

    /// Recomputes empirical and optimistic scores from the current statistics.
    pub fn rescore(&mut self, policy: &Policy, reference: Option<&RefStats>) -> Result<()> {
        if self.n < 2 {
            let s = sentinel(policy.metric);
            self.optimistic_score = s;
            self.empirical_score = s;
            self.bonus = f64::INFINITY;
            return Ok(());
        }
        match policy.metric {
            Metric::Fd => self.rescore_fd(policy, reference),
            Metric::Is => self.rescore_is(policy),
        }
    }

    fn rescore_fd(&mut self, policy: &Policy, reference: Option<&RefStats>) -> Result<()> {
        let reference =
            reference.ok_or_else(|| Error::Config("FD scoring requires reference statistics".into()))?;
        let moments = self
            .moments()
            .ok_or_else(|| Error::Config("arm state holds IS statistics".into()))?;
        let mean = moments.mean();
        let cov = moments.covariance()?;
        let empirical = frechet_distance(mean, &cov, reference)?;
        let trs = reference.trace_sqrt_ref();
        let bonus = match policy.kind {
            PolicyKind::FdUcb => match policy.bonus.mode {
                BonusMode::Plugin => {
                    let est = threshold_covariance(&cov, self.n, policy.threshold);
                    let s = ArmMomentSummary::from_covariance(self.n, &est, reference.mean_distance(mean))?;
                    fd_bonus(&s, trs, &policy.bonus)
                }
                BonusMode::BoundedNorm { c } => {
                    let s = ArmMomentSummary::norm_bounded(self.n, cov.dim(), c, reference.mean_distance(mean));
                    fd_bonus_bounded(&s, trs, &policy.bonus)?
                }
            },
            PolicyKind::NaiveUcb => naive_bonus_fd(self.n, cov.dim(), trs, &policy.bonus),
            PolicyKind::Greedy | PolicyKind::Random => 0.0,
            PolicyKind::IsUcb => return Err(Error::Config("is_ucb cannot score FD arms".into())),
        };
        self.empirical_score = empirical;
        self.bonus = bonus;
        self.optimistic_score = empirical - bonus;
        Ok(())
    }

    fn rescore_is(&mut self, policy: &Policy) -> Result<()> {
        let summary = self
            .is_summary()
            .ok_or_else(|| Error::Config("arm state holds FD statistics".into()))?;
        let empirical = empirical_is_from_summary(&summary)?;
        let optimistic = match policy.kind {
            PolicyKind::IsUcb => optimistic_is(&summary, policy.bonus.delta)?,
            PolicyKind::NaiveUcb => {
                let terms = naive_bonus_is(summary.n, summary.classes, policy.bonus.delta)?;
                optimistic_is_exponent_with(&summary, &terms)?.exp()
            }
            PolicyKind::Greedy | PolicyKind::Random => empirical,
            PolicyKind::FdUcb => return Err(Error::Config("fd_ucb cannot score IS arms".into())),
        };
        self.empirical_score = empirical;
        self.optimistic_score = optimistic;
        self.bonus = optimistic - empirical;
        Ok(())
    }
}

fn sentinel(metric: Metric) -> f64 {
    match metric {
        Metric::Fd => f64::NEG_INFINITY,
        Metric::Is => f64::INFINITY,
    }
}

/// Index of the best score (lowest for FD, highest for IS); ties go to the
/// lowest index.
pub fn best_index(scores: impl IntoIterator<Item = f64>, metric: Metric) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => match metric {
                Metric::Fd => s < b,
                Metric::Is => s > b,
            },
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Chooses the next arm.
pub fn select<R: Rng + ?Sized>(policy: &Policy, states: &[ArmState], rng: &mut R) -> Result<usize> {
    if states.is_empty() {
        return Err(Error::Degenerate("empty arm set"));
    }
    // Every arm is pulled once before any score is compared; the sentinel
    // alone would not guarantee this when b = 1.
    if let Some(s) = states.iter().find(|s| s.n == 0) {
        return Ok(s.id);
    }
    match policy.kind {
        PolicyKind::Random => Ok(states[rng.random_range(0..states.len())].id),
        PolicyKind::Greedy => {
            let i = best_index(states.iter().map(|s| s.empirical_score), policy.metric).unwrap();
            Ok(states[i].id)
        }
        _ => {
            let i = best_index(states.iter().map(|s| s.optimistic_score), policy.metric).unwrap();
            Ok(states[i].id)
        }
    }
}

/// Per-step record of what the policy saw and chose.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    /// 1-based step index.
    pub step: usize,
    pub arm: usize,
    /// Scores of the chosen arm after its update.
    pub optimistic_score: f64,
    pub empirical_score: f64,
    pub bonus: f64,
    /// Samples drawn so far from each arm, burn-in included.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub decision: PolicyDecision,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub avg_regret: f64,
    pub opr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub policy: PolicyKind,
    pub seed: u64,
    pub true_scores: Vec<f64>,
    pub optimal_arm: usize,
    /// Regret charged for burn-in, `Σ_g (N/b)·gap_g`.
    pub burn_in_regret: f64,
    pub steps: Vec<StepRecord>,
}

impl TrialLog {
    pub fn final_avg_regret(&self) -> Option<f64> {
        self.steps.last().map(|s| s.avg_regret)
    }

    pub fn final_opr(&self) -> Option<f64> {
        self.steps.last().map(|s| s.opr)
    }
}

/// Everything needed to run one trial of one policy.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub policy: Policy,
    pub horizon: usize,
    pub batch_size: usize,
    pub arms: Vec<ArmSpec>,
    pub reference: Option<Arc<RefStats>>,
    pub true_scores: Vec<f64>,
}

impl TrialConfig {
    /// Validates the setup and computes each arm's ground-truth score.
    pub fn new(
        policy: Policy,
        horizon: usize,
        batch_size: usize,
        arms: Vec<ArmSpec>,
        reference: Option<Arc<RefStats>>,
    ) -> Result<Self> {
        let true_scores = arms
            .iter()
            .map(|a| a.true_score(policy.metric, reference.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        Self::with_true_scores(policy, horizon, batch_size, arms, reference, true_scores)
    }

    pub fn with_true_scores(
        policy: Policy,
        horizon: usize,
        batch_size: usize,
        arms: Vec<ArmSpec>,
        reference: Option<Arc<RefStats>>,
        true_scores: Vec<f64>,
    ) -> Result<Self> {
        policy.validate()?;
        if arms.is_empty() {
            return Err(Error::validation("arms", "at least one arm is required"));
        }
        if batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if true_scores.len() != arms.len() {
            return Err(Error::DimensionMismatch {
                expected: arms.len(),
                got: true_scores.len(),
            });
        }
        if policy.metric == Metric::Fd {
            let r = reference
                .as_ref()
                .ok_or_else(|| Error::Config("FD runs require reference statistics".into()))?;
            for a in &arms {
                if a.dim() != r.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: r.dim(),
                        got: a.dim(),
                    });
                }
            }
        }
        Ok(Self {
            policy,
            horizon,
            batch_size,
            arms,
            reference,
            true_scores,
        })
    }

    pub fn optimal_arm(&self) -> usize {
        best_index(self.true_scores.iter().copied(), self.policy.metric).unwrap()
    }

    /// Non-negative gap between the best true score and arm `g`'s.
    pub fn gap(&self, g: usize) -> f64 {
        let best = self.true_scores[self.optimal_arm()];
        match self.policy.metric {
            Metric::Fd => self.true_scores[g] - best,
            Metric::Is => best - self.true_scores[g],
        }
    }
}

/// The mutable state of one trial in progress.
pub struct LoopState {
    config: TrialConfig,
    arms: Vec<Box<dyn Arm>>,
    states: Vec<ArmState>,
    rng: ChaCha8Rng,
    optimal_picks: usize,
    gaps: Vec<f64>,
    log: TrialLog,
}

impl LoopState {
    /// Builds the arms for `seed`; arm `g` uses stream `g` of the seed so all
    /// policies in a trial see the same per-arm sample sequences.
    pub fn new(config: TrialConfig, seed: u64) -> Result<Self> {
        let metric = config.policy.metric;
        let arms = config
            .arms
            .iter()
            .enumerate()
            .map(|(g, spec)| spec.build(g, derive_seed(seed, g as u64)))
            .collect::<Result<Vec<_>>>()?;
        let states = arms
            .iter()
            .enumerate()
            .map(|(g, a)| ArmState::new(g, metric, a.dim()))
            .collect();
        let gaps = (0..config.arms.len()).map(|g| config.gap(g)).collect();
        let log = TrialLog {
            policy: config.policy.kind,
            seed,
            true_scores: config.true_scores.clone(),
            optimal_arm: config.optimal_arm(),
            burn_in_regret: 0.0,
            steps: Vec::with_capacity(config.horizon),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, POLICY_STREAM)),
            config,
            arms,
            states,
            optimal_picks: 0,
            gaps,
            log,
        })
    }

    pub fn states(&self) -> &[ArmState] {
        &self.states
    }

    pub fn log(&self) -> &TrialLog {
        &self.log
    }

    pub fn into_log(self) -> TrialLog {
        self.log
    }

    /// Draws `N` samples from every arm and charges `N/b` pseudo-steps of
    /// regret per arm at that arm's gap.
    pub fn burn_in(&mut self) -> Result<()> {
        let n = self.config.policy.effective_burn_in();
        if n == 0 {
            return Ok(());
        }
        let reference = self.config.reference.clone();
        for g in 0..self.arms.len() {
            let batch = self.arms[g].pull(n)?;
            self.states[g].observe(&batch)?;
            self.states[g].rescore(&self.config.policy, reference.as_deref())?;
        }
        let pseudo_steps = n as f64 / self.config.batch_size as f64;
        self.log.burn_in_regret = self.gaps.iter().map(|gap| pseudo_steps * gap).sum();
        Ok(())
    }

    /// Runs one protocol step and returns its record.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let policy = self.config.policy;
        let g = select(&policy, &self.states, &mut self.rng)?;
        let batch = self.arms[g].pull(self.config.batch_size)?;
        self.states[g].observe(&batch)?;
        self.states[g].rescore(&policy, self.config.reference.as_deref())?;

        let t = self.log.steps.len() + 1;
        let inst_regret = self.gaps[g];
        let prev = self
            .log
            .steps
            .last()
            .map_or(self.log.burn_in_regret, |s| s.cum_regret);
        let cum_regret = prev + inst_regret;
        if g == self.log.optimal_arm {
            self.optimal_picks += 1;
        }
        let s = &self.states[g];
        self.log.steps.push(StepRecord {
            decision: PolicyDecision {
                step: t,
                arm: g,
                optimistic_score: s.optimistic_score,
                empirical_score: s.empirical_score,
                bonus: s.bonus,
                counts: self.states.iter().map(|s| s.n).collect(),
            },
            inst_regret,
            cum_regret,
            avg_regret: cum_regret / t as f64,
            opr: self.optimal_picks as f64 / t as f64,
        });
        Ok(self.log.steps.last().unwrap())
    }
}

/// Burn-in followed by `horizon` policy steps. Deterministic per seed.
pub fn run_trial(config: &TrialConfig, seed: u64) -> Result<TrialLog> {
    let mut state = LoopState::new(config.clone(), seed)?;
    state.burn_in()?;
    for _ in 0..config.horizon {
        state.step()?;
    }
    Ok(state.into_log())
}

/// Pointwise mean and standard error across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: usize,
    pub avg_regret_mean: f64,
    pub avg_regret_stderr: f64,
    pub opr_mean: f64,
    pub opr_stderr: f64,
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(logs: &[TrialLog]) -> Result<Vec<AggregateRow>> {
    let first = logs
        .first()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let len = first.steps.len();
    for log in logs {
        if log.steps.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: log.steps.len(),
            });
        }
    }
    let mut rows = Vec::with_capacity(len);
    let mut regrets = vec![0.0; logs.len()];
    let mut oprs = vec![0.0; logs.len()];
    for t in 0..len {
        for (k, log) in logs.iter().enumerate() {
            regrets[k] = log.steps[t].avg_regret;
            oprs[k] = log.steps[t].opr;
        }
        let (rm, rs) = mean_and_stderr(&regrets);
        let (om, os) = mean_and_stderr(&oprs);
        rows.push(AggregateRow {
            step: t + 1,
            avg_regret_mean: rm,
            avg_regret_stderr: rs,
            opr_mean: om,
            opr_stderr: os,
        });
    }
    Ok(rows)
}
