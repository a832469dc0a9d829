//! Sample sources ("arms") the bandit pulls from.
//!
//! Synthetic arms carry closed-form ground truth: Gaussian arms for FD and
//! finite mixtures of class-probability prototypes for IS. Replay arms serve
//! rows of a precomputed embedding dataset.
//!
//! Every arm owns its own seeded ChaCha stream, so the samples an arm
//! produces depend only on its seed and how many pulls it has served, not on
//! how pulls of different arms are interleaved.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embeddings::Dataset;
use crate::error::{Error, Result};
use crate::matstats::{psd_factor, StreamingMoments, SymMatrix};
use crate::scores::{
    empirical_is, entropy_functional, frechet_distance, validate_probability_vector, ClassProfile,
    RefStats,
};

/// What a score is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fd,
    Is,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Fd => "fd",
            Metric::Is => "is",
        })
    }
}

/// A source of samples: embeddings for FD, class-probability vectors for IS.
pub trait Arm: Send {
    /// Length of each returned vector.
    fn dim(&self) -> usize;

    /// Draws exactly `batch_size` samples.
    fn pull(&mut self, batch_size: usize) -> Result<Vec<Vec<f64>>>;
}

/// SplitMix64 finalizer used to derive independent seeds from `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD2B7_4407_B1CE_6E93));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `N(mean, cov)` embeddings.
#[derive(Debug, Clone)]
pub struct GaussianArm {
    mean: Vec<f64>,
    cov: SymMatrix,
    factor: Vec<f64>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl GaussianArm {
    pub fn new(mean: Vec<f64>, cov: SymMatrix, seed: u64) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        let factor = psd_factor(&cov)?;
        Ok(Self {
            mean,
            cov,
            factor,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn sample(&mut self) -> Vec<f64> {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| {
                let row = &self.factor[i * d..(i + 1) * d];
                self.mean[i] + row.iter().zip(&z).map(|(f, z)| f * z).sum::<f64>()
            })
            .collect()
    }
}

impl Arm for GaussianArm {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn pull(&mut self, batch_size: usize) -> Result<Vec<Vec<f64>>> {
        Ok((0..batch_size).map(|_| self.sample()).collect())
    }
}

/// Closed-form FD of a Gaussian arm against the reference.
pub fn true_fd(arm: &GaussianArm, reference: &RefStats) -> Result<f64> {
    frechet_distance(arm.mean(), arm.cov(), reference)
}

/// Same arm with covariance scaled by `τ²`, `τ ∈ (0, 1]`. Emulates drawing
/// from truncated latent noise: lower `τ` trades diversity for fidelity.
pub fn truncate_variance(arm: &GaussianArm, tau: f64) -> Result<GaussianArm> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Domain(format!("truncation factor {tau} outside (0, 1]")));
    }
    GaussianArm::new(arm.mean.clone(), arm.cov.scaled(tau * tau), arm.seed)
}

/// Class-probability vectors drawn from a finite weighted set of prototypes.
#[derive(Debug, Clone)]
pub struct CategoricalArm {
    prototypes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sampler: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl CategoricalArm {
    pub fn new(prototypes: Vec<Vec<f64>>, weights: Vec<f64>, seed: u64) -> Result<Self> {
        let classes = prototypes
            .first()
            .map(|p| p.len())
            .ok_or(Error::Degenerate("categorical arm without prototypes"))?;
        if weights.len() != prototypes.len() {
            return Err(Error::DimensionMismatch {
                expected: prototypes.len(),
                got: weights.len(),
            });
        }
        for p in &prototypes {
            validate_probability_vector(p, classes)?;
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || !(total > 0.0) {
            return Err(Error::Domain("mixture weights must be non-negative with positive sum".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::Domain(format!("mixture weights: {e}")))?;
        Ok(Self {
            prototypes,
            weights,
            sampler,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// `classes` equally weighted prototypes; prototype `k` puts `peak` on
    /// class `k` and spreads the rest evenly. The marginal is uniform.
    pub fn symmetric(classes: usize, peak: f64, seed: u64) -> Result<Self> {
        let (prototypes, weights) = symmetric_mixture(classes, peak)?;
        Self::new(prototypes, weights, seed)
    }

    /// Symmetric mixture whose true IS equals `target`, `1 ≤ target ≤ classes`.
    pub fn symmetric_with_is(classes: usize, target: f64, seed: u64) -> Result<Self> {
        let peak = symmetric_peak_for_is(classes, target)?;
        Self::symmetric(classes, peak, seed)
    }

    pub fn classes(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// Normalized mixture weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Arm for CategoricalArm {
    fn dim(&self) -> usize {
        self.classes()
    }

    fn pull(&mut self, batch_size: usize) -> Result<Vec<Vec<f64>>> {
        Ok((0..batch_size)
            .map(|_| self.prototypes[self.sampler.sample(&mut self.rng)].clone())
            .collect())
    }
}

pub fn symmetric_mixture(classes: usize, peak: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if classes < 2 {
        return Err(Error::Domain("symmetric mixture needs at least two classes".into()));
    }
    if !(0.0..=1.0).contains(&peak) {
        return Err(Error::Domain(format!("peak {peak} outside [0, 1]")));
    }
    let rest = (1.0 - peak) / (classes - 1) as f64;
    let prototypes = (0..classes)
        .map(|k| (0..classes).map(|j| if j == k { peak } else { rest }).collect())
        .collect();
    Ok((prototypes, vec![1.0 / classes as f64; classes]))
}

/// Bisection on the peak mass; the true IS of the symmetric mixture rises
/// monotonically from 1 at `peak = 1/d` to `d` at `peak = 1`.
pub fn symmetric_peak_for_is(classes: usize, target: f64) -> Result<f64> {
    let d = classes as f64;
    if !(target >= 1.0 && target <= d) {
        return Err(Error::Domain(format!("target IS {target} outside [1, {classes}]")));
    }
    let is_at = |peak: f64| -> Result<f64> {
        let (p, w) = symmetric_mixture(classes, peak)?;
        mixture_is(&p, &w)
    };
    let (mut lo, mut hi) = (1.0 / d, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if is_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `exp(H(Σ wₖ pₖ) − Σ wₖ H(pₖ))` for a finite mixture.
pub fn mixture_is(prototypes: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let classes = prototypes[0].len();
    let mut marginal = vec![0.0; classes];
    let mut cond = 0.0;
    for (p, &w) in prototypes.iter().zip(weights) {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += w * v;
        }
        cond += w * entropy_functional(p)?;
    }
    Ok((entropy_functional(&marginal)? - cond).exp())
}

/// True IS of a categorical arm.
pub fn true_is(arm: &CategoricalArm) -> Result<f64> {
    mixture_is(arm.prototypes(), arm.weights())
}

/// Replays rows of a dataset, with or without replacement.
#[derive(Debug, Clone)]
pub struct ReplayArm {
    id: usize,
    data: Arc<Dataset>,
    with_replacement: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    normalize: bool,
}

/// Sums within this distance of one are treated as `f32` rounding.
pub const F32_SUM_TOLERANCE: f64 = 1e-5;

/// Rescales a row to sum to one in `f64`. Probability vectors stored as `f32`
/// only sum to one within about `1e-7`; rows further off are left untouched
/// so validation still rejects them.
pub fn normalize_row(mut row: Vec<f64>) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() <= F32_SUM_TOLERANCE {
        row.iter_mut().for_each(|v| *v /= total);
    }
    row
}

impl ReplayArm {
    pub fn new(id: usize, data: Arc<Dataset>, with_replacement: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = Vec::new();
        if !with_replacement {
            order = (0..data.count()).collect();
            order.shuffle(&mut rng);
        }
        Self {
            id,
            data,
            with_replacement,
            rng,
            order,
            cursor: 0,
            normalize: false,
        }
    }

    /// Serves every row rescaled to sum to one (class-probability data).
    pub fn normalizing_rows(mut self) -> Self {
        self.normalize = true;
        self
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let r = self.data.row_f64(i);
        if self.normalize {
            normalize_row(r)
        } else {
            r
        }
    }

    /// Rows not yet served (without-replacement mode).
    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }
}

impl Arm for ReplayArm {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn pull(&mut self, batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let count = self.data.count();
        if self.with_replacement {
            if count == 0 {
                return Err(Error::Exhausted {
                    arm: self.id,
                    remaining: 0,
                    requested: batch_size,
                });
            }
            return Ok((0..batch_size)
                .map(|_| {
                    let i = self.rng.random_range(0..count);
                    self.row(i)
                })
                .collect());
        }
        if self.remaining() < batch_size {
            return Err(Error::Exhausted {
                arm: self.id,
                remaining: self.remaining(),
                requested: batch_size,
            });
        }
        let rows = self.order[self.cursor..self.cursor + batch_size]
            .iter()
            .map(|&i| self.row(i))
            .collect();
        self.cursor += batch_size;
        Ok(rows)
    }
}

/// Parameters from which an arm can be (re)built for any seed.
#[derive(Debug, Clone)]
pub enum ArmSpec {
    Gaussian {
        mean: Vec<f64>,
        cov: SymMatrix,
    },
    Categorical {
        prototypes: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// `probabilities` marks class-probability rows, which are renormalized
    /// on the way out.
    Replay {
        data: Arc<Dataset>,
        with_replacement: bool,
        probabilities: bool,
    },
}

impl ArmSpec {
    pub fn build(&self, id: usize, seed: u64) -> Result<Box<dyn Arm>> {
        Ok(match self {
            ArmSpec::Gaussian { mean, cov } => Box::new(GaussianArm::new(mean.clone(), cov.clone(), seed)?),
            ArmSpec::Categorical {
                prototypes,
                weights,
            } => Box::new(CategoricalArm::new(prototypes.clone(), weights.clone(), seed)?),
            ArmSpec::Replay {
                data,
                with_replacement,
                probabilities,
            } => {
                let arm = ReplayArm::new(id, data.clone(), *with_replacement, seed);
                Box::new(if *probabilities { arm.normalizing_rows() } else { arm })
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            ArmSpec::Gaussian { mean, .. } => mean.len(),
            ArmSpec::Categorical { prototypes, .. } => prototypes.first().map_or(0, |p| p.len()),
            ArmSpec::Replay { data, .. } => data.dim(),
        }
    }

    pub fn is_synthetic(&self) -> bool {
        !matches!(self, ArmSpec::Replay { .. })
    }

    /// Ground-truth score: closed form for synthetic arms, the full-dataset
    /// empirical score for replay arms.
    pub fn true_score(&self, metric: Metric, reference: Option<&RefStats>) -> Result<f64> {
        match (metric, self) {
            (Metric::Fd, ArmSpec::Gaussian { mean, cov }) => {
                frechet_distance(mean, cov, require_ref(reference)?)
            }
            (Metric::Fd, ArmSpec::Replay { data, .. }) => {
                let m = StreamingMoments::from_samples(data.dim(), &data.rows_f64())?;
                frechet_distance(m.mean(), &m.covariance()?, require_ref(reference)?)
            }
            (Metric::Is, ArmSpec::Categorical {
                prototypes,
                weights,
            }) => {
                let total: f64 = weights.iter().sum();
                let w: Vec<f64> = weights.iter().map(|w| w / total).collect();
                mixture_is(prototypes, &w)
            }
            (Metric::Is, ArmSpec::Replay { data, .. }) => {
                let rows = data.rows_f64().into_iter().map(normalize_row).collect();
                let profile = ClassProfile::from_probs(data.dim(), rows)?;
                empirical_is(&profile)
            }
            (m, _) => Err(Error::Config(format!("arm type does not produce {m} samples"))),
        }
    }
}

fn require_ref(reference: Option<&RefStats>) -> Result<&RefStats> {
    reference.ok_or_else(|| Error::Config("FD scoring requires reference statistics".into()))
}
