//! Confidence bonuses that turn empirical FD and IS into optimistic scores.
//!
//! FD bonuses subtract from the empirical distance (lower confidence bound),
//! IS bonuses are added inside the exponent (upper confidence bound). The
//! failure probability stored in [`BonusParams`] is the per-step value, i.e.
//! the user's total budget already divided by the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstats::{sym_eigen, SymMatrix};
use crate::scores::{clip_toward_inv_e, entropy_functional, ClassProfile};

/// How the generator-dependent quantities of the FD bonus are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BonusMode {
    /// Estimated online from the samples collected so far.
    Plugin,
    /// Derived from a known bound `‖f(X)‖₂ ≤ c` on embedding norms.
    BoundedNorm { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusParams {
    /// Per-step failure probability in `(0, 1)`.
    pub delta: f64,
    /// Sub-Gaussian norm constant of the covariance concentration term.
    pub kappa: f64,
    pub mode: BonusMode,
}

impl BonusParams {
    pub fn new(delta: f64, kappa: f64, mode: BonusMode) -> Result<Self> {
        let p = Self { delta, kappa, mode };
        p.validate()?;
        Ok(p)
    }

    /// Splits a total failure budget evenly over `horizon` steps.
    pub fn for_horizon(total_delta: f64, horizon: usize, kappa: f64, mode: BonusMode) -> Result<Self> {
        if !(total_delta > 0.0 && total_delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        if horizon == 0 {
            return Err(Error::validation("steps", "must be at least 1"));
        }
        Self::new(total_delta / horizon as f64, kappa, mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::validation("kappa", "must be positive and finite"));
        }
        if let BonusMode::BoundedNorm { c } = self.mode {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::validation("norm_bound", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Generator-dependent quantities entering the FD bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMomentSummary {
    pub n: usize,
    pub dim: usize,
    /// `Tr[Σ]`.
    pub trace_cov: f64,
    /// `√Tr[Σ²]`.
    pub trace_cov_sq_sqrt: f64,
    /// `‖Σ‖₂`.
    pub spec_norm: f64,
    /// `Tr[Σ]/‖Σ‖₂`, taken as 1 for a zero matrix.
    pub eff_rank: f64,
    /// `‖μ̂ − μ_r‖₂`.
    pub mean_dist_ref: f64,
}

impl ArmMomentSummary {
    /// Summary of a (plugin-estimated or true) covariance matrix.
    pub fn from_covariance(n: usize, cov: &SymMatrix, mean_dist_ref: f64) -> Result<Self> {
        let eig = sym_eigen(cov)?;
        let spec_norm = eig.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
        let trace_cov = cov.trace();
        let eff_rank = if spec_norm > 0.0 {
            (trace_cov / spec_norm).max(1.0)
        } else {
            1.0
        };
        Ok(Self {
            n,
            dim: cov.dim(),
            trace_cov,
            trace_cov_sq_sqrt: cov.trace_of_square().sqrt(),
            spec_norm,
            eff_rank,
            mean_dist_ref,
        })
    }

    /// Worst-case parameters implied by `‖f(X)‖₂ ≤ c`: `Tr[Σ] ≤ c²`,
    /// `‖Σ‖₂ ≤ c²`, and `‖Σ‖₂·√(4r + L) ≤ c²·√(4 + L)` so `r` is taken as 1.
    pub fn norm_bounded(n: usize, dim: usize, c: f64, mean_dist_ref: f64) -> Self {
        let c2 = c * c;
        Self {
            n,
            dim,
            trace_cov: c2,
            trace_cov_sq_sqrt: c2,
            spec_norm: c2,
            eff_rank: 1.0,
            mean_dist_ref,
        }
    }

    /// Data-independent, dimension-based stand-ins used by Naive-UCB:
    /// `Tr[Σ] = d`, `Tr[Σ²] = d`, `‖Σ‖₂ = 1`.
    pub fn naive(n: usize, dim: usize) -> Self {
        let d = dim as f64;
        Self {
            n,
            dim,
            trace_cov: d,
            trace_cov_sq_sqrt: d.sqrt(),
            spec_norm: 1.0,
            eff_rank: d,
            mean_dist_ref: 0.0,
        }
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

/// Mean-estimation radius
/// `Δ_μ = √((1/n)(√(8·Tr[Σ²]·log(6/δ)) + 8‖Σ‖₂·log(6/δ)))`.
pub fn delta_mu(s: &ArmMomentSummary, p: &BonusParams) -> f64 {
    let n = s.n as f64;
    let l6 = (6.0 / p.delta).ln();
    let tr_sq = s.trace_cov_sq_sqrt * s.trace_cov_sq_sqrt;
    (((8.0 * tr_sq * l6).sqrt() + 8.0 * s.spec_norm * l6) / n).sqrt()
}

/// Covariance-estimation radius in spectral norm
/// `Δ_Σ = 20κ²‖Σ‖₂·√((4r(Σ) + log(3/δ))/n) + Δ_μ²`.
pub fn delta_sigma(s: &ArmMomentSummary, p: &BonusParams) -> f64 {
    let n = s.n as f64;
    let l3 = (3.0 / p.delta).ln();
    let dmu = delta_mu(s, p);
    20.0 * p.kappa * p.kappa * s.spec_norm * ((4.0 * s.eff_rank + l3) / n).sqrt() + dmu * dmu
}

/// FD bonus for Gaussian embeddings.
pub fn fd_bonus(s: &ArmMomentSummary, trace_sqrt_ref: f64, p: &BonusParams) -> f64 {
    let n = s.n as f64;
    let l6 = (6.0 / p.delta).ln();
    let dmu = delta_mu(s, p);
    let dsig = delta_sigma(s, p);
    2.0 * dmu * (dmu + s.mean_dist_ref)
        + trace_sqrt_ref * (8.0 * dsig).sqrt()
        + s.trace_cov * (8.0 / n * l6).sqrt()
        + 8.0 * s.spec_norm / n * l6
}

/// FD bonus for embeddings with `‖f(X)‖₂ ≤ C`. Requires
/// [`BonusMode::BoundedNorm`].
pub fn fd_bonus_bounded(s: &ArmMomentSummary, trace_sqrt_ref: f64, p: &BonusParams) -> Result<f64> {
    let c = match p.mode {
        BonusMode::BoundedNorm { c } => c,
        BonusMode::Plugin => {
            return Err(Error::Config(
                "bounded-norm bonus requested with plugin bonus parameters".into(),
            ))
        }
    };
    let n = s.n as f64;
    let d = s.dim as f64;
    let c2 = c * c;
    let l3 = (3.0 / p.delta).ln();
    let delta1 = (2.0 * d * c2 / n * (6.0 * d / p.delta).ln() + s.trace_cov / n).sqrt();
    let delta2 = 20.0 * p.kappa * p.kappa * s.spec_norm * ((4.0 * s.eff_rank + l3) / n).sqrt()
        + delta1 * delta1;
    Ok(2.0 * (delta1 + s.mean_dist_ref) * delta1
        + trace_sqrt_ref * (8.0 * delta2).sqrt()
        + 4.0 * c2 * (l3 / (2.0 * n)).sqrt())
}

/// Naive-UCB FD bonus: [`fd_bonus`] at [`ArmMomentSummary::naive`].
pub fn naive_bonus_fd(n: usize, dim: usize, trace_sqrt_ref: f64, p: &BonusParams) -> f64 {
    fd_bonus(&ArmMomentSummary::naive(n, dim), trace_sqrt_ref, p)
}

/// One-sided empirical-Bernstein radius for i.i.d. draws in an interval of
/// width `range`: `√(2V·L/n) + 7·range·L/(3(n−1))`, where `L` is the log
/// confidence term (`log(2/δ)` for a single one-sided bound).
pub fn empirical_bernstein_radius(sample_variance: f64, n: usize, range: f64, log_term: f64) -> f64 {
    let nf = n as f64;
    (2.0 * sample_variance.max(0.0) / nf * log_term).sqrt()
        + 7.0 * range * log_term / (3.0 * (nf - 1.0))
}

/// Per-class radius `ε[j] = √(2V̂[j]/n·log(4d/δ)) + 7/(3(n−1))·log(4d/δ)`.
pub fn is_epsilon_vector(per_class_variances: &[f64], n: usize, classes: usize, delta: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if per_class_variances.len() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            got: per_class_variances.len(),
        });
    }
    let log_term = (4.0 * classes as f64 / delta).ln();
    Ok(per_class_variances
        .iter()
        .map(|&v| empirical_bernstein_radius(v, n, 1.0, log_term))
        .collect())
}

/// Sufficient statistics for the optimistic IS.
#[derive(Debug, Clone, PartialEq)]
pub struct IsSummary {
    pub n: usize,
    pub classes: usize,
    /// `Ĥ(Y|X)`, the mean conditional entropy.
    pub cond_entropy_mean: f64,
    /// `V̂(H(Y|X))`.
    pub cond_entropy_variance: f64,
    /// Empirical marginal `p̃_Y`.
    pub mean_cond_probs: Vec<f64>,
    /// `V̂(p_{Y|X}[j])` for each class.
    pub per_class_variances: Vec<f64>,
}

impl IsSummary {
    pub fn from_profile(profile: &ClassProfile) -> Result<Self> {
        let n = profile.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let d = profile.classes();
        let mean_cond_probs = profile.marginal();
        let mut per_class_variances = vec![0.0; d];
        for p in profile.cond_probs() {
            for j in 0..d {
                let dev = p[j] - mean_cond_probs[j];
                per_class_variances[j] += dev * dev;
            }
        }
        per_class_variances.iter_mut().for_each(|v| *v /= (n - 1) as f64);
        let h = profile.cond_entropies();
        let cond_entropy_mean = h.iter().sum::<f64>() / n as f64;
        let cond_entropy_variance =
            h.iter().map(|x| (x - cond_entropy_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            n,
            classes: d,
            cond_entropy_mean,
            cond_entropy_variance,
            mean_cond_probs,
            per_class_variances,
        })
    }

    /// Naive-UCB stand-ins: `V̂(H) = (log d)²` and `V̂(p[j]) = 1`.
    pub fn with_naive_variances(&self) -> Self {
        let log_d = (self.classes as f64).ln();
        Self {
            cond_entropy_variance: log_d * log_d,
            per_class_variances: vec![1.0; self.classes],
            ..self.clone()
        }
    }
}

/// The two optimism corrections of the IS bound.
#[derive(Debug, Clone, PartialEq)]
pub struct IsBonusTerms {
    /// Per-class marginal radius.
    pub epsilon: Vec<f64>,
    /// Added to the exponent for the conditional-entropy estimate.
    pub entropy_bonus: f64,
}

pub fn is_bonus_terms(s: &IsSummary, delta: f64) -> Result<IsBonusTerms> {
    let epsilon = is_epsilon_vector(&s.per_class_variances, s.n, s.classes, delta)?;
    let d = s.classes as f64;
    let log_term = (4.0 * d / delta).ln();
    let entropy_bonus = empirical_bernstein_radius(s.cond_entropy_variance, s.n, d.ln(), log_term);
    Ok(IsBonusTerms {
        epsilon,
        entropy_bonus,
    })
}

/// Naive-UCB IS terms, independent of the observed data.
pub fn naive_bonus_is(n: usize, classes: usize, delta: f64) -> Result<IsBonusTerms> {
    let placeholder = IsSummary {
        n,
        classes,
        cond_entropy_mean: 0.0,
        cond_entropy_variance: 0.0,
        mean_cond_probs: vec![0.0; classes],
        per_class_variances: vec![0.0; classes],
    };
    is_bonus_terms(&placeholder.with_naive_variances(), delta)
}

/// Log of the optimistic IS given precomputed bonus terms:
/// `E(Clip(p̃, ε)) − Ĥ(Y|X) + entropy_bonus`.
pub fn optimistic_is_exponent_with(s: &IsSummary, terms: &IsBonusTerms) -> Result<f64> {
    let clipped = clip_toward_inv_e(&s.mean_cond_probs, &terms.epsilon)?;
    Ok(entropy_functional(&clipped)? - s.cond_entropy_mean + terms.entropy_bonus)
}

pub fn optimistic_is_exponent(s: &IsSummary, delta: f64) -> Result<f64> {
    optimistic_is_exponent_with(s, &is_bonus_terms(s, delta)?)
}

/// Optimistic (upper-confidence) Inception score.
pub fn optimistic_is(s: &IsSummary, delta: f64) -> Result<f64> {
    Ok(optimistic_is_exponent(s, delta)?.exp())
}

/// Empirical IS, `exp{E(p̃) − Ĥ(Y|X)}`, from the same summary.
pub fn empirical_is_from_summary(s: &IsSummary) -> Result<f64> {
    Ok((entropy_functional(&s.mean_cond_probs)? - s.cond_entropy_mean).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(delta: f64) -> BonusParams {
        BonusParams::new(delta, 1.0, BonusMode::Plugin).unwrap()
    }

    fn summary(n: usize) -> ArmMomentSummary {
        ArmMomentSummary {
            n,
            dim: 4,
            trace_cov: 3.0,
            trace_cov_sq_sqrt: 1.8,
            spec_norm: 1.2,
            eff_rank: 2.5,
            mean_dist_ref: 0.7,
        }
    }

    #[test]
    fn params_validation() {
        assert!(BonusParams::new(0.0, 1.0, BonusMode::Plugin).is_err());
        assert!(BonusParams::new(1.0, 1.0, BonusMode::Plugin).is_err());
        assert!(BonusParams::new(0.1, 0.0, BonusMode::Plugin).is_err());
        assert!(BonusParams::new(0.1, 1.0, BonusMode::BoundedNorm { c: 0.0 }).is_err());
        let p = BonusParams::for_horizon(0.1, 1000, 1.0, BonusMode::Plugin).unwrap();
        assert!((p.delta - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn deterministic_arm_has_zero_radii() {
        let s = ArmMomentSummary {
            n: 10,
            dim: 3,
            trace_cov: 0.0,
            trace_cov_sq_sqrt: 0.0,
            spec_norm: 0.0,
            eff_rank: 1.0,
            mean_dist_ref: 2.0,
        };
        let p = params(0.1);
        assert_eq!(delta_mu(&s, &p), 0.0);
        assert_eq!(delta_sigma(&s, &p), 0.0);
        assert_eq!(fd_bonus(&s, 4.0, &p), 0.0);
    }

    #[test]
    fn delta_mu_scales_inverse_sqrt_n() {
        let p = params(0.05);
        let a = delta_mu(&summary(100), &p);
        let b = delta_mu(&summary(200), &p);
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn delta_sigma_kappa_squared() {
        // Δ_μ does not depend on κ, so ΔΣ − Δ_μ² scales with κ².
        let s = summary(50);
        let p1 = BonusParams::new(0.1, 1.0, BonusMode::Plugin).unwrap();
        let p2 = BonusParams::new(0.1, 2.0, BonusMode::Plugin).unwrap();
        let dmu2 = delta_mu(&s, &p1).powi(2);
        let k1 = delta_sigma(&s, &p1) - dmu2;
        let k2 = delta_sigma(&s, &p2) - dmu2;
        assert!((k2 / k1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fd_bonus_decreasing_in_n() {
        let p = params(0.1);
        assert!(fd_bonus(&summary(400), 2.0, &p) < fd_bonus(&summary(100), 2.0, &p));
    }

    #[test]
    fn bounded_requires_mode() {
        let err = fd_bonus_bounded(&summary(10), 1.0, &params(0.1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bounded_zero_c() {
        let p = BonusParams {
            delta: 0.1,
            kappa: 1.0,
            mode: BonusMode::BoundedNorm { c: 0.0 },
        };
        let s = ArmMomentSummary::norm_bounded(25, 3, 0.0, 0.0);
        assert_eq!(fd_bonus_bounded(&s, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn bounded_norm_closed_form() {
        // Zero traces and trace_sqrt_ref leave 2Δ₁² + 4C²√(log(3/δ)/(2n)),
        // with Δ₁² = 2dC²/n · log(6d/δ).
        let p = BonusParams::new(0.1, 1.0, BonusMode::BoundedNorm { c: 2.0 }).unwrap();
        let s = ArmMomentSummary {
            n: 100,
            dim: 1,
            trace_cov: 0.0,
            trace_cov_sq_sqrt: 0.0,
            spec_norm: 0.0,
            eff_rank: 1.0,
            mean_dist_ref: 0.0,
        };
        let d1sq = 2.0 * 4.0 / 100.0 * 60.0f64.ln();
        let expected = 2.0 * d1sq + 16.0 * (30.0f64.ln() / 200.0).sqrt();
        let got = fd_bonus_bounded(&s, 0.0, &p).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn epsilon_floor_and_monotonicity() {
        let n = 30;
        let d = 4;
        let delta = 0.05;
        let floor = 7.0 / (3.0 * 29.0) * (4.0 * 4.0 / delta as f64).ln();
        let eps = is_epsilon_vector(&[0.0; 4], n, d, delta).unwrap();
        assert!(eps.iter().all(|e| (e - floor).abs() < 1e-15));
        let eps = is_epsilon_vector(&[0.0, 0.01, 0.1, 0.2], n, d, delta).unwrap();
        assert!(eps.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            is_epsilon_vector(&[0.0; 4], 1, d, delta),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn naive_fd_matches_substituted_summary() {
        let p = params(0.01);
        assert_eq!(
            naive_bonus_fd(40, 6, 3.3, &p),
            fd_bonus(&ArmMomentSummary::naive(40, 6), 3.3, &p)
        );
    }

    #[test]
    fn optimistic_is_dominates_empirical() {
        let profile = ClassProfile::from_probs(
            3,
            vec![
                vec![0.7, 0.2, 0.1],
                vec![0.1, 0.8, 0.1],
                vec![0.3, 0.3, 0.4],
                vec![0.05, 0.05, 0.9],
            ],
        )
        .unwrap();
        let s = IsSummary::from_profile(&profile).unwrap();
        assert!(optimistic_is(&s, 0.1).unwrap() >= empirical_is_from_summary(&s).unwrap());
    }

    #[test]
    fn entropy_variance_increases_exponent() {
        let s = IsSummary {
            n: 50,
            classes: 3,
            cond_entropy_mean: 0.4,
            cond_entropy_variance: 0.01,
            mean_cond_probs: vec![0.2, 0.3, 0.5],
            per_class_variances: vec![0.02, 0.03, 0.04],
        };
        let more = IsSummary {
            cond_entropy_variance: 0.05,
            ..s.clone()
        };
        assert!(optimistic_is_exponent(&more, 0.1).unwrap() > optimistic_is_exponent(&s, 0.1).unwrap());
    }
}
