//! Fréchet distance and Inception score, plus their entropy and variance
//! building blocks. All logarithms are natural.

use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::matstats::{cholesky, trace_sqrt, trace_sqrt_product, Cholesky, SymMatrix};

/// `e^{-1}`, the maximizer of `u(z) = −z·log z`.
pub const INV_E: f64 = 1.0 / E;

/// Raw Fréchet distances below this value indicate a numerical problem rather
/// than cancellation noise.
pub const FD_NEGATIVE_TOLERANCE: f64 = 1e-6;

/// Reference (real data) statistics for FD scoring.
#[derive(Debug, Clone)]
pub struct RefStats {
    mean: Vec<f64>,
    cov: SymMatrix,
    chol: Cholesky,
    trace_sqrt_ref: f64,
}

impl RefStats {
    /// Precomputes the Cholesky factor and `Tr[Σ_r^{1/2}]`. The covariance
    /// must be positive definite.
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        let chol = cholesky(&cov)?;
        let trace_sqrt_ref = trace_sqrt(&cov)?;
        Ok(Self {
            mean,
            cov,
            chol,
            trace_sqrt_ref,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    /// `Tr[Σ_r^{1/2}]`.
    pub fn trace_sqrt_ref(&self) -> f64 {
        self.trace_sqrt_ref
    }

    /// `‖x − μ_r‖₂`.
    pub fn mean_distance(&self, x: &[f64]) -> f64 {
        squared_distance(x, &self.mean).sqrt()
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖μ_g − μ_r‖² + Tr[Σ_g + Σ_r − 2(Σ_g·Σ_r)^{1/2}]`, clamped at zero.
pub fn frechet_distance(mean_g: &[f64], cov_g: &SymMatrix, reference: &RefStats) -> Result<f64> {
    let dim = reference.dim();
    if mean_g.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: mean_g.len(),
        });
    }
    if cov_g.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: cov_g.dim(),
        });
    }
    let cross = trace_sqrt_product(cov_g, reference.chol())?;
    let raw = squared_distance(mean_g, reference.mean()) + cov_g.trace() + reference.cov().trace()
        - 2.0 * cross;
    if raw < -FD_NEGATIVE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "Fréchet distance evaluated to {raw}"
        )));
    }
    Ok(raw.max(0.0))
}

/// `E(z) = −Σ z[j]·log z[j]` with `0·log 0 = 0`.
pub fn entropy_functional(z: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &v in z {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("entropy of negative entry {v}")));
        }
        if v > 0.0 {
            total -= v * v.ln();
        }
    }
    Ok(total)
}

/// Per-sample conditional class distributions `p_{Y|xⁱ}` and their entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    classes: usize,
    cond_probs: Vec<Vec<f64>>,
    cond_entropies: Vec<f64>,
}

impl ClassProfile {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            cond_probs: Vec::new(),
            cond_entropies: Vec::new(),
        }
    }

    pub fn from_probs(classes: usize, probs: Vec<Vec<f64>>) -> Result<Self> {
        let mut profile = Self::new(classes);
        for p in probs {
            profile.push(p)?;
        }
        Ok(profile)
    }

    /// Validates and appends one probability vector.
    pub fn push(&mut self, p: Vec<f64>) -> Result<()> {
        validate_probability_vector(&p, self.classes)?;
        self.cond_entropies.push(entropy_functional(&p)?);
        self.cond_probs.push(p);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.cond_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond_probs.is_empty()
    }

    pub fn cond_probs(&self) -> &[Vec<f64>] {
        &self.cond_probs
    }

    pub fn cond_entropies(&self) -> &[f64] {
        &self.cond_entropies
    }

    /// Empirical marginal `(1/n)·Σ p_{Y|xⁱ}`.
    pub fn marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.classes];
        for p in &self.cond_probs {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

pub(crate) fn validate_probability_vector(p: &[f64], classes: usize) -> Result<()> {
    if p.len() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            got: p.len(),
        });
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("probability entry outside [0, 1]".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probability vector sums to {sum}")));
    }
    Ok(())
}

/// `exp{Ĥ(Y) − Ĥ(Y|X)}` from the marginal entropy and the mean conditional entropy.
pub fn empirical_is(profile: &ClassProfile) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let marginal_entropy = entropy_functional(&profile.marginal())?;
    let cond: f64 = profile.cond_entropies().iter().sum::<f64>() / profile.len() as f64;
    Ok((marginal_entropy - cond).exp())
}

/// Unbiased sample variance, equal to `(1/(n(n−1)))·Σ_{i<j}(Zᵢ − Zⱼ)²`.
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / (n - 1) as f64)
}

/// Moves every coordinate of `p` toward `e^{-1}` by `eps[j]`, snapping to
/// `e^{-1}` when the move would overshoot it.
///
/// Entries are strictly positive whenever the corresponding `eps[j] > 0`.
pub fn clip_toward_inv_e(p: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if p.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: eps.len(),
        });
    }
    Ok(p.iter()
        .zip(eps)
        .map(|(&pj, &ej)| {
            let gap = INV_E - pj;
            if gap.abs() >= ej {
                pj + gap.signum() * ej
            } else {
                INV_E
            }
        })
        .collect())
}
