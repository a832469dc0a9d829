//! Dense symmetric linear algebra and streaming moment estimation.
//!
//! Everything here works on small-to-medium dense matrices (embedding
//! dimensions up to a few hundred) stored row-major in a flat `Vec<f64>`.
//! The eigensolver is a cyclic Jacobi iteration with a fixed sweep order, so a
//! given input always produces bit-identical output.

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a PSD input may dip this far below zero (relative to the
/// input scale) before the input is rejected as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Cholesky pivots at or below this fraction of the diagonal entry are
/// treated as zero (numerically singular input).
pub const PIVOT_RTOL: f64 = 1e-12;

/// A real symmetric matrix. Symmetry is maintained by every mutator.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from rows, rejecting inputs whose transpose differs by
    /// more than rounding noise. The stored matrix is the exact average of the
    /// input and its transpose.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Degenerate("matrix with zero rows"));
        }
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let (a, b) = (rows[i][j], rows[j][i]);
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
                m.set(i, j, 0.5 * (a + b));
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    /// Row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `Tr[M²]`, which for a symmetric matrix is the squared Frobenius norm.
    pub fn trace_of_square(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Lower-triangular factor `L` with `L·Lᵀ = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn factor(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Row-major dense storage of `L` (upper triangle is zero).
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_fn(n, |i, j| {
            (0..=i.min(j)).map(|k| self.factor(i, k) * self.factor(j, k)).sum()
        })
    }

    /// Computes the congruence `Lᵀ·A·L`.
    pub fn congruence(&self, a: &SymMatrix) -> Result<SymMatrix> {
        let n = self.dim;
        if a.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.dim(),
            });
        }
        // AL, dense n×n.
        let mut al = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in j..n {
                    s += a.get(i, k) * self.factor(k, j);
                }
                al[i * n + j] = s;
            }
        }
        Ok(SymMatrix::from_fn(n, |i, j| {
            let mut s = 0.0;
            for k in i..n {
                s += self.factor(k, i) * al[k * n + j];
            }
            s
        }))
    }
}

/// Cholesky–Banachiewicz factorization of a symmetric positive definite matrix.
pub fn cholesky(m: &SymMatrix) -> Result<Cholesky> {
    let n = m.dim();
    let mut lower = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= lower[i * n + k] * lower[j * n + k];
            }
            if i == j {
                if !(s > PIVOT_RTOL * m.get(i, i)) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                lower[i * n + i] = s.sqrt();
            } else {
                lower[i * n + j] = s / lower[j * n + j];
            }
        }
    }
    Ok(Cholesky { dim: n, lower })
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    dim: usize,
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Row-major matrix whose k-th column is the eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.vectors[i * self.dim + k]).collect()
    }

    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vectors[i * n + k] * self.values[k] * self.vectors[j * n + k])
                .sum()
        })
    }
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen> {
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order among equal eigenvalues.
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + dst] = v[i * n + src];
        }
    }
    Ok(SymEigen {
        dim: n,
        values,
        vectors,
    })
}

/// `Tr[(A·B)^{1/2}]` for PSD `A` and PD `B = L·Lᵀ`, evaluated as the sum of
/// square roots of the eigenvalues of `Lᵀ·A·L` (same spectrum as `A·B`).
pub fn trace_sqrt_product(a: &SymMatrix, b_chol: &Cholesky) -> Result<f64> {
    let congruent = b_chol.congruence(a)?;
    let eig = sym_eigen(&congruent)?;
    // ‖L‖_F² = Tr[B] carries the scale of B into the tolerance.
    let b_scale: f64 = b_chol.lower().iter().map(|x| x * x).sum();
    let tolerance = -PSD_TOLERANCE * a.frobenius_norm() * b_scale;
    let mut total = 0.0;
    for &lambda in &eig.values {
        if lambda < tolerance {
            return Err(Error::NotPsd {
                eigenvalue: lambda,
                tolerance,
            });
        }
        total += lambda.max(0.0).sqrt();
    }
    Ok(total)
}

/// `Tr[M^{1/2}]` for a PSD matrix.
pub fn trace_sqrt(m: &SymMatrix) -> Result<f64> {
    let eig = sym_eigen(m)?;
    let tolerance = -PSD_TOLERANCE * m.frobenius_norm();
    let mut total = 0.0;
    for &lambda in &eig.values {
        if lambda < tolerance {
            return Err(Error::NotPsd {
                eigenvalue: lambda,
                tolerance,
            });
        }
        total += lambda.max(0.0).sqrt();
    }
    Ok(total)
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    let eig = sym_eigen(m)?;
    Ok(eig.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
}

/// `Tr[M] / ‖M‖₂` for a nonzero PSD matrix.
pub fn effective_rank(m: &SymMatrix) -> Result<f64> {
    let norm = spectral_norm(m)?;
    if norm == 0.0 {
        return Err(Error::Degenerate("effective rank of a zero matrix"));
    }
    Ok(m.trace() / norm)
}

/// Adaptive thresholding of off-diagonal covariance entries: `m[i][j]` is
/// zeroed when `|m[i][j]| < M·√(log(dim)/n)·√(m[i][i]·m[j][j])`.
///
/// The diagonal is never modified. With fewer than two samples there is
/// nothing to estimate and the input is returned unchanged.
pub fn threshold_covariance(m: &SymMatrix, n: usize, multiplier: f64) -> SymMatrix {
    let dim = m.dim();
    if n < 2 || multiplier <= 0.0 {
        return m.clone();
    }
    let rate = ((dim as f64).ln() / n as f64).sqrt();
    let mut out = m.clone();
    for i in 0..dim {
        for j in i + 1..dim {
            let cutoff = multiplier * rate * (m.get(i, i) * m.get(j, j)).max(0.0).sqrt();
            if m.get(i, j).abs() < cutoff {
                out.set(i, j, 0.0);
            }
        }
    }
    out
}

/// A dense factor `F` with `F·Fᵀ = M` for a PSD matrix: the Cholesky factor
/// when `M` is positive definite, otherwise `Q·√Λ` from the eigendecomposition.
pub fn psd_factor(m: &SymMatrix) -> Result<Vec<f64>> {
    if let Ok(chol) = cholesky(m) {
        return Ok(chol.lower().to_vec());
    }
    let n = m.dim();
    let eig = sym_eigen(m)?;
    let tolerance = -PSD_TOLERANCE * m.frobenius_norm();
    let mut f = vec![0.0; n * n];
    for k in 0..n {
        let lambda = eig.values[k];
        if lambda < tolerance {
            return Err(Error::NotPsd {
                eigenvalue: lambda,
                tolerance,
            });
        }
        let root = lambda.max(0.0).sqrt();
        for i in 0..n {
            f[i * n + k] = eig.vectors[i * n + k] * root;
        }
    }
    Ok(f)
}

/// Streaming mean and deviation scatter of a vector-valued sample.
///
/// Stores `Σᵢ (xᵢ − x̄)(xᵢ − x̄)ᵀ` rather than raw second moments; batches
/// are combined with the pairwise (Chan et al.) merge rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingMoments {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    scatter: SymMatrix,
}

impl StreamingMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            scatter: SymMatrix::zeros(dim),
        }
    }

    /// Builds moments from a full sample in one pass over each coordinate pair.
    pub fn from_samples<S: AsRef<[f64]>>(dim: usize, samples: &[S]) -> Result<Self> {
        let mut m = Self::new(dim);
        m.update(samples)?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scatter(&self) -> &SymMatrix {
        &self.scatter
    }

    /// Population covariance `scatter / n`.
    pub fn covariance(&self) -> Result<SymMatrix> {
        if self.count == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(self.scatter.scaled(1.0 / self.count as f64))
    }

    /// Adds a batch of samples.
    pub fn update<S: AsRef<[f64]>>(&mut self, batch: &[S]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        for x in batch {
            if x.as_ref().len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.as_ref().len(),
                });
            }
        }
        let dim = self.dim;
        let nb = batch.len();
        // Incremental mean: exact when every sample is identical.
        let mut mean = vec![0.0; dim];
        for (k, x) in batch.iter().enumerate() {
            for (m, v) in mean.iter_mut().zip(x.as_ref()) {
                *m += (v - *m) / (k + 1) as f64;
            }
        }
        let mut scatter = SymMatrix::zeros(dim);
        let mut dev = vec![0.0; dim];
        for x in batch {
            for ((d, v), m) in dev.iter_mut().zip(x.as_ref()).zip(&mean) {
                *d = v - m;
            }
            for i in 0..dim {
                for j in i..dim {
                    let s = scatter.get(i, j) + dev[i] * dev[j];
                    scatter.set(i, j, s);
                }
            }
        }
        self.merge(&StreamingMoments {
            dim,
            count: nb,
            mean,
            scatter,
        })
    }

    /// Combines another sample's moments into `self`.
    pub fn merge(&mut self, other: &StreamingMoments) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / n;
        for i in 0..self.dim {
            for j in i..self.dim {
                let s = self.scatter.get(i, j) + other.scatter.get(i, j) + delta[i] * delta[j] * w;
                self.scatter.set(i, j, s);
            }
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        self.count += other.count;
        Ok(())
    }
}

/// Scalar Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (denominator `n − 1`); `None` below two samples.
    pub fn sample_variance(&self) -> Option<f64> {
        if self.count < 2 {
            None
        } else {
            Some((self.m2 / (self.count - 1) as f64).max(0.0))
        }
    }
}
