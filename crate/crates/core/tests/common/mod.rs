#![allow(dead_code)]

use genselect::matstats::SymMatrix;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> SymMatrix {
    let n = m.nrows();
    SymMatrix::from_fn(n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `A·Aᵀ/dim + ridge·I` with standard-normal-ish entries.
pub fn random_psd<R: Rng>(rng: &mut R, dim: usize, ridge: f64) -> SymMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * ridge;
    from_na(&m)
}

pub fn random_symmetric<R: Rng>(rng: &mut R, dim: usize) -> SymMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    from_na(&(&a + a.transpose()))
}

/// Eigenvalues from nalgebra's symmetric solver, descending.
pub fn oracle_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// `Tr[(√b·a·√b)^{1/2}]` via two independent eigendecompositions.
pub fn oracle_trace_sqrt_product(a: &SymMatrix, b: &SymMatrix) -> f64 {
    let eb = to_na(b).symmetric_eigen();
    let sqrt_vals = eb.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_b = &eb.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eb.eigenvectors.transpose();
    let m = &sqrt_b * to_na(a) * &sqrt_b;
    let m = (&m + m.transpose()) * 0.5;
    m.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// Two-pass population covariance from raw rows.
pub fn batch_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, SymMatrix) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let cov = SymMatrix::from_fn(d, |i, j| {
        rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n
    });
    (mean, cov)
}

pub fn random_probability_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
