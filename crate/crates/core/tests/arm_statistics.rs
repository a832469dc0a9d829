//! Distributional checks of the sample sources.

mod common;

use std::sync::Arc;

use common::{oracle_eigenvalues, random_psd, rng};
use genselect::arms::{Arm, ArmSpec, CategoricalArm, GaussianArm, ReplayArm};
use genselect::embeddings::Dataset;
use genselect::matstats::{cholesky, StreamingMoments, SymMatrix};
use genselect::scores::RefStats;
use genselect::Metric;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_squared_p_value(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

fn indexed_dataset(rows: usize) -> Arc<Dataset> {
    Arc::new(Dataset::from_rows(&(0..rows).map(|i| vec![i as f64, -(i as f64)]).collect::<Vec<_>>()).unwrap())
}

#[test]
fn replay_with_replacement_is_uniform() {
    let rows = 20;
    let mut arm = ReplayArm::new(0, indexed_dataset(rows), true, 99);
    let mut counts = vec![0usize; rows];
    for x in arm.pull(10_000).unwrap() {
        counts[x[0] as usize] += 1;
    }
    let p = chi_squared_p_value(&counts, &vec![1.0 / rows as f64; rows]);
    assert!(p > 0.001, "p = {p}, counts {counts:?}");
}

#[test]
fn replay_without_replacement_is_a_permutation() {
    let rows = 17;
    let mut arm = ReplayArm::new(0, indexed_dataset(rows), false, 5);
    let mut seen: Vec<usize> = (0..rows).flat_map(|_| arm.pull(1).unwrap()).map(|x| x[0] as usize).collect();
    assert!(arm.pull(1).is_err());
    seen.sort_unstable();
    assert_eq!(seen, (0..rows).collect::<Vec<_>>());
}

fn correlated_arm(seed: u64) -> GaussianArm {
    let mut r = rng(31);
    let cov = random_psd(&mut r, 4, 0.2);
    GaussianArm::new(vec![1.0, -2.0, 0.5, 3.0], cov, seed).unwrap()
}

#[test]
fn gaussian_mahalanobis_matches_chi_squared_mean() {
    let mut arm = correlated_arm(7);
    let chol = cholesky(arm.cov()).unwrap();
    let d = arm.dim();
    let samples = arm.pull(100_000).unwrap();
    let mut total = 0.0;
    for x in &samples {
        // Solve L z = x − μ; Mahalanobis² = ‖z‖².
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - arm.mean()[i];
            for k in 0..i {
                s -= chol.factor(i, k) * z[k];
            }
            z[i] = s / chol.factor(i, i);
        }
        total += z.iter().map(|v| v * v).sum::<f64>();
    }
    let mean = total / samples.len() as f64;
    assert!((mean - d as f64).abs() < 0.03 * d as f64, "mean Mahalanobis² {mean}");
}

#[test]
fn gaussian_covariance_converges() {
    let mut arm = correlated_arm(8);
    let samples = arm.pull(100_000).unwrap();
    let m = StreamingMoments::from_samples(4, &samples).unwrap();
    let diff = m.covariance().unwrap();
    let rel = SymMatrix::from_fn(4, |i, j| diff.get(i, j) - arm.cov().get(i, j)).frobenius_norm()
        / arm.cov().frobenius_norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}

#[test]
fn gaussian_handles_singular_covariance() {
    // Rank-one covariance: samples lie on a line through the mean.
    let cov = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert!(oracle_eigenvalues(&cov)[1].abs() < 1e-12);
    let mut arm = GaussianArm::new(vec![0.0, 0.0], cov, 1).unwrap();
    for x in arm.pull(100).unwrap() {
        assert!((x[0] - x[1]).abs() < 1e-9);
    }
}

#[test]
fn categorical_frequencies_match_weights() {
    let prototypes = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let mut arm = CategoricalArm::new(prototypes, vec![5.0, 3.0, 2.0], 17).unwrap();
    let mut counts = vec![0usize; 3];
    for p in arm.pull(10_000).unwrap() {
        counts[p.iter().position(|&v| v == 1.0).unwrap()] += 1;
    }
    let p = chi_squared_p_value(&counts, &[0.5, 0.3, 0.2]);
    assert!(p > 0.001, "p = {p}, counts {counts:?}");
}

#[test]
fn true_scores_do_not_depend_on_seed() {
    let reference = RefStats::new(vec![0.0; 4], SymMatrix::identity(4)).unwrap();
    let a = correlated_arm(1);
    let b = correlated_arm(2);
    let spec = |arm: &GaussianArm| ArmSpec::Gaussian {
        mean: arm.mean().to_vec(),
        cov: arm.cov().clone(),
    };
    assert_eq!(
        spec(&a).true_score(Metric::Fd, Some(&reference)).unwrap(),
        spec(&b).true_score(Metric::Fd, Some(&reference)).unwrap()
    );
    let c1 = CategoricalArm::symmetric_with_is(6, 3.0, 1).unwrap();
    let c2 = CategoricalArm::symmetric_with_is(6, 3.0, 2).unwrap();
    assert_eq!(
        genselect::arms::true_is(&c1).unwrap(),
        genselect::arms::true_is(&c2).unwrap()
    );
}

#[test]
fn pulls_do_not_depend_on_batching() {
    let mut a = correlated_arm(3);
    let mut b = correlated_arm(3);
    let whole = a.pull(30).unwrap();
    let pieces: Vec<Vec<f64>> = (0..6).flat_map(|_| b.pull(5).unwrap()).collect();
    assert_eq!(whole, pieces);
}
