mod common;

use std::sync::Arc;

use common::{from_na, rel_close};
use genselect::arms::ArmSpec;
use genselect::bandit::{run_trial, Policy, PolicyKind, TrialConfig};
use genselect::bonus::*;
use genselect::config::ExperimentConfig;
use genselect::embeddings::{decode, encode, Dataset};
use genselect::matstats::*;
use genselect::scores::*;
use genselect::Metric;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn psd(dim: usize) -> impl Strategy<Value = SymMatrix> {
    (prop::collection::vec(-2.0f64..2.0, dim * dim), 1e-3f64..0.5).prop_map(move |(v, ridge)| {
        let a = DMatrix::from_row_slice(dim, dim, &v);
        from_na(&(&a * a.transpose() + DMatrix::identity(dim, dim) * ridge))
    })
}

fn psd_pair() -> impl Strategy<Value = (SymMatrix, SymMatrix)> {
    (1usize..7).prop_flat_map(|d| (psd(d), psd(d)))
}

fn rows(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, dim), 1..max)
}

fn prob_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, d).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn close_matrices(a: &SymMatrix, b: &SymMatrix, rel: f64) -> bool {
    a.max_abs_diff(b) <= rel * a.frobenius_norm().max(b.frobenius_norm()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn storage_is_symmetric(m in (1usize..6).prop_flat_map(psd)) {
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn moments_merge_order_independent(a in rows(3, 30), b in rows(3, 30), c in rows(3, 30)) {
        let ma = StreamingMoments::from_samples(3, &a).unwrap();
        let mb = StreamingMoments::from_samples(3, &b).unwrap();
        let mc = StreamingMoments::from_samples(3, &c).unwrap();
        let mut left = ma.clone();
        left.merge(&mb).unwrap();
        left.merge(&mc).unwrap();
        let mut bc = mb.clone();
        bc.merge(&mc).unwrap();
        let mut right = ma.clone();
        right.merge(&bc).unwrap();
        let mut rev = mc.clone();
        rev.merge(&mb).unwrap();
        rev.merge(&ma).unwrap();
        let ref_cov = left.covariance().unwrap();
        for other in [&right, &rev] {
            prop_assert_eq!(other.count(), left.count());
            prop_assert!(close_matrices(&other.covariance().unwrap(), &ref_cov, 1e-9));
            for (x, y) in other.mean().iter().zip(left.mean()) {
                prop_assert!(rel_close(*x, *y, 1e-9));
            }
        }
        // Splitting into batches matches one batch.
        let all: Vec<Vec<f64>> = a.iter().chain(&b).chain(&c).cloned().collect();
        let whole = StreamingMoments::from_samples(3, &all).unwrap();
        prop_assert!(close_matrices(&whole.covariance().unwrap(), &ref_cov, 1e-9));
    }

    #[test]
    fn trace_sqrt_product_symmetric((a, b) in psd_pair()) {
        let ab = trace_sqrt_product(&a, &cholesky(&b).unwrap()).unwrap();
        let ba = trace_sqrt_product(&b, &cholesky(&a).unwrap()).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0), "{} vs {}", ab, ba);
    }

    #[test]
    fn trace_sqrt_product_diagonal(pairs in prop::collection::vec((0.0f64..10.0, 0.01f64..10.0), 1..10)) {
        let a = SymMatrix::from_diag(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let b = SymMatrix::from_diag(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let expected: f64 = pairs.iter().map(|(x, y)| (x * y).sqrt()).sum();
        let got = trace_sqrt_product(&a, &cholesky(&b).unwrap()).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * expected.max(1.0));
    }

    #[test]
    fn effective_rank_scale_invariant(m in (1usize..8).prop_flat_map(psd), c in 1e-3f64..1e3) {
        let r1 = effective_rank(&m).unwrap();
        let r2 = effective_rank(&m.scaled(c)).unwrap();
        prop_assert!((r1 - r2).abs() <= 1e-10 * r1);
        prop_assert!(r1 >= 1.0 - 1e-12 && r1 <= m.dim() as f64 + 1e-12);
    }

    #[test]
    fn cholesky_round_trip(m in (1usize..10).prop_flat_map(psd)) {
        let back = cholesky(&m).unwrap().reconstruct();
        let diff = common::to_na(&back) - common::to_na(&m);
        prop_assert!(diff.norm() <= 1e-10 * m.frobenius_norm());
    }

    #[test]
    fn fd_self_zero_and_symmetric(
        (a, b) in psd_pair(),
        shift in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let d = a.dim();
        let mu_a: Vec<f64> = shift[..d].to_vec();
        let mu_b = vec![0.0; d];
        let ra = RefStats::new(mu_a.clone(), a.clone()).unwrap();
        let rb = RefStats::new(mu_b.clone(), b.clone()).unwrap();
        prop_assert!(frechet_distance(&mu_a, &a, &ra).unwrap().abs() <= 1e-8 * a.trace().max(1.0));
        let ab = frechet_distance(&mu_a, &a, &rb).unwrap();
        let ba = frechet_distance(&mu_b, &b, &ra).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0), "{} vs {}", ab, ba);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn clip_never_lowers_entropy_term(p in 0.0f64..1.0, noise in -0.3f64..0.3, slack in 0.0f64..0.2) {
        let p_hat = (p + noise).clamp(0.0, 1.0);
        let eps = (p_hat - p).abs() + slack;
        let c = clip_toward_inv_e(&[p_hat], &[eps]).unwrap();
        let u = |z: f64| entropy_functional(&[z]).unwrap();
        prop_assert!(u(c[0]) >= u(p) - 1e-15, "p={} p̂={} c={}", p, p_hat, c[0]);
        if eps > 0.0 {
            prop_assert!(c[0] > 0.0);
        }
    }

    #[test]
    fn empirical_is_within_class_bounds(probs in (2usize..8).prop_flat_map(|d| prop::collection::vec(prob_vec(d), 1..20))) {
        let d = probs[0].len();
        let profile = ClassProfile::from_probs(d, probs).unwrap();
        let h_y = entropy_functional(&profile.marginal()).unwrap();
        let h_yx = profile.cond_entropies().iter().sum::<f64>() / profile.len() as f64;
        let is = empirical_is(&profile).unwrap();
        prop_assert!(is <= d as f64 * (1.0 + 1e-9));
        if h_yx <= h_y {
            prop_assert!(is >= 1.0 - 1e-9);
        }
        for (p, h) in profile.cond_probs().iter().zip(profile.cond_entropies()) {
            prop_assert!((entropy_functional(p).unwrap() - h).abs() <= 1e-9);
        }
    }

    #[test]
    fn sample_variance_pairwise(z in prop::collection::vec(-100.0f64..100.0, 2..40)) {
        let n = z.len() as f64;
        let mut pairwise = 0.0;
        for i in 0..z.len() {
            for j in (i + 1)..z.len() {
                pairwise += (z[i] - z[j]).powi(2);
            }
        }
        pairwise /= n * (n - 1.0);
        let v = sample_variance(&z).unwrap();
        prop_assert!((v - pairwise).abs() <= 1e-10 * pairwise.max(1.0));
    }

    #[test]
    fn bonuses_nonnegative_and_vanishing(
        tr in 0.0f64..50.0,
        spec_frac in 0.0f64..1.0,
        md in 0.0f64..10.0,
        trs in 0.0f64..20.0,
        delta in 0.001f64..0.9,
        kappa in 0.1f64..3.0,
    ) {
        let spec = tr * spec_frac;
        let s = ArmMomentSummary {
            n: 100,
            dim: 8,
            trace_cov: tr,
            trace_cov_sq_sqrt: (tr * spec).sqrt(),
            spec_norm: spec,
            eff_rank: if spec > 0.0 { tr / spec } else { 1.0 },
            mean_dist_ref: md,
        };
        let p = BonusParams::new(delta, kappa, BonusMode::Plugin).unwrap();
        let ns = [100, 10_000, 100_000_000];
        let fd: Vec<f64> = ns.iter().map(|&n| fd_bonus(&s.with_n(n), trs, &p)).collect();
        let fd_no_ref: Vec<f64> = ns.iter().map(|&n| fd_bonus(&s.with_n(n), 0.0, &p)).collect();
        let dm: Vec<f64> = ns.iter().map(|&n| delta_mu(&s.with_n(n), &p)).collect();
        let ds: Vec<f64> = ns.iter().map(|&n| delta_sigma(&s.with_n(n), &p)).collect();
        for seq in [&fd, &fd_no_ref, &dm, &ds] {
            prop_assert!(seq.iter().all(|v| v.is_finite() && *v >= 0.0));
            if seq[0] > 0.0 {
                prop_assert!(seq[0] > seq[1] && seq[1] > seq[2]);
            }
        }
        for seq in [&fd_no_ref, &dm, &ds] {
            if seq[0] > 0.0 {
                prop_assert!(seq[2] < 1e-2 * seq[0]);
            }
        }
        // The Tr[Σ_r^{1/2}]·√(8Δ_Σ) term decays only as n^{-1/4}.
        if fd[0] > 0.0 {
            prop_assert!(fd[2] <= 1e-6f64.powf(0.25) * fd[0] * (1.0 + 1e-12));
        }
        let pb = BonusParams::new(delta, kappa, BonusMode::BoundedNorm { c: 1.0 + tr }).unwrap();
        let b = fd_bonus_bounded(&ArmMomentSummary::norm_bounded(100, 8, 1.0 + tr, md), trs, &pb).unwrap();
        prop_assert!(b.is_finite() && b >= 0.0);
    }

    #[test]
    fn embedding_round_trip_bit_exact(dim in 1usize..6, bits in prop::collection::vec(any::<u32>(), 0..60)) {
        let usable = bits.len() / dim * dim;
        let values: Vec<f32> = bits[..usable].iter().map(|&b| f32::from_bits(b)).collect();
        let data = Dataset::new(dim, values.clone()).unwrap();
        let back = decode(&encode(&data)).unwrap();
        prop_assert_eq!(back.dim(), dim);
        let same = back.values().iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}

fn fd_setup(shift: f64, arms: usize) -> (Vec<ArmSpec>, Arc<RefStats>) {
    let reference = Arc::new(RefStats::new(vec![0.0, 0.0], SymMatrix::identity(2)).unwrap());
    let specs = (0..arms)
        .map(|g| ArmSpec::Gaussian {
            mean: vec![shift * g as f64, 0.0],
            cov: SymMatrix::identity(2),
        })
        .collect();
    (specs, reference)
}

fn policy_strategy() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![
        Just(PolicyKind::FdUcb),
        Just(PolicyKind::NaiveUcb),
        Just(PolicyKind::Greedy),
        Just(PolicyKind::Random),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loop_invariants(
        kind in policy_strategy(),
        arms in 1usize..5,
        shift in 0.0f64..2.0,
        steps in 0usize..40,
        batch in 1usize..6,
        burn_in in 0usize..12,
        seed in any::<u64>(),
    ) {
        let (specs, reference) = fd_setup(shift, arms);
        let mut policy = Policy::new(kind, Metric::Fd, BonusParams::for_horizon(0.1, steps.max(1), 1.0, BonusMode::Plugin).unwrap());
        policy.burn_in = burn_in;
        let cfg = TrialConfig::new(policy, steps, batch, specs, Some(reference)).unwrap();
        let log = run_trial(&cfg, seed).unwrap();
        prop_assert_eq!(log.steps.len(), steps);

        // Determinism.
        prop_assert_eq!(&log, &run_trial(&cfg, seed).unwrap());

        // Regret identity, recomputed post hoc.
        let best = cfg.true_scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut cum = log.burn_in_regret;
        let mut prev = cum;
        let mut picks = 0usize;
        let effective_burn_in = if kind == PolicyKind::FdUcb { burn_in } else { 0 };
        for (t, s) in log.steps.iter().enumerate() {
            let g = s.decision.arm;
            let gap = cfg.true_scores[g] - best;
            prop_assert!(gap >= 0.0);
            cum += gap;
            prop_assert_eq!(s.cum_regret, cum);
            prop_assert!(s.cum_regret >= prev);
            prev = s.cum_regret;
            if g == log.optimal_arm {
                picks += 1;
            }
            prop_assert_eq!(s.opr, picks as f64 / (t + 1) as f64);
            prop_assert!((0.0..=1.0).contains(&s.opr));
            let total: usize = s.decision.counts.iter().sum();
            prop_assert_eq!(total, arms * effective_burn_in + (t + 1) * batch);
        }

        // Forced exploration without burn-in.
        if effective_burn_in == 0 && steps >= arms {
            let counts = &log.steps[arms - 1].decision.counts;
            prop_assert!(counts.iter().all(|&c| c > 0), "{:?}", counts);
        }
    }
}

fn check_round_trip(cfg: &ExperimentConfig) {
    let text = cfg.to_toml_string().unwrap();
    let back = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(&back, cfg, "{text}");
}

#[test]
fn config_round_trip_identity() {
    for text in [
        include_str!("../../../configs/fd_gaussian.toml"),
        include_str!("../../../configs/is_mixture.toml"),
    ] {
        check_round_trip(&ExperimentConfig::from_toml_str(text).unwrap());
    }
    let mut cfg = ExperimentConfig::from_toml_str(include_str!("../../../configs/fd_gaussian.toml")).unwrap();
    cfg.bonus = BonusMode::BoundedNorm { c: 2.5 };
    cfg.threshold = 0.3;
    cfg.burn_in = 7;
    cfg.delta = 0.012345678901234567;
    cfg.check.sample_sizes = vec![10, 20];
    check_round_trip(&cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_random(
        steps in 1usize..100_000,
        batch in 1usize..50,
        delta in 1e-6f64..0.999,
        trials in 1usize..100,
        seed in any::<u64>(),
        kappa in 0.01f64..10.0,
        threshold in 0.0f64..5.0,
        burn_in in 0usize..500,
        peak in 0.2f64..0.99,
    ) {
        let text = format!(
            "metric = \"is\"\nsteps = {steps}\nbatch_size = {batch}\ndelta = {delta:e}\ntrials = {trials}\n\
             seed = {seed}\nkappa = {kappa:e}\nthreshold = {threshold:e}\nburn_in = {burn_in}\n\
             [[arms]]\nkind = \"categorical\"\nclasses = 4\npeak = {peak:e}\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(cfg.delta, delta);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
