use leeb_core::dml::{classify_sufficient, correction, moment_m, psi_pi, LocalNuisance};
use leeb_core::kernel::KernelFamily;
use leeb_core::lasso::rearrange;
use leeb_core::*;
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::EpanechnikovUnit), Just(KernelFamily::EpanechnikovSqrt5)]
}

fn weighted_pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(((0..10i32).prop_map(|k| k as f64 * 0.25), 0.05..3.0f64), 1..50)
}

fn weighted_mean(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(y, w)| y * w).sum::<f64>() / pairs.iter().map(|p| p.1).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_is_symmetric_and_nonnegative(k in kernel(), u in -4.0..4.0f64) {
        let w = k.weight(u);
        prop_assert!(w >= 0.0);
        prop_assert_eq!(w, k.weight(-u));
        if u.abs() > k.radius() {
            prop_assert_eq!(w, 0.0);
        }
    }

    #[test]
    fn frechet_interval_is_ordered(s in prop::collection::vec(0.0..=1.0f64, 1..8)) {
        let f = frechet_interval(&s).unwrap();
        prop_assert!(f.pi_l <= f.pi_u);
        prop_assert!(f.pi_l >= 0.0);
        prop_assert_eq!(f.pi_u, s.iter().copied().fold(1.0, f64::min));
    }

    #[test]
    fn trimmed_means_are_monotone(pairs in weighted_pairs(), a in 0.01..1.0f64, b in 0.01..1.0f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        let s = WeightedSample::new(pairs.clone());
        let tol = 1e-9;
        prop_assert!(s.upper_trimmed_mean(hi) <= s.upper_trimmed_mean(lo) + tol);
        prop_assert!(s.lower_trimmed_mean(hi) >= s.lower_trimmed_mean(lo) - tol);
        prop_assert!(s.lower_trimmed_mean(lo) <= s.upper_trimmed_mean(lo) + tol);
    }

    #[test]
    fn full_trim_probability_gives_the_mean(pairs in weighted_pairs()) {
        let s = WeightedSample::new(pairs.clone());
        let m = weighted_mean(&pairs);
        prop_assert!((s.upper_trimmed_mean(1.0) - m).abs() < 1e-9);
        prop_assert!((s.lower_trimmed_mean(1.0) - m).abs() < 1e-9);
    }

    #[test]
    fn trimmed_tail_has_exact_mass(pairs in weighted_pairs(), p in 0.01..1.0f64) {
        let s = WeightedSample::new(pairs);
        let (_, q, theta) = s.upper_trimmed(p);
        let mass: f64 = s.values().iter().zip(s.weights())
            .map(|(&y, &w)| if y > q { w } else if y == q { theta * w } else { 0.0 })
            .sum();
        prop_assert!((mass - p * s.total()).abs() < 1e-9 * s.total());
    }

    #[test]
    fn quantile_is_a_generalized_inverse(pairs in weighted_pairs(), u in 0.0..1.0f64) {
        let s = WeightedSample::new(pairs);
        let q = s.quantile(u);
        prop_assert!(s.cdf(q) >= u - 1e-12);
        let below = s.values().iter().copied().filter(|&v| v < q).fold(f64::NEG_INFINITY, f64::max);
        if below.is_finite() {
            prop_assert!(s.cdf(below) < u + 1e-12);
        }
    }

    #[test]
    fn binary_bounds_are_nested(py in 0.0..=1.0f64, a in 0.01..=1.0f64, b in 0.01..=1.0f64) {
        let (small, large) = (a.min(b), a.max(b));
        let (l1, u1) = binary_outcome_bounds(py, small).unwrap();
        let (l2, u2) = binary_outcome_bounds(py, large).unwrap();
        for v in [l1, u1, l2, u2] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(l1 <= u1 && l2 <= u2);
        prop_assert!(l1 <= l2 + 1e-12 && u2 <= u1 + 1e-12);
    }

    #[test]
    fn trimming_probability_is_capped(pi in 0.0..1.0f64, s in 0.01..=1.0f64, nu in 0.0..0.05f64) {
        let p = trimming_probability(pi, s, nu).unwrap();
        prop_assert!(p <= 1.0 - nu + 1e-15);
        prop_assert!((p - ((pi / s).min(1.0) - nu)).abs() < 1e-15);
    }

    #[test]
    fn sufficient_value_is_the_minimum(s in prop::collection::vec(0.01..1.0f64, 1..20)) {
        let sv = sufficient_value(&s);
        prop_assert_eq!(sv.pi_hat, s.iter().copied().fold(1.0, f64::min));
        prop_assert_eq!(s[sv.index], sv.pi_hat);
    }

    #[test]
    fn classification_picks_a_minimizer(s in prop::collection::vec(0.01..1.0f64, 1..12)) {
        let picks = classify_sufficient(&s, 1e-6);
        let min = s.iter().copied().fold(1.0, f64::min);
        prop_assert!(!picks.is_empty());
        for j in picks {
            prop_assert!(s[j] <= min + 1e-6);
        }
    }

    #[test]
    fn rearrangement_sorts_and_preserves_values(mut v in prop::collection::vec(-5.0..5.0f64, 0..30)) {
        let mut expected = v.clone();
        expected.sort_by(|a, b| a.total_cmp(b));
        rearrange(&mut v);
        prop_assert_eq!(v, expected);
    }

    #[test]
    fn correction_outside_both_windows_is_the_mean_term(
        s_j in 0.1..1.0f64, s_d in 0.1..1.0f64, mu_j in 0.2..2.0f64, mu_d in 0.2..2.0f64,
        q in -2.0..2.0f64, rho in -2.0..2.0f64, k in 0.1..2.0f64,
    ) {
        let nu = LocalNuisance { s_j, s_d, mu_j, mu_d, q, rho };
        let p = (s_j / s_d).min(1.0) - 0.01;
        for side in [Side::Upper, Side::Lower] {
            let c = correction(1, q, 0.0, 0.0, &nu, p, side, true);
            prop_assert!((c - rho * s_j).abs() < 1e-9 * (1.0 + rho.abs()));
            prop_assert_eq!(moment_m(0, q, k, mu_d, q, side, true), 0.0);
        }
        prop_assert_eq!(psi_pi(1, 0.0, mu_j, s_j), s_j);
    }

    #[test]
    fn grid_is_evenly_spaced(lo in -5.0..5.0f64, width in 0.1..10.0f64, j in 2usize..50) {
        let g = build_grid(lo, lo + width, j).unwrap();
        prop_assert_eq!(g.len(), j);
        prop_assert!((g.min() - lo).abs() < 1e-12);
        prop_assert!((g.max() - lo - width).abs() < 1e-9);
        let step = width / (j - 1) as f64;
        for w in g.points().windows(2) {
            prop_assert!((w[1] - w[0] - step).abs() < 1e-9);
        }
    }

    #[test]
    fn folds_partition_the_sample(n in 1usize..500, l in 1usize..12, seed in any::<u64>()) {
        prop_assume!(l <= n);
        let f = assign_folds(n, l, seed).unwrap();
        let sizes = f.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nocov_bounds_are_ordered(seed in 0u64..1000) {
        let data = generate(&DgpSpec::canonical(0), 1500, seed).unwrap();
        let grid = build_grid(0.2, 0.8, 6).unwrap();
        let config = EstimatorConfig {
            bandwidth: BandwidthPlan { rule: BandwidthRule::Fixed(0.15), ..Default::default() },
            ..Default::default()
        };
        let fit = bounds_curve_nocov(&data, &grid, &config).unwrap();
        for p in &fit.curve.points {
            prop_assert!(p.rho_l <= p.rho_u + 1e-12);
            prop_assert!(p.ci_low <= p.rho_l && p.rho_u <= p.ci_high);
            prop_assert!(p.p_trim > 0.0 && p.p_trim <= 1.0);
        }
        let at = fit.curve.d_at_index;
        prop_assert_eq!(fit.curve.points[at].rho_l, fit.curve.points[at].rho_u);
    }
}
