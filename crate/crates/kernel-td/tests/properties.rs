//! Property tests of the structural invariants.

use proptest::prelude::*;

use kernel_td::kernels::{frac, KernelSpec};
use kernel_td::td::{AlphaHistory, TdData, ValueFunction, WeightFactor};

fn spline(s: u32) -> KernelSpec {
    KernelSpec::sobolev(s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fractional_part_in_unit_interval(t in -100.0f64..100.0) {
        let f = frac(t);
        prop_assert!((0.0..1.0).contains(&f));
        // integer shifts leave it unchanged
        prop_assert!((frac(t + 3.0) - f).abs() < 1e-9);
    }

    #[test]
    fn rewards_are_bounded_by_one(x in 0.0f64..1.0) {
        for reward in [kernel_td::mrp::Reward::Abs, kernel_td::mrp::Reward::Cos] {
            let r = reward.eval(x);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn hilbert_norm_dominates_l2_norm(
        s in 1u32..=2,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 1..16),
    ) {
        // ||f||²_L2 <= M_H ||f||²_H on the truncation
        let m = kernel_td::spectral::SpectralModel::build(
            s, 0.8, 0.5, kernel_td::mrp::Reward::Abs, 8,
        ).unwrap();
        let mut v = nalgebra::DVector::zeros(m.dim());
        for (i, &c) in coeffs.iter().enumerate() {
            v[i % m.dim()] += c;
        }
        let l2 = m.l2_norm(&v);
        let h = m.h_norm(&v);
        let bound = m.sup_diagonal().sqrt() * h;
        prop_assert!(l2 <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn kernel_is_symmetric_and_periodic(
        s in 1u32..=2,
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        let k = spline(s);
        // pointwise evaluation is symmetric up to rounding; exact equality
        // of matrix entries is guaranteed by the matrix constructor
        prop_assert!((k.eval(x, y) - k.eval(y, x)).abs() <= 1e-12);
        prop_assert!((k.eval(x + 1.0, y) - k.eval(x, y)).abs() <= 1e-9);
        // diagonal dominance of a PSD translation-invariant kernel
        prop_assert!(k.eval(x, y) <= k.eval(x, x) + 1e-12);
    }

    #[test]
    fn kernel_matrices_are_psd(
        s in 1u32..=2,
        points in proptest::collection::vec(0.0f64..1.0, 1..12),
    ) {
        let m = spline(s).matrix(&points).unwrap();
        let (min, max) = m.eigen_range();
        prop_assert!(min >= -1e-8 * max.max(1.0));
    }

    #[test]
    fn projection_shrinks_and_is_idempotent(
        coeffs in proptest::collection::vec(-2.0f64..2.0, 1..8),
        radius in 0.05f64..3.0,
    ) {
        let n = coeffs.len();
        let support: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let vf = ValueFunction { kernel: spline(1), support, coeffs };
        let norm = vf.h_norm();
        let projected = vf.project_ball(radius);
        prop_assert!(projected.h_norm() <= radius.min(norm) * (1.0 + 1e-12) + 1e-12);
        let twice = projected.project_ball(radius);
        for (a, b) in twice.coeffs.iter().zip(&projected.coeffs) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn evaluation_is_linear_in_coefficients(
        coeffs in proptest::collection::vec(-1.0f64..1.0, 1..8),
        scale in -3.0f64..3.0,
        y in 0.0f64..1.0,
    ) {
        let n = coeffs.len();
        let support: Vec<f64> = (0..n).map(|i| (i as f64 + 0.3) / (n as f64 + 1.0)).collect();
        let vf = ValueFunction { kernel: spline(2), support: support.clone(), coeffs: coeffs.clone() };
        let scaled = ValueFunction {
            kernel: spline(2),
            support,
            coeffs: coeffs.iter().map(|c| c * scale).collect(),
        };
        prop_assert!((scaled.evaluate(y) - scale * vf.evaluate(y)).abs() <= 1e-9);
        prop_assert!((scaled.h_norm() - scale.abs() * vf.h_norm()).abs() <= 1e-9);
    }

    #[test]
    fn averages_are_convex_combinations(
        rows_seed in 0u64..1000,
        n in 2usize..20,
    ) {
        // every averaging scheme stays inside the convex hull of the
        // iterate evaluations at any point
        let mut rng = kernel_td::rng::derive_rng(rows_seed, &[n as u64]);
        use rand::Rng as _;
        let data = TdData::from_parts(
            (0..n).map(|_| rng.gen()).collect(),
            (0..n).map(|_| rng.gen()).collect(),
            (0..n).map(|_| rng.gen()).collect(),
        );
        let rows: Vec<Vec<f64>> =
            (1..=n).map(|k| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let h = AlphaHistory::from_parts(spline(1), data, rows);
        let y: f64 = rng.gen();
        let values: Vec<f64> = (0..n).map(|k| h.value_function(k).evaluate(y)).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-9;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-9;

        for avg in [
            h.polyak_average(),
            h.tail_average(),
            h.exp_average(0.1, 0.2, WeightFactor::One),
            h.exp_average(0.1, 0.2, WeightFactor::Two),
        ] {
            let v = avg.evaluate(y);
            prop_assert!((lo..=hi).contains(&v), "average {v} outside [{lo}, {hi}]");
        }
    }
}
