//! Randomized invariants of pricing and projection.

mod common;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use svlmm::charfn::psi_albrecher;
use svlmm::market::swap_geometry;
use svlmm::model::{build_coeffs, ModelParams};
use svlmm::optim::{feller_untransform, Bounds, FellerProjection, Projection};
use svlmm::pricer::{price, quad_rule, DEFAULT_NODES};

fn feasible_theta() -> impl Strategy<Value = ModelParams> {
    (
        (1e-4..0.3f64, 1e-4..0.3f64, 0.05..2.0f64, 1e-3..0.3f64),
        (0.1..3.0f64, 0.1..3.0f64, 0.0..1.0f64, -0.95..0.95f64),
    )
        .prop_map(|((a, b, c, d), (kappa, theta, frac, rho))| ModelParams {
            a,
            b,
            c,
            d,
            kappa,
            theta,
            epsilon: frac * (2.0 * kappa * theta).sqrt(),
            rho,
        })
        .prop_filter("positive vol of variance", |t| t.epsilon > 1e-3)
}

fn swap() -> impl Strategy<Value = (usize, usize)> {
    prop::sample::select(common::SWAPS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transform_anchors_and_bound(theta in feasible_theta(), (m, tenor) in swap(), u in 0.0..50.0f64) {
        let (curve, grid, ctx) = (common::curve(), common::grid(), common::context());
        let geom = swap_geometry(&curve, &grid, m, m + tenor, ctx.shift).unwrap();
        let coeffs = build_coeffs(&theta, &ctx, &geom).unwrap();
        let at = |z: C64| psi_albrecher(&theta, &coeffs, ctx.v0, z).unwrap();
        prop_assert!((at(C64::new(1.0, 0.0)) - 1.0).norm() < 1e-12);
        prop_assert!(at(C64::new(0.0, u)).norm() <= 1.0 + 1e-12);
        // |ψ(1+iu)| ≤ ψ(1) = 1 as well.
        prop_assert!(at(C64::new(1.0, u)).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn prices_are_decreasing_convex_and_above_intrinsic(theta in feasible_theta(), (m, tenor) in swap()) {
        let (curve, grid, ctx) = (common::curve(), common::grid(), common::context());
        let geom = swap_geometry(&curve, &grid, m, m + tenor, ctx.shift).unwrap();
        let coeffs = build_coeffs(&theta, &ctx, &geom).unwrap();
        let rule = quad_rule(DEFAULT_NODES).unwrap();
        let strikes: Vec<f64> = (-4..=4).map(|k| geom.r0 + 0.0025 * k as f64).collect();
        let p: Vec<f64> = strikes
            .iter()
            .map(|&k| price(&theta, ctx.v0, &coeffs, &geom, k, &rule).unwrap())
            .collect();
        let tol = 1e-10 * geom.annuity;
        for (k, v) in strikes.iter().zip(&p) {
            prop_assert!(*v >= geom.annuity * (geom.r0 - k).max(0.0) - tol);
        }
        for w in p.windows(2) {
            prop_assert!(w[1] <= w[0] + tol);
        }
        for w in p.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -tol);
        }
    }

    #[test]
    fn feller_projection_is_feasible_and_idempotent(y in prop::collection::vec(-6.0..6.0f64, 8)) {
        let proj = FellerProjection::from_bounds(&Bounds::model_default()).unwrap();
        let p = proj.project(&DVector::from_vec(y));
        prop_assert!(proj.contains(&p));
        let x = feller_untransform(&p);
        prop_assert!(2.0 * x[4] * x[5] >= x[6] * x[6]);
        prop_assert!((proj.project(&p) - &p).amax() < 1e-12);
    }

    #[test]
    fn box_projection_is_nearest_point(x in prop::collection::vec(-3.0..3.0f64, 8)) {
        let b = Bounds::model_default();
        let x = DVector::from_vec(x);
        let p = b.project(&x);
        prop_assert!(b.contains(&p));
        for i in 0..8 {
            let inside = x[i] >= b.lower[i] && x[i] <= b.upper[i];
            prop_assert!(!inside || p[i] == x[i]);
        }
    }
}
