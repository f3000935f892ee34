//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod oracle;

use svlmm::calib::{CalibOptions, CalibProblem};
use svlmm::market::{swap_geometry, BetaMatrix, SwaptionQuote, TenorGrid, ZeroCurve};
use svlmm::model::{ModelContext, ModelParams};

/// Reference parameters used to generate synthetic quotes.
pub fn theta_star() -> ModelParams {
    ModelParams {
        a: 0.02,
        b: 0.05,
        c: 0.6,
        d: 0.05,
        kappa: 0.8,
        theta: 1.2,
        epsilon: 0.9,
        rho: -0.3,
    }
}

pub const GRID_YEARS: usize = 30;

pub fn grid() -> TenorGrid {
    TenorGrid::regular(1.0, GRID_YEARS).unwrap()
}

/// Upward-sloping curve, zero rate `1% + 1.5% (1 - e^{-t/6})`.
pub fn curve() -> ZeroCurve {
    let pillars: Vec<(f64, f64)> = (1..=GRID_YEARS)
        .map(|t| {
            let t = t as f64;
            let z = 0.01 + 0.015 * (1.0 - (-t / 6.0).exp());
            (t, (-z * t).exp())
        })
        .collect();
    ZeroCurve::new(&pillars).unwrap()
}

pub fn context() -> ModelContext {
    ModelContext::with_betas(BetaMatrix::two_factor(GRID_YEARS, 0.9, 0.1))
}

/// Expiry × tenor pairs of the synthetic book (in years on the annual grid).
pub const SWAPS: [(usize, usize); 12] = [
    (1, 2),
    (1, 5),
    (1, 10),
    (2, 2),
    (2, 5),
    (2, 10),
    (5, 2),
    (5, 5),
    (5, 10),
    (10, 2),
    (10, 5),
    (10, 10),
];

pub const OFFSETS_BPS: [f64; 5] = [-100.0, -50.0, 0.0, 50.0, 100.0];

/// 60 quotes priced at `theta` with the given options.
pub fn synthetic_quotes(theta: &ModelParams, options: &CalibOptions) -> Vec<SwaptionQuote> {
    let (curve, grid, ctx) = (curve(), grid(), context());
    let mut quotes = Vec::new();
    for &(m, tenor) in &SWAPS {
        let n = m + tenor;
        let geom = swap_geometry(&curve, &grid, m, n, ctx.shift).unwrap();
        for &bps in &OFFSETS_BPS {
            quotes.push(SwaptionQuote {
                m,
                n,
                strike: geom.r0 + bps * 1e-4,
                strike_offset_bps: bps,
                price: 1.0,
                normal_vol: None,
                weight: 1.0,
            });
        }
    }
    let probe = CalibProblem::new(&curve, &grid, quotes.clone(), ctx, options.clone()).unwrap();
    let prices = probe.model_prices(theta).unwrap();
    for (q, p) in quotes.iter_mut().zip(prices) {
        q.price = p;
    }
    quotes
}

/// Calibration problem whose quotes are exact model prices at [`theta_star`].
pub fn synthetic_problem() -> CalibProblem {
    let options = CalibOptions::default();
    let quotes = synthetic_quotes(&theta_star(), &options);
    CalibProblem::new(&curve(), &grid(), quotes, context(), options).unwrap()
}
