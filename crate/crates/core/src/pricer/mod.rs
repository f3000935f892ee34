//! Payer swaption prices and their parameter gradient.
//!
//! With `k̂ = ln((K+δ)/(R_0+δ))`,
//!
//! ```text
//! P_j = 1/2 + 1/π ∫_0^∞ Re(e^{-iu k̂} ψ(z_j(u)) / (iu)) du,  z_1 = 1 + iu, z_2 = iu
//! PS  = B^S(0) ((R_0+δ) P_1 - (K+δ) P_2)
//! ```
//!
//! and `∇P_j` is the same integral with `ψ` replaced by `ψ χ`. The integrals
//! are evaluated with a Gauss-Laguerre rule whose weights are compensated by
//! `e^{u_i}`. The values at the nodes depend only on `Θ` and `(m, n)`, so they
//! are computed once per swap and shared by every strike.

mod quadrature;

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

pub use quadrature::{quad_rule, QuadratureRule, MAX_NODES};

use crate::charfn::{log_psi, Representation};
use crate::gradient::chi;
use crate::market::SwapGeometry;
use crate::model::{CoeffPartials, ModelParams, PiecewiseCoeffs, N_PARAMS};
use crate::{Error, Result};

/// Default number of quadrature nodes.
pub const DEFAULT_NODES: usize = 90;

/// Price, gradient and the two probabilities of one swaption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceAndGrad {
    pub price: f64,
    /// Price before clamping tiny negative quadrature noise to zero.
    pub raw_price: f64,
    pub grad: [f64; N_PARAMS],
    pub p1: f64,
    pub p2: f64,
}

/// `ψ` (and optionally `ψ χ`) on both contours at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    pub psi1: Vec<C64>,
    pub psi2: Vec<C64>,
    pub dpsi1: Option<Vec<[C64; N_PARAMS]>>,
    pub dpsi2: Option<Vec<[C64; N_PARAMS]>>,
}

/// Evaluates the transform at all nodes. The value always comes from `repr`;
/// when partials are supplied the gradient sweep adds `∂ψ = ψ χ`.
pub fn node_values(
    theta: &ModelParams,
    v0: f64,
    coeffs: &PiecewiseCoeffs,
    partials: Option<&CoeffPartials>,
    rule: &QuadratureRule,
    repr: Representation,
) -> Result<NodeValues> {
    let n = rule.len();
    let mut psi1 = Vec::with_capacity(n);
    let mut psi2 = Vec::with_capacity(n);
    let mut dpsi1 = partials.map(|_| Vec::with_capacity(n));
    let mut dpsi2 = partials.map(|_| Vec::with_capacity(n));
    for &u in &rule.nodes {
        for (contour, z) in [(1, C64::new(1.0, u)), (2, C64::new(0.0, u))] {
            let value = log_psi(theta, coeffs, v0, z, repr)?.exp();
            let (vals, dvals) = if contour == 1 {
                (&mut psi1, &mut dpsi1)
            } else {
                (&mut psi2, &mut dpsi2)
            };
            vals.push(value);
            if let (Some(p), Some(d)) = (partials, dvals.as_mut()) {
                let g = chi(theta, coeffs, p, v0, z)?;
                let mut out = [C64::new(0.0, 0.0); N_PARAMS];
                for (o, c) in out.iter_mut().zip(g.chi) {
                    *o = value * c;
                }
                d.push(out);
            }
        }
    }
    Ok(NodeValues {
        psi1,
        psi2,
        dpsi1,
        dpsi2,
    })
}

/// Integrates the node values for one strike.
pub fn price_from_nodes(
    nodes: &NodeValues,
    geom: &SwapGeometry,
    strike: f64,
    rule: &QuadratureRule,
) -> Result<PriceAndGrad> {
    let k_hat = geom.log_moneyness(strike)?;
    let fwd = geom.r0 + geom.shift;
    let k = strike + geom.shift;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    // Time value integral, summed directly so the ½ terms of P1 and P2 do not cancel.
    let mut tv = 0.0;
    let mut g1 = [0.0; N_PARAMS];
    let mut g2 = [0.0; N_PARAMS];
    for (i, (&u, &w)) in rule.nodes.iter().zip(&rule.scaled_weights).enumerate() {
        // e^{-iu k̂} / (iu)
        let kernel = C64::new(0.0, -u * k_hat).exp() / C64::new(0.0, u);
        let kw = kernel * w;
        s1 += (kw * nodes.psi1[i]).re;
        s2 += (kw * nodes.psi2[i]).re;
        tv += (kw * (fwd * nodes.psi1[i] - k * nodes.psi2[i])).re;
        if let (Some(d1), Some(d2)) = (&nodes.dpsi1, &nodes.dpsi2) {
            for x in 0..N_PARAMS {
                g1[x] += (kw * d1[i][x]).re;
                g2[x] += (kw * d2[i][x]).re;
            }
        }
    }
    let p1 = 0.5 + s1 / PI;
    let p2 = 0.5 + s2 / PI;
    let raw_price = geom.annuity * (0.5 * (fwd - k) + tv / PI);
    if !raw_price.is_finite() {
        return Err(Error::NumericalOverflow { segment: 0 });
    }
    let price = if raw_price < 0.0 && raw_price.abs() < 1e-12 * geom.annuity {
        0.0
    } else {
        raw_price
    };
    let mut grad = [0.0; N_PARAMS];
    for x in 0..N_PARAMS {
        grad[x] = geom.annuity * (fwd * g1[x] - k * g2[x]) / PI;
    }
    Ok(PriceAndGrad {
        price,
        raw_price,
        grad,
        p1,
        p2,
    })
}

/// `(P_1, P_2)` for one strike.
pub fn p1p2(
    theta: &ModelParams,
    v0: f64,
    coeffs: &PiecewiseCoeffs,
    geom: &SwapGeometry,
    strike: f64,
    rule: &QuadratureRule,
) -> Result<(f64, f64)> {
    let nodes = node_values(theta, v0, coeffs, None, rule, Representation::Albrecher)?;
    let r = price_from_nodes(&nodes, geom, strike, rule)?;
    Ok((r.p1, r.p2))
}

/// Payer swaption price.
pub fn price(
    theta: &ModelParams,
    v0: f64,
    coeffs: &PiecewiseCoeffs,
    geom: &SwapGeometry,
    strike: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let nodes = node_values(theta, v0, coeffs, None, rule, Representation::Albrecher)?;
    Ok(price_from_nodes(&nodes, geom, strike, rule)?.price)
}

/// Price together with its gradient in `(a, b, c, d, κ, θ, ε, ρ)`.
pub fn price_gradient(
    theta: &ModelParams,
    v0: f64,
    coeffs: &PiecewiseCoeffs,
    partials: &CoeffPartials,
    geom: &SwapGeometry,
    strike: f64,
    rule: &QuadratureRule,
) -> Result<PriceAndGrad> {
    let nodes = node_values(
        theta,
        v0,
        coeffs,
        Some(partials),
        rule,
        Representation::Albrecher,
    )?;
    price_from_nodes(&nodes, geom, strike, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{swap_geometry, BetaMatrix, TenorGrid, ZeroCurve};
    use crate::model::{build_coeffs_with_partials, ModelContext};

    fn setup(m: usize, n: usize) -> (ModelParams, ModelContext, SwapGeometry) {
        let grid = TenorGrid::regular(1.0, 30).unwrap();
        let pillars: Vec<f64> = (1..=30).map(|t| t as f64).collect();
        let curve = ZeroCurve::flat(0.02, &pillars).unwrap();
        let geom = swap_geometry(&curve, &grid, m, n, 0.1).unwrap();
        let ctx = ModelContext::with_betas(BetaMatrix::two_factor(30, 0.9, 0.1));
        let theta = ModelParams {
            a: 0.02,
            b: 0.05,
            c: 0.6,
            d: 0.05,
            kappa: 0.8,
            theta: 1.2,
            epsilon: 0.9,
            rho: -0.3,
        };
        (theta, ctx, geom)
    }

    #[test]
    fn strike_ladder_is_monotone_and_bounded() {
        let (theta, ctx, geom) = setup(5, 15);
        let rule = quad_rule(DEFAULT_NODES).unwrap();
        let (c, _) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let nodes = node_values(&theta, ctx.v0, &c, None, &rule, Representation::Albrecher)
            .unwrap();
        let mut last = f64::INFINITY;
        for bp in (-300..=300).step_by(25) {
            let k = geom.r0 + bp as f64 * 1e-4;
            let r = price_from_nodes(&nodes, &geom, k, &rule).unwrap();
            assert!(r.price <= last + 1e-10);
            assert!(r.price >= geom.annuity * (geom.r0 - k).max(0.0) - 1e-8);
            assert!((0.0..=1.0).contains(&r.p2));
            assert!((0.0..=1.0).contains(&r.p1));
            last = r.price;
        }
        let deep = price_from_nodes(&nodes, &geom, geom.r0 + 0.15, &rule).unwrap();
        assert!(deep.price.abs() < 1e-8, "{deep:?}");
        assert!(deep.p1 < 1e-6 && deep.p2 < 1e-6);
    }

    #[test]
    fn gradient_path_price_is_identical() {
        let (theta, ctx, geom) = setup(3, 8);
        let rule = quad_rule(DEFAULT_NODES).unwrap();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let k = geom.r0 + 0.005;
        let a = price(&theta, ctx.v0, &c, &geom, k, &rule).unwrap();
        let b = price_gradient(&theta, ctx.v0, &c, &p, &geom, k, &rule).unwrap();
        assert_eq!(a, b.price);
    }

    #[test]
    fn zero_gradient_without_chi() {
        let (theta, ctx, geom) = setup(3, 8);
        let rule = quad_rule(DEFAULT_NODES).unwrap();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let mut nodes =
            node_values(&theta, ctx.v0, &c, Some(&p), &rule, Representation::Albrecher).unwrap();
        for v in nodes.dpsi1.as_mut().unwrap().iter_mut().chain(nodes.dpsi2.as_mut().unwrap()) {
            *v = [C64::new(0.0, 0.0); N_PARAMS];
        }
        let r = price_from_nodes(&nodes, &geom, geom.r0, &rule).unwrap();
        assert_eq!(r.grad, [0.0; N_PARAMS]);
        assert_eq!(r.price, price(&theta, ctx.v0, &c, &geom, geom.r0, &rule).unwrap());
    }

    #[test]
    fn positive_theta_sensitivity_at_the_money() {
        let (theta, ctx, geom) = setup(5, 15);
        let rule = quad_rule(DEFAULT_NODES).unwrap();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let r = price_gradient(&theta, ctx.v0, &c, &p, &geom, geom.r0, &rule).unwrap();
        assert!(r.grad[5] > 0.0);
    }
}
