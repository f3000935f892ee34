//! Model parameters and the piecewise-constant coefficients of the frozen
//! swap-rate dynamics.
//!
//! Forward `k` has loading `γ_k(t) = g(T_k - T_l) β_{k-l+1}` for
//! `t ∈ [T_l, T_{l+1})` with `g(u) = (a + b u) e^{-c u} + d`. Its
//! correlation with the variance factor is
//! `ρ_k = ρ / √N_f · Σ_p γ_k^{(p)} / ‖γ_k‖`, so the product `ρ_k ‖γ_k‖`
//! never needs the division and stays well defined when `g` vanishes.
//!
//! Time runs backwards from the swaption maturity: segment `j` covers
//! `τ ∈ (τ_j, τ_{j+1}]` with `τ_j = T_m - T_{m-j}`, i.e. calendar time
//! `[T_l, T_{l+1})` with `l = m - 1 - j`. The constants on a segment are the
//! loadings in force on that calendar interval.

use serde::{Deserialize, Serialize};

use crate::market::{BetaMatrix, SwapGeometry, DEFAULT_SHIFT};
use crate::{Error, Result};

/// Number of calibrated parameters.
pub const N_PARAMS: usize = 8;

/// Parameter names in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["a", "b", "c", "d", "kappa", "theta", "epsilon", "rho"];

/// Distance from ±1 at which the effective correlation is clamped.
const RHO_TILDE_MARGIN: f64 = 1e-10;

/// Index of each calibrated parameter in `Θ = (a, b, c, d, κ, θ, ε, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    A = 0,
    B = 1,
    C = 2,
    D = 3,
    Kappa = 4,
    Theta = 5,
    Epsilon = 6,
    Rho = 7,
}

impl Param {
    pub const ALL: [Param; N_PARAMS] = [
        Param::A,
        Param::B,
        Param::C,
        Param::D,
        Param::Kappa,
        Param::Theta,
        Param::Epsilon,
        Param::Rho,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        PARAM_NAMES[self.index()]
    }
}

/// The calibrated parameter vector `Θ = (a, b, c, d, κ, θ, ε, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub kappa: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub rho: f64,
}

impl ModelParams {
    pub fn from_array(x: [f64; N_PARAMS]) -> Self {
        Self {
            a: x[0],
            b: x[1],
            c: x[2],
            d: x[3],
            kappa: x[4],
            theta: x[5],
            epsilon: x[6],
            rho: x[7],
        }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; N_PARAMS] = x.try_into().map_err(|_| {
            Error::Validation(format!("expected {N_PARAMS} parameters, got {}", x.len()))
        })?;
        Ok(Self::from_array(arr))
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.a,
            self.b,
            self.c,
            self.d,
            self.kappa,
            self.theta,
            self.epsilon,
            self.rho,
        ]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn with(&self, p: Param, value: f64) -> Self {
        let mut x = self.to_array();
        x[p.index()] = value;
        Self::from_array(x)
    }

    /// `2κθ ≥ ε²`.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.epsilon * self.epsilon
    }

    /// True when `Θ ∈ R+^4 × (R+*)^3 × (-1, 1)`.
    pub fn in_domain(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
            && self.a >= 0.0
            && self.b >= 0.0
            && self.c >= 0.0
            && self.d >= 0.0
            && self.kappa > 0.0
            && self.theta > 0.0
            && self.epsilon > 0.0
            && self.rho.abs() < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_domain() {
            Ok(())
        } else {
            Err(Error::Domain(format!("parameters outside the model domain: {self:?}")))
        }
    }
}

/// Fixed (non-calibrated) model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    /// Displacement `δ` of forward and swap rates.
    pub shift: f64,
    /// Initial variance `V_0`.
    pub v0: f64,
    pub betas: BetaMatrix,
}

impl ModelContext {
    pub fn new(shift: f64, v0: f64, betas: BetaMatrix) -> Result<Self> {
        if !(shift >= 0.0) {
            return Err(Error::Domain(format!("shift must be non-negative, got {shift}")));
        }
        if !(v0 > 0.0) {
            return Err(Error::Domain(format!("initial variance must be positive, got {v0}")));
        }
        Ok(Self { shift, v0, betas })
    }

    pub fn with_betas(betas: BetaMatrix) -> Self {
        Self {
            shift: DEFAULT_SHIFT,
            v0: 1.0,
            betas,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.betas.n_factors()
    }
}

/// `g(u) = (a + b u) e^{-c u} + d`.
pub fn g_eval(a: f64, b: f64, c: f64, d: f64, u: f64) -> f64 {
    (a + b * u) * (-c * u).exp() + d
}

/// `(∂g/∂a, ∂g/∂b, ∂g/∂c, ∂g/∂d)` at `u`.
pub fn g_partials(a: f64, b: f64, c: f64, _d: f64, u: f64) -> [f64; 4] {
    let da = (-c * u).exp();
    let db = u * da;
    let dc = -(a + b * u) * db;
    [da, db, dc, 1.0]
}

/// Constants of one τ-segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Calendar index `l` of the interval `[T_l, T_{l+1})`.
    pub calendar_index: usize,
    /// Segment length `τ_{j+1} - τ_j`.
    pub dtau: f64,
    /// `λ_j²`.
    pub lambda2: f64,
    /// `ρ̃_j λ_j`.
    pub rho_lambda: f64,
    /// Drift adjustment `ξ_j`.
    pub xi: f64,
    /// `κ ξ_j`.
    pub kappa_xi: f64,
    /// True when `ρ̃_j` hit the clamp.
    pub clamped: bool,
}

impl Segment {
    pub fn lambda(&self) -> f64 {
        self.lambda2.sqrt()
    }

    /// `ρ̃_j`; zero when the loading vanishes.
    pub fn rho_tilde(&self) -> f64 {
        let l = self.lambda();
        if l > 0.0 {
            self.rho_lambda / l
        } else {
            0.0
        }
    }
}

/// Piecewise-constant `λ`, `ρ̃` and `ξ` on the τ grid, ordered by τ.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCoeffs {
    pub segments: Vec<Segment>,
}

impl PiecewiseCoeffs {
    /// `τ_0 = 0 < τ_1 < ... < τ_m = T_m`.
    pub fn taus(&self) -> Vec<f64> {
        let mut taus = Vec::with_capacity(self.segments.len() + 1);
        let mut t = 0.0;
        taus.push(t);
        for s in &self.segments {
            t += s.dtau;
            taus.push(t);
        }
        taus
    }

    pub fn maturity(&self) -> f64 {
        self.segments.iter().map(|s| s.dtau).sum()
    }
}

/// Parameter partials of the constants of one segment.
///
/// Arrays are indexed by `x ∈ {a, b, c, d}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentPartials {
    pub d_lambda2: [f64; 4],
    pub d_rho_lambda: [f64; 4],
    pub d_xi: [f64; 4],
    /// `∂(ρ̃λ)/∂ρ`; `ρ̃λ` is linear in `ρ` unless clamped.
    pub d_rho_lambda_d_rho: f64,
    pub d_xi_d_rho: f64,
    /// `(ξ - 1)/ε`.
    pub d_xi_d_epsilon: f64,
    /// `-(ξ - 1)/κ`.
    pub d_xi_d_kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPartials {
    pub segments: Vec<SegmentPartials>,
}

/// Per-unit-ρ building blocks shared by the coefficients and their partials.
struct SegmentSums {
    lambda2: f64,
    /// `Σ_k ω_k g_k σ_k / √N_f` with `σ_k = Σ_p β^{(p)}`.
    rho_lambda_unit: f64,
    /// `Σ_j α_j Σ_{k=l+1}^{j} c_k g_k σ_k / √N_f`.
    drift_unit: f64,
    d_lambda2: [f64; 4],
    d_rho_lambda_unit: [f64; 4],
    d_drift_unit: [f64; 4],
}

fn segment_sums(
    theta: &ModelParams,
    betas: &BetaMatrix,
    geom: &SwapGeometry,
    l: usize,
    with_partials: bool,
) -> Result<SegmentSums> {
    let nf = betas.n_factors();
    let inv_sqrt_nf = 1.0 / (nf as f64).sqrt();
    let (m, n) = (geom.m, geom.n);
    let t_l = geom.dates[l];

    let mut sum_vec = vec![0.0; nf];
    let mut d_sum_vec = [vec![0.0; nf], vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]];
    let mut rl = 0.0;
    let mut d_rl = [0.0; 4];
    for (idx, k) in (m..n).enumerate() {
        let beta = betas.get(k - l + 1)?;
        let u = geom.dates[k] - t_l;
        let g = g_eval(theta.a, theta.b, theta.c, theta.d, u);
        let omega = geom.omegas[idx];
        let sigma: f64 = beta.iter().sum();
        for p in 0..nf {
            sum_vec[p] += omega * g * beta[p];
        }
        rl += omega * g * sigma * inv_sqrt_nf;
        if with_partials {
            let dg = g_partials(theta.a, theta.b, theta.c, theta.d, u);
            for x in 0..4 {
                for p in 0..nf {
                    d_sum_vec[x][p] += omega * dg[x] * beta[p];
                }
                d_rl[x] += omega * dg[x] * sigma * inv_sqrt_nf;
            }
        }
    }
    let lambda2: f64 = sum_vec.iter().map(|v| v * v).sum();
    let mut d_lambda2 = [0.0; 4];
    if with_partials {
        for x in 0..4 {
            d_lambda2[x] = 2.0
                * d_sum_vec[x]
                    .iter()
                    .zip(&sum_vec)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
    }

    // Girsanov drift: Σ_{j=m}^{n-1} α_j Σ_{k=l+1}^{j} c_k ρ_k ‖γ_k‖.
    let mut inner = 0.0;
    let mut d_inner = [0.0; 4];
    let mut drift = 0.0;
    let mut d_drift = [0.0; 4];
    for k in (l + 1)..n {
        let beta = betas.get(k - l + 1)?;
        let dt = geom.dates[k + 1] - geom.dates[k];
        let fk = geom.forwards[k];
        let ck = dt * (fk + geom.shift) / (1.0 + dt * fk);
        let u = geom.dates[k] - t_l;
        let sigma: f64 = beta.iter().sum();
        let w = ck * sigma * inv_sqrt_nf;
        inner += w * g_eval(theta.a, theta.b, theta.c, theta.d, u);
        if with_partials {
            let dg = g_partials(theta.a, theta.b, theta.c, theta.d, u);
            for x in 0..4 {
                d_inner[x] += w * dg[x];
            }
        }
        if k >= m {
            let alpha = geom.alphas[k - m];
            drift += alpha * inner;
            for x in 0..4 {
                d_drift[x] += alpha * d_inner[x];
            }
        }
    }

    Ok(SegmentSums {
        lambda2,
        rho_lambda_unit: rl,
        drift_unit: drift,
        d_lambda2,
        d_rho_lambda_unit: d_rl,
        d_drift_unit: d_drift,
    })
}

fn assemble(
    theta: &ModelParams,
    ctx: &ModelContext,
    geom: &SwapGeometry,
    with_partials: bool,
) -> Result<(PiecewiseCoeffs, CoeffPartials)> {
    if geom.m == 0 {
        return Err(Error::Validation("swaption maturity index must be positive".into()));
    }
    let (kappa, eps, rho) = (theta.kappa, theta.epsilon, theta.rho);
    let mut segments = Vec::with_capacity(geom.m);
    let mut partials = Vec::with_capacity(if with_partials { geom.m } else { 0 });
    for j in 0..geom.m {
        let l = geom.m - 1 - j;
        let sums = segment_sums(theta, &ctx.betas, geom, l, with_partials)?;
        let lambda = sums.lambda2.sqrt();
        let mut rho_lambda = rho * sums.rho_lambda_unit;
        if lambda == 0.0 && rho_lambda != 0.0 {
            return Err(Error::DegenerateLoading { segment: j });
        }
        let mut clamped = false;
        let bound = (1.0 - RHO_TILDE_MARGIN) * lambda;
        if rho_lambda.abs() > bound {
            log::warn!(
                "effective correlation {} on segment {j} clamped to ±{}",
                rho_lambda / lambda,
                1.0 - RHO_TILDE_MARGIN
            );
            rho_lambda = bound.copysign(rho_lambda);
            clamped = true;
        }
        let kappa_xi = kappa + eps * rho * sums.drift_unit;
        let xi = 1.0 + eps / kappa * rho * sums.drift_unit;
        segments.push(Segment {
            calendar_index: l,
            dtau: geom.dates[l + 1] - geom.dates[l],
            lambda2: sums.lambda2,
            rho_lambda,
            xi,
            kappa_xi,
            clamped,
        });
        if with_partials {
            let mut p = SegmentPartials {
                d_lambda2: sums.d_lambda2,
                ..Default::default()
            };
            for x in 0..4 {
                p.d_rho_lambda[x] = if clamped {
                    (1.0 - RHO_TILDE_MARGIN).copysign(rho_lambda) * sums.d_lambda2[x]
                        / (2.0 * lambda)
                } else {
                    rho * sums.d_rho_lambda_unit[x]
                };
                p.d_xi[x] = eps / kappa * rho * sums.d_drift_unit[x];
            }
            p.d_rho_lambda_d_rho = if clamped { 0.0 } else { sums.rho_lambda_unit };
            p.d_xi_d_rho = eps / kappa * sums.drift_unit;
            p.d_xi_d_epsilon = rho * sums.drift_unit / kappa;
            p.d_xi_d_kappa = -eps * rho * sums.drift_unit / (kappa * kappa);
            partials.push(p);
        }
    }
    Ok((PiecewiseCoeffs { segments }, CoeffPartials { segments: partials }))
}

/// Builds `λ_j`, `ρ̃_j` and `ξ_j` on every segment of the swaption `(m, n)`.
pub fn build_coeffs(
    theta: &ModelParams,
    ctx: &ModelContext,
    geom: &SwapGeometry,
) -> Result<PiecewiseCoeffs> {
    Ok(assemble(theta, ctx, geom, false)?.0)
}

/// Builds the partials of the segment constants with respect to the parameters.
pub fn build_coeff_partials(
    theta: &ModelParams,
    ctx: &ModelContext,
    geom: &SwapGeometry,
) -> Result<CoeffPartials> {
    Ok(assemble(theta, ctx, geom, true)?.1)
}

/// Coefficients and partials in one pass.
pub fn build_coeffs_with_partials(
    theta: &ModelParams,
    ctx: &ModelContext,
    geom: &SwapGeometry,
) -> Result<(PiecewiseCoeffs, CoeffPartials)> {
    assemble(theta, ctx, geom, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{swap_geometry, TenorGrid, ZeroCurve};
    use approx::assert_relative_eq;

    fn fixture_theta() -> ModelParams {
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

    fn fixture_geom(m: usize, n: usize) -> (ModelContext, SwapGeometry) {
        let grid = TenorGrid::regular(1.0, 40).unwrap();
        let pillars: Vec<f64> = (1..=40).map(|t| t as f64).collect();
        let curve = ZeroCurve::flat(0.015, &pillars).unwrap();
        let geom = swap_geometry(&curve, &grid, m, n, 0.1).unwrap();
        let ctx = ModelContext::with_betas(BetaMatrix::two_factor(40, 1.2, 0.15));
        (ctx, geom)
    }

    #[test]
    fn g_at_zero_and_flat() {
        assert_eq!(g_eval(0.3, 2.0, 1.0, 0.2, 0.0), 0.5);
        assert_relative_eq!(
            g_eval(1.0, 2.0, 3.0, 0.5, 1.0),
            3.0 * (-3.0f64).exp() + 0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(g_eval(0.1, 0.2, 0.0, 0.3, 2.5), 0.1 + 0.5 + 0.3);
        assert_eq!(g_partials(0.1, 0.2, 0.3, 0.4, 0.0), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn g_partials_match_central_differences() {
        let (a, b, c, d) = (0.03, 0.4, 0.7, 0.02);
        for &u in &[0.0, 0.5, 1.0, 3.0, 12.0] {
            let an = g_partials(a, b, c, d, u);
            let h = 1e-7;
            let fd = [
                (g_eval(a + h, b, c, d, u) - g_eval(a - h, b, c, d, u)) / (2.0 * h),
                (g_eval(a, b + h, c, d, u) - g_eval(a, b - h, c, d, u)) / (2.0 * h),
                (g_eval(a, b, c + h, d, u) - g_eval(a, b, c - h, d, u)) / (2.0 * h),
                (g_eval(a, b, c, d + h, u) - g_eval(a, b, c, d - h, u)) / (2.0 * h),
            ];
            for x in 0..4 {
                let scale = an[x].abs().max(1e-12);
                if an[x].abs() > 1e-9 {
                    assert!((an[x] - fd[x]).abs() / scale < 1e-6, "x={x} u={u}");
                } else {
                    assert!(fd[x].abs() < 1e-8);
                }
            }
            assert_eq!(an[3], 1.0);
        }
    }

    #[test]
    fn zero_correlation_gives_unit_drift() {
        let (ctx, geom) = fixture_geom(5, 15);
        let theta = ModelParams {
            rho: 0.0,
            ..fixture_theta()
        };
        let coeffs = build_coeffs(&theta, &ctx, &geom).unwrap();
        assert_eq!(coeffs.segments.len(), 5);
        for s in &coeffs.segments {
            assert_eq!(s.rho_tilde(), 0.0);
            assert_eq!(s.xi, 1.0);
            assert_eq!(s.kappa_xi, theta.kappa);
        }
    }

    #[test]
    fn single_forward_with_unit_beta() {
        let (_, geom) = fixture_geom(3, 4);
        let betas = BetaMatrix::new(vec![vec![1.0, 0.0]; 8], 2).unwrap();
        let ctx = ModelContext::with_betas(betas);
        let theta = fixture_theta();
        let coeffs = build_coeffs(&theta, &ctx, &geom).unwrap();
        assert_relative_eq!(geom.omegas[0], 1.0, max_relative = 1e-14);
        for s in &coeffs.segments {
            let l = s.calendar_index;
            let g = g_eval(theta.a, theta.b, theta.c, theta.d, 3.0 - l as f64);
            assert_relative_eq!(s.lambda(), g * geom.omegas[0], max_relative = 1e-14);
            assert_relative_eq!(
                s.rho_tilde(),
                theta.rho / 2f64.sqrt(),
                max_relative = 1e-14
            );
        }
        let taus = coeffs.taus();
        assert_eq!(taus, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(coeffs.segments[0].calendar_index, 2);
    }

    #[test]
    fn xi_partials_follow_closed_forms() {
        let (ctx, geom) = fixture_geom(4, 9);
        let theta = fixture_theta();
        let (coeffs, partials) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        for (s, p) in coeffs.segments.iter().zip(&partials.segments) {
            assert_relative_eq!(
                p.d_xi_d_epsilon,
                (s.xi - 1.0) / theta.epsilon,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                p.d_xi_d_rho,
                (s.xi - 1.0) / theta.rho,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                p.d_xi_d_kappa,
                -(s.xi - 1.0) / theta.kappa,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn drift_tends_to_one_as_vol_of_vol_vanishes() {
        let (ctx, geom) = fixture_geom(6, 16);
        let theta = ModelParams {
            epsilon: 1e-8,
            ..fixture_theta()
        };
        let coeffs = build_coeffs(&theta, &ctx, &geom).unwrap();
        for s in &coeffs.segments {
            assert!((s.xi - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_omegas_zero_partials() {
        let (ctx, mut geom) = fixture_geom(4, 8);
        geom.omegas.iter_mut().for_each(|w| *w = 0.0);
        let (coeffs, partials) =
            build_coeffs_with_partials(&fixture_theta(), &ctx, &geom).unwrap();
        for (s, p) in coeffs.segments.iter().zip(&partials.segments) {
            assert_eq!(s.lambda2, 0.0);
            assert_eq!(p.d_lambda2, [0.0; 4]);
            assert_eq!(p.d_rho_lambda, [0.0; 4]);
        }
    }

    #[test]
    fn parameter_domain_checks() {
        let t = fixture_theta();
        assert!(t.in_domain());
        assert!(t.feller_satisfied());
        assert!(!t.with(Param::Rho, 1.0).in_domain());
        assert!(!t.with(Param::Kappa, 0.0).in_domain());
        assert!(!t.with(Param::Epsilon, 3.0).feller_satisfied());
        assert_eq!(ModelParams::from_array(t.to_array()), t);
        assert!(ModelParams::from_slice(&[1.0; 7]).is_err());
    }
}
