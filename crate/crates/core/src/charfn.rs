//! Moment generating function `ψ(z) = E[exp(z X(T_m))]` of the log shifted
//! swap rate under the frozen dynamics, `ψ(z) = exp(A(T_m, z) + B(T_m, z) V_0)`.
//!
//! `A` and `B` solve a Riccati system with piecewise-constant coefficients and
//! are accumulated segment by segment in τ. Two closed forms of the segment
//! solution are provided:
//!
//! * [`Representation::Albrecher`]: the decaying-exponential form with ratio
//!   `g_j = (q - ν)/(q + ν)`, `q = μ - ε² B(τ_j)`,
//! * [`Representation::Cui`]: the `tanh` form with `E_j`, `D_j` and `A_j`.
//!
//! Both only ever evaluate `e^{-ν Δτ}` with `Re ν ≥ 0`. The difference
//! `μ - ν` is evaluated as `λ² ε² (z² - z)/(μ + ν)` whenever that is the
//! better-conditioned expression, so neither form loses accuracy when `ε` is
//! small.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, PiecewiseCoeffs, Segment};
use crate::{Error, Result};

/// Closed form used for the per-segment Riccati solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Albrecher,
    Cui,
}

/// `A(τ, z)` and `B(τ, z)` accumulated up to the current segment boundary.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RiccatiState {
    pub a: C64,
    pub b: C64,
}

impl RiccatiState {
    /// `ln ψ = A + B V_0`.
    pub fn log_psi(&self, v0: f64) -> C64 {
        self.a + self.b * v0
    }
}

/// Constants of one segment at a given `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConstants {
    pub mu: C64,
    pub nu: C64,
    /// Albrecher ratio `g_j`; `None` at its pole `q + ν = 0`.
    pub g: Option<C64>,
    /// Cui `E_j(τ_{j+1})`.
    pub e: Option<C64>,
    /// Cui `D_j(τ_{j+1})`.
    pub d: Option<C64>,
    /// Cui `A_j(τ_{j+1})`.
    pub a_j: Option<C64>,
}

impl SegmentConstants {
    /// `μ = κξ - ρ̃ λ ε z` and the principal root `ν = √(μ² - λ² ε² (z² - z))`.
    pub fn new(theta: &ModelParams, seg: &Segment, z: C64) -> Self {
        let (mu, nu) = mu_nu(theta, seg, z);
        Self {
            mu,
            nu,
            g: None,
            e: None,
            d: None,
            a_j: None,
        }
    }
}

pub(crate) fn mu_nu(theta: &ModelParams, seg: &Segment, z: C64) -> (C64, C64) {
    let eps = theta.epsilon;
    let mu = seg.kappa_xi - z * (eps * seg.rho_lambda);
    let nu = (mu * mu - (z * z - z) * (seg.lambda2 * eps * eps)).sqrt();
    (mu, nu)
}

/// `(μ - ν)/ε²`, choosing whichever of the two algebraically equal forms
/// avoids cancellation.
pub(crate) fn gap_over_eps2(mu: C64, nu: C64, lambda2: f64, eps2: f64, zz: C64) -> C64 {
    let s = mu + nu;
    let d = mu - nu;
    if s == C64::new(0.0, 0.0) && d == C64::new(0.0, 0.0) {
        return C64::new(0.0, 0.0);
    }
    if s.norm_sqr() >= d.norm_sqr() {
        zz * lambda2 / s
    } else {
        d / eps2
    }
}

/// `ln(1 + x)` accurate for small `|x|`.
pub(crate) fn ln_1p(x: C64) -> C64 {
    let re = 0.5 * (x.re * (2.0 + x.re) + x.im * x.im).ln_1p();
    let im = x.im.atan2(1.0 + x.re);
    C64::new(re, im)
}

/// `tanh(s)` for `s = ν Δτ / 2`, written with the decayed exponential.
pub(crate) fn tanh_decayed(decay: C64) -> C64 {
    (1.0 - decay) / (1.0 + decay)
}

fn check(value: C64, segment: usize) -> Result<C64> {
    if value.re.is_finite() && value.im.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericalOverflow { segment })
    }
}

/// Advances `(A, B)` across one segment with the Albrecher form.
pub fn albrecher_step(
    theta: &ModelParams,
    seg: &Segment,
    segment: usize,
    z: C64,
    state: RiccatiState,
) -> Result<(RiccatiState, SegmentConstants)> {
    let eps2 = theta.epsilon * theta.epsilon;
    let kt = theta.kappa * theta.theta;
    let h = seg.dtau;
    let mut sc = SegmentConstants::new(theta, seg, z);
    let (mu, nu) = (sc.mu, sc.nu);
    let zz = z * z - z;
    let r = gap_over_eps2(mu, nu, seg.lambda2, eps2, zz);
    let b0 = state.b;
    let w = r - b0;
    let q = mu - b0 * eps2;
    let decay = (-nu * h).exp();
    let qpn = q + nu;
    let g = w * eps2 / qpn;

    let (da, db) = if qpn == C64::new(0.0, 0.0) || !g.re.is_finite() || !g.im.is_finite() {
        // Pole of g: the log term tends to -ν Δτ and the B increment to 0.
        (kt * (mu + nu) * h / eps2, C64::new(0.0, 0.0))
    } else {
        sc.g = Some(g);
        let one_minus_g = 1.0 - g;
        if one_minus_g == C64::new(0.0, 0.0) {
            return Err(Error::SingularSegment { segment });
        }
        let den = 1.0 - g * decay;
        if den == C64::new(0.0, 0.0) {
            return Err(Error::SingularSegment { segment });
        }
        let log_ratio = ln_1p(g * (1.0 - decay) / one_minus_g);
        (
            kt * (r * h - 2.0 * log_ratio / eps2),
            w * (1.0 - decay) / den,
        )
    };
    let next = RiccatiState {
        a: check(state.a + da, segment)?,
        b: check(state.b + db, segment)?,
    };
    Ok((next, sc))
}

/// Advances `(A, B)` across one segment with the Cui form.
///
/// `B(τ) = B(τ_j) - A_j(τ)/V_0` with
/// `A_j = V_0 N tanh(s)/(ν + q tanh(s))`, `N = B_j(2μ - ε² B_j) + λ²(z - z²)`,
/// and the `A` update through `D_j = ln(2ν/E_j) + (κξ - ν)Δτ/2`. The linear
/// term of `D_j` cancels the `-κθ ρ̃ λ z Δτ/ε` drift term analytically, which
/// leaves `κθ[(μ - ν)Δτ + 2 ln(2ν/E_j)]/ε²`.
pub fn cui_step(
    theta: &ModelParams,
    seg: &Segment,
    segment: usize,
    z: C64,
    v0: f64,
    state: RiccatiState,
) -> Result<(RiccatiState, SegmentConstants)> {
    let eps = theta.epsilon;
    let eps2 = eps * eps;
    let kt = theta.kappa * theta.theta;
    let h = seg.dtau;
    let mut sc = SegmentConstants::new(theta, seg, z);
    let (mu, nu) = (sc.mu, sc.nu);
    let zz = z * z - z;
    let r = gap_over_eps2(mu, nu, seg.lambda2, eps2, zz);
    let b0 = state.b;
    let q = mu - b0 * eps2;
    let decay = (-nu * h).exp();
    let t = tanh_decayed(decay);

    let n1 = b0 * (2.0 * mu - b0 * eps2) - zz * seg.lambda2;
    let den = nu + q * t;
    if den == C64::new(0.0, 0.0) {
        return Err(Error::SingularSegment { segment });
    }
    let a_j = n1 * t / den * v0;

    let e = (nu + q) + (nu - q) * decay;
    if e == C64::new(0.0, 0.0) || nu == C64::new(0.0, 0.0) {
        return Err(Error::SingularSegment { segment });
    }
    // E_j/(2ν) = 1 + (q - ν)(1 - e^{-νΔτ})/(2ν) with q - ν = ε²((μ-ν)/ε² - B_j).
    let x = (r - b0) * eps2 * (1.0 - decay) / (2.0 * nu);
    let ln_2nu_over_e = -ln_1p(x);
    let kxi_minus_nu = z * (eps * seg.rho_lambda) + r * eps2;
    sc.e = Some(e);
    sc.d = Some(ln_2nu_over_e + kxi_minus_nu * (h / 2.0));
    sc.a_j = Some(a_j);

    let da = kt * (r * h + 2.0 * ln_2nu_over_e / eps2);
    let next = RiccatiState {
        a: check(state.a + da, segment)?,
        b: check(state.b - a_j / v0, segment)?,
    };
    Ok((next, sc))
}

/// Runs the recursion over all segments and returns `(A(T_m), B(T_m))`.
pub fn riccati(
    theta: &ModelParams,
    coeffs: &PiecewiseCoeffs,
    v0: f64,
    z: C64,
    repr: Representation,
) -> Result<RiccatiState> {
    let mut state = RiccatiState::default();
    for (j, seg) in coeffs.segments.iter().enumerate() {
        state = match repr {
            Representation::Albrecher => albrecher_step(theta, seg, j, z, state)?.0,
            Representation::Cui => cui_step(theta, seg, j, z, v0, state)?.0,
        };
    }
    Ok(state)
}

/// `ln ψ(z) = A + B V_0`.
pub fn log_psi(
    theta: &ModelParams,
    coeffs: &PiecewiseCoeffs,
    v0: f64,
    z: C64,
    repr: Representation,
) -> Result<C64> {
    Ok(riccati(theta, coeffs, v0, z, repr)?.log_psi(v0))
}

pub fn psi(
    theta: &ModelParams,
    coeffs: &PiecewiseCoeffs,
    v0: f64,
    z: C64,
    repr: Representation,
) -> Result<C64> {
    Ok(log_psi(theta, coeffs, v0, z, repr)?.exp())
}

pub fn psi_albrecher(theta: &ModelParams, coeffs: &PiecewiseCoeffs, v0: f64, z: C64) -> Result<C64> {
    psi(theta, coeffs, v0, z, Representation::Albrecher)
}

pub fn psi_cui(theta: &ModelParams, coeffs: &PiecewiseCoeffs, v0: f64, z: C64) -> Result<C64> {
    psi(theta, coeffs, v0, z, Representation::Cui)
}

/// Characteristic function `φ(u) = ψ(iu)`.
pub fn phi(
    theta: &ModelParams,
    coeffs: &PiecewiseCoeffs,
    v0: f64,
    u: C64,
    repr: Representation,
) -> Result<C64> {
    psi(theta, coeffs, v0, u * C64::i(), repr)
}
