//! Parameter gradient of the log MGF, `χ_x = ∂ ln ψ/∂x = ∂A/∂x + V_0 ∂B/∂x`.
//!
//! The derivatives are propagated in the same forward sweep over τ-segments
//! as the `tanh`-form recursion for `A` and `B`, so every segment sees the
//! already accumulated `B(τ_j)` and `∂B(τ_j)/∂x`. Each parameter enters a
//! segment only through a handful of seeds (`∂(κξ)`, `∂(ρ̃λ)`, `∂λ²`, `∂ε`,
//! `∂(κθ)`); one generic derivative of the segment solution serves all eight.
//!
//! For `B` the derivative of `A_j = V_0 N tanh(s)/(ν + q tanh(s))` is taken in
//! the `sinh`/`cosh` scaled form
//! `∂A_j = V_0 (N' T + N s')/(ν + q T) - A_j (ν' + ν T s' + q' T + q s')/(ν + q T)`
//! with `T = tanh(s)`, `s = ν Δτ/2`, which never evaluates `cosh` itself.

use num_complex::Complex64 as C64;

use crate::charfn::{ln_1p, mu_nu, tanh_decayed};
use crate::model::{CoeffPartials, ModelParams, Param, PiecewiseCoeffs, N_PARAMS};
use crate::{Error, Result};

/// `ln ψ(z)` and its parameter gradient `χ`, ordered `(a, b, c, d, κ, θ, ε, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharGrad {
    pub log_psi: C64,
    pub chi: [C64; N_PARAMS],
}

impl CharGrad {
    pub fn psi(&self) -> C64 {
        self.log_psi.exp()
    }
}

/// Accumulated `∂A/∂x` and `∂B/∂x` for every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentGradState {
    pub a: C64,
    pub b: C64,
    pub da: [C64; N_PARAMS],
    pub db: [C64; N_PARAMS],
}

impl Default for SegmentGradState {
    fn default() -> Self {
        let zero = C64::new(0.0, 0.0);
        Self {
            a: zero,
            b: zero,
            da: [zero; N_PARAMS],
            db: [zero; N_PARAMS],
        }
    }
}

/// How one parameter moves the constants of a segment.
#[derive(Debug, Clone, Copy, Default)]
struct Seed {
    kappa_xi: f64,
    rho_lambda: f64,
    lambda2: f64,
    epsilon: f64,
    kappa_theta: f64,
}

/// `1/(1+x) - ln(1+x)/x`.
fn log_gap(x: C64) -> C64 {
    if x.norm() < 1e-3 {
        // Σ_k (-x)^k k/(k+1)
        let mut term = C64::new(1.0, 0.0);
        let mut acc = C64::new(0.0, 0.0);
        for k in 1..=7 {
            term *= -x;
            acc += term * (k as f64 / (k as f64 + 1.0));
        }
        acc
    } else {
        1.0 / (1.0 + x) - ln_1p(x) / x
    }
}

fn finite(v: C64) -> bool {
    v.re.is_finite() && v.im.is_finite()
}

/// Forward sweep returning `ln ψ(z)` and `χ(z)`.
pub fn chi(
    theta: &ModelParams,
    coeffs: &PiecewiseCoeffs,
    partials: &CoeffPartials,
    v0: f64,
    z: C64,
) -> Result<CharGrad> {
    if partials.segments.len() != coeffs.segments.len() {
        return Err(Error::Validation(
            "coefficient partials do not match the coefficient grid".into(),
        ));
    }
    let eps = theta.epsilon;
    let eps2 = eps * eps;
    let kt = theta.kappa * theta.theta;
    let zz = z * z - z;
    let mut st = SegmentGradState::default();

    for (j, (seg, sp)) in coeffs.segments.iter().zip(&partials.segments).enumerate() {
        let h = seg.dtau;
        let (mu, nu) = mu_nu(theta, seg, z);
        if nu == C64::new(0.0, 0.0) {
            return Err(Error::SingularSegment { segment: j });
        }
        let b0 = st.b;
        let q = mu - b0 * eps2;
        let decay = (-nu * h).exp();
        let t = tanh_decayed(decay);
        let n1 = b0 * (2.0 * mu - b0 * eps2) - zz * seg.lambda2;
        let den = nu + q * t;
        if den == C64::new(0.0, 0.0) {
            return Err(Error::SingularSegment { segment: j });
        }
        let aj = n1 * t / den;

        let s = mu + nu;
        let use_sum = s.norm_sqr() >= (mu - nu).norm_sqr() && s != C64::new(0.0, 0.0);
        let r = if use_sum {
            zz * seg.lambda2 / s
        } else if mu == nu {
            C64::new(0.0, 0.0)
        } else {
            (mu - nu) / eps2
        };
        let w = r - b0;
        let y = w * (1.0 - decay) / (2.0 * nu);
        let x = y * eps2;
        let onepx = 1.0 + x;
        if onepx == C64::new(0.0, 0.0) {
            return Err(Error::SingularSegment { segment: j });
        }
        let phi = r * h - 2.0 * ln_1p(x) / eps2;
        let gap = log_gap(x);

        let seeds = |p: Param| -> Seed {
            match p {
                Param::A | Param::B | Param::C | Param::D => {
                    let i = p.index();
                    Seed {
                        kappa_xi: theta.kappa * sp.d_xi[i],
                        rho_lambda: sp.d_rho_lambda[i],
                        lambda2: sp.d_lambda2[i],
                        ..Seed::default()
                    }
                }
                Param::Kappa => Seed {
                    kappa_xi: seg.xi + theta.kappa * sp.d_xi_d_kappa,
                    kappa_theta: theta.theta,
                    ..Seed::default()
                },
                Param::Theta => Seed {
                    kappa_theta: theta.kappa,
                    ..Seed::default()
                },
                Param::Epsilon => Seed {
                    kappa_xi: theta.kappa * sp.d_xi_d_epsilon,
                    epsilon: 1.0,
                    ..Seed::default()
                },
                Param::Rho => Seed {
                    kappa_xi: theta.kappa * sp.d_xi_d_rho,
                    rho_lambda: sp.d_rho_lambda_d_rho,
                    ..Seed::default()
                },
            }
        };

        for p in Param::ALL {
            let i = p.index();
            let sd = seeds(p);
            let db0 = st.db[i];
            let dmu = sd.kappa_xi - z * (sd.epsilon * seg.rho_lambda + eps * sd.rho_lambda);
            let dnu = (mu * dmu
                - zz * (0.5 * (sd.lambda2 * eps2 + 2.0 * seg.lambda2 * eps * sd.epsilon)))
                / nu;
            let dq = dmu - b0 * (2.0 * eps * sd.epsilon) - db0 * eps2;
            let dn1 = 2.0 * (dmu * b0 + mu * db0)
                - b0 * b0 * (2.0 * eps * sd.epsilon)
                - 2.0 * eps2 * b0 * db0
                - zz * sd.lambda2;
            let ds = dnu * (h / 2.0);
            let daj = (dn1 * t + n1 * ds) / den
                - aj * (dnu + nu * t * ds + dq * t + q * ds) / den;
            st.db[i] = db0 - daj;

            let dr = if use_sum {
                (zz * sd.lambda2 - r * (dmu + dnu)) / s
            } else if mu == nu {
                C64::new(0.0, 0.0)
            } else {
                (dmu - dnu) / eps2 - r * (2.0 * sd.epsilon / eps)
            };
            let dw = dr - db0;
            let dy = (dw * (1.0 - decay) + w * (h * decay) * dnu) / (2.0 * nu) - y * dnu / nu;
            let dl = 2.0 * dy / onepx + y * gap * (4.0 * sd.epsilon / eps);
            let dphi = dr * h - dl;
            st.da[i] += phi * sd.kappa_theta + dphi * kt;
        }
        st.a += phi * kt;
        st.b = b0 - aj;
        if !finite(st.a) || !finite(st.b) || !st.da.iter().chain(&st.db).all(|v| finite(*v)) {
            return Err(Error::NumericalOverflow { segment: j });
        }
    }

    let mut out = [C64::new(0.0, 0.0); N_PARAMS];
    for i in 0..N_PARAMS {
        out[i] = st.da[i] + st.db[i] * v0;
    }
    Ok(CharGrad {
        log_psi: st.log_psi(v0),
        chi: out,
    })
}

impl SegmentGradState {
    fn log_psi(&self, v0: f64) -> C64 {
        self.a + self.b * v0
    }
}

/// Chain rule to `(ln κ, ln θ, ln ε)`.
pub fn chi_log_vol(g: &CharGrad, theta: &ModelParams) -> CharGrad {
    let mut out = *g;
    out.chi[Param::Kappa.index()] *= theta.kappa;
    out.chi[Param::Theta.index()] *= theta.theta;
    out.chi[Param::Epsilon.index()] *= theta.epsilon;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::{log_psi, Representation};
    use crate::market::{swap_geometry, BetaMatrix, TenorGrid, ZeroCurve};
    use crate::model::{build_coeffs, build_coeffs_with_partials, ModelContext};

    fn setup() -> (ModelParams, ModelContext, crate::market::SwapGeometry) {
        let grid = TenorGrid::regular(1.0, 30).unwrap();
        let pillars: Vec<f64> = (1..=30).map(|t| t as f64).collect();
        let curve = ZeroCurve::flat(0.02, &pillars).unwrap();
        let geom = swap_geometry(&curve, &grid, 5, 15, 0.1).unwrap();
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

    fn fd_log_psi(
        theta: &ModelParams,
        ctx: &ModelContext,
        geom: &crate::market::SwapGeometry,
        p: Param,
        z: C64,
    ) -> C64 {
        let x = theta.get(p);
        let h = 1e-5 * x.abs().max(1.0);
        let eval = |v: f64| {
            let t = theta.with(p, v);
            let c = build_coeffs(&t, ctx, geom).unwrap();
            log_psi(&t, &c, ctx.v0, z, Representation::Cui).unwrap()
        };
        (eval(x + h) - eval(x - h)) / (2.0 * h)
    }

    #[test]
    fn zero_argument_gives_zero_gradient() {
        let (theta, ctx, geom) = setup();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let g = chi(&theta, &c, &p, ctx.v0, C64::new(0.0, 0.0)).unwrap();
        assert!(g.log_psi.norm() < 1e-15);
        for v in g.chi {
            assert!(v.norm() < 1e-14, "{v}");
        }
    }

    #[test]
    fn value_matches_charfn() {
        let (theta, ctx, geom) = setup();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        for z in [C64::new(0.0, 3.0), C64::new(1.0, 17.0)] {
            let g = chi(&theta, &c, &p, ctx.v0, z).unwrap();
            let l = log_psi(&theta, &c, ctx.v0, z, Representation::Cui).unwrap();
            assert!((g.log_psi - l).norm() < 1e-13 * l.norm().max(1.0));
        }
    }

    #[test]
    fn matches_finite_differences() {
        let (theta, ctx, geom) = setup();
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        for z in [C64::new(0.0, 1.5), C64::new(1.0, 6.0), C64::new(0.5, 2.0)] {
            let g = chi(&theta, &c, &p, ctx.v0, z).unwrap();
            for param in Param::ALL {
                let fd = fd_log_psi(&theta, &ctx, &geom, param, z);
                let an = g.chi[param.index()];
                let err = (an - fd).norm() / an.norm().max(fd.norm()).max(1e-8);
                assert!(err < 1e-6, "{} at {z}: {an} vs {fd}", param.name());
            }
        }
    }

    #[test]
    fn zero_correlation_is_regular() {
        let (theta, ctx, geom) = setup();
        let theta = theta.with(Param::Rho, 0.0);
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let z = C64::new(1.0, 4.0);
        let g = chi(&theta, &c, &p, ctx.v0, z).unwrap();
        let fd = fd_log_psi(&theta, &ctx, &geom, Param::Rho, z);
        let an = g.chi[Param::Rho.index()];
        assert!((an - fd).norm() < 1e-6 * an.norm().max(1e-8));
    }

    #[test]
    fn log_vol_chain_rule() {
        let (theta, ctx, geom) = setup();
        let theta = theta.with(Param::Kappa, 2.0);
        let (c, p) = build_coeffs_with_partials(&theta, &ctx, &geom).unwrap();
        let g = chi(&theta, &c, &p, ctx.v0, C64::new(0.0, 2.0)).unwrap();
        let t = chi_log_vol(&g, &theta);
        assert_eq!(t.chi[4], g.chi[4] * 2.0);
        assert_eq!(t.chi[5], g.chi[5] * theta.theta);
        assert_eq!(t.chi[6], g.chi[6] * theta.epsilon);
        assert_eq!(t.chi[0], g.chi[0]);
    }
}
