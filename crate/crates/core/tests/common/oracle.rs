//! Reference computations written directly from the model dynamics, sharing
//! no code with the library beyond the discount curve.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use svlmm::market::ZeroCurve;
use svlmm::model::ModelParams;

pub const SHIFT: f64 = 0.1;
pub const V0: f64 = 1.0;

/// Two-factor loading `(cos φ_k, sin φ_k)`, `φ_k = 0.9 (1 - e^{-0.1 (k - 1)})`.
pub fn beta(k: usize) -> [f64; 2] {
    let phi = 0.9 * (1.0 - (-0.1 * (k as f64 - 1.0)).exp());
    [phi.cos(), phi.sin()]
}

pub fn g(t: &ModelParams, u: f64) -> f64 {
    (t.a + t.b * u) * (-t.c * u).exp() + t.d
}

/// Swap data on the annual grid `T_j = j`.
pub struct Swap {
    pub m: usize,
    pub n: usize,
    pub r0: f64,
    pub annuity: f64,
    pub forwards: Vec<f64>,
    pub alphas: Vec<f64>,
    pub omegas: Vec<f64>,
}

pub fn swap(curve: &ZeroCurve, m: usize, n: usize) -> Swap {
    let p: Vec<f64> = (0..=n).map(|j| curve.discount(j as f64).unwrap()).collect();
    let forwards: Vec<f64> = (0..n).map(|j| p[j] / p[j + 1] - 1.0).collect();
    let annuity: f64 = (m..n).map(|j| p[j + 1]).sum();
    let r0 = (p[m] - p[n]) / annuity;
    let alphas: Vec<f64> = (m..n).map(|j| p[j + 1] / annuity).collect();
    let omegas = (m..n)
        .map(|j| {
            let tail: f64 = (m..j).map(|k| alphas[k - m] * (forwards[k] - r0)).sum();
            let dr = alphas[j - m] + tail / (1.0 + forwards[j]);
            dr * (forwards[j] + SHIFT) / (r0 + SHIFT)
        })
        .collect();
    Swap {
        m,
        n,
        r0,
        annuity,
        forwards,
        alphas,
        omegas,
    }
}

/// Constant coefficients of the log shifted swap rate on `[T_l, T_{l+1})`.
#[derive(Debug, Clone, Copy)]
pub struct Period {
    pub lambda2: f64,
    pub rho_lambda: f64,
    pub kappa_xi: f64,
}

/// Periods `l = 0..m` in calendar order.
pub fn periods(t: &ModelParams, s: &Swap) -> Vec<Period> {
    let nf_sqrt = 2f64.sqrt();
    (0..s.m)
        .map(|l| {
            let mut vec = [0.0; 2];
            let mut cov = 0.0;
            for j in s.m..s.n {
                let gj = g(t, (j - l) as f64);
                let b = beta(j - l + 1);
                let w = s.omegas[j - s.m];
                vec[0] += w * gj * b[0];
                vec[1] += w * gj * b[1];
                cov += w * gj * (b[0] + b[1]);
            }
            let mut drift = 0.0;
            for j in s.m..s.n {
                let mut inner = 0.0;
                for k in (l + 1)..=j {
                    let f = s.forwards[k];
                    let b = beta(k - l + 1);
                    let rho_gamma = t.rho / nf_sqrt * g(t, (k - l) as f64) * (b[0] + b[1]);
                    inner += (f + SHIFT) / (1.0 + f) * rho_gamma;
                }
                drift += s.alphas[j - s.m] * inner;
            }
            Period {
                lambda2: vec[0] * vec[0] + vec[1] * vec[1],
                rho_lambda: t.rho / nf_sqrt * cov,
                kappa_xi: t.kappa + t.epsilon * drift,
            }
        })
        .collect()
}

/// `ψ(z) = E[exp(z ln((R(T_m)+δ)/(R(0)+δ)))]` by RK4 on the Riccati system
/// `B' = ½ε²B² - (κξ - ερλ z) B + ½λ²(z² - z)`, `A' = κθ B`, integrated
/// backward from expiry with `steps` steps per period.
pub fn psi_ode(t: &ModelParams, periods: &[Period], z: C64, steps: usize) -> C64 {
    let mut a = C64::new(0.0, 0.0);
    let mut b = C64::new(0.0, 0.0);
    let h = 1.0 / steps as f64;
    for p in periods.iter().rev() {
        let rhs = |b: C64| {
            0.5 * t.epsilon * t.epsilon * b * b - (p.kappa_xi - t.epsilon * p.rho_lambda * z) * b
                + 0.5 * p.lambda2 * (z * z - z)
        };
        for _ in 0..steps {
            let k1 = rhs(b);
            let k2 = rhs(b + 0.5 * h * k1);
            let k3 = rhs(b + 0.5 * h * k2);
            let k4 = rhs(b + h * k3);
            let kt = t.kappa * t.theta;
            a += kt * h / 6.0 * (b + 2.0 * (b + 0.5 * h * k1) + 2.0 * (b + 0.5 * h * k2) + (b + h * k3));
            b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    (a + b * V0).exp()
}

/// Monte Carlo payer prices with standard errors.
pub struct McResult {
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Sample mean of `(R(T_m)+δ)/(R(0)+δ)`, a martingale check.
    pub mean_ratio: f64,
    pub ratio_std_error: f64,
}

/// Full-truncation Euler scheme for `(ln(R+δ), V)` under the swap measure.
pub fn monte_carlo(
    t: &ModelParams,
    s: &Swap,
    strikes: &[f64],
    paths: usize,
    steps_per_year: usize,
    seed: u64,
) -> McResult {
    let per = periods(t, s);
    let dt = 1.0 / steps_per_year as f64;
    let sq = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; strikes.len()];
    let mut sum2 = vec![0.0; strikes.len()];
    let (mut rs, mut rs2) = (0.0, 0.0);
    for _ in 0..paths {
        let mut x = 0.0;
        let mut v = V0;
        for p in &per {
            let lam = p.lambda2.sqrt();
            let rho = if lam > 0.0 { p.rho_lambda / lam } else { 0.0 };
            let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
            for _ in 0..steps_per_year {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let vp = v.max(0.0);
                let sv = vp.sqrt();
                let zx = rho * z1 + rho_c * z2;
                x += -0.5 * vp * p.lambda2 * dt + sv * lam * sq * zx;
                v += (t.kappa * t.theta - p.kappa_xi * vp) * dt + t.epsilon * sv * sq * z1;
            }
        }
        let ratio = x.exp();
        rs += ratio;
        rs2 += ratio * ratio;
        let r = (s.r0 + SHIFT) * ratio - SHIFT;
        for (i, k) in strikes.iter().enumerate() {
            let pay = s.annuity * (r - k).max(0.0);
            sum[i] += pay;
            sum2[i] += pay * pay;
        }
    }
    let n = paths as f64;
    let se = |s1: f64, s2: f64| ((s2 / n - (s1 / n).powi(2)).max(0.0) / (n - 1.0)).sqrt();
    McResult {
        prices: sum.iter().map(|s| s / n).collect(),
        std_errors: sum.iter().zip(&sum2).map(|(a, b)| se(*a, *b)).collect(),
        mean_ratio: rs / n,
        ratio_std_error: se(rs, rs2),
    }
}
