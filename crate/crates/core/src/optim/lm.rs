//! Levenberg-Marquardt, plain and projected onto a convex feasible set.
//!
//! Every iteration evaluates the Jacobian once at the current point and then
//! solves `(A + μI) d = -g`, `A = JᵀJ`, `g = Jᵀf`, until a step is accepted
//! or a stopping rule fires. Rejected trial steps only raise `μ` and do not
//! count as iterations, so an iteration cap of `k` means exactly `k` Jacobian
//! evaluations unless the run stops earlier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LeastSquares, OptResult, Projection, Termination};
use crate::{Error, Result};

/// What happens to `μ` after the line-search or projected-gradient fallback
/// of the projected variant accepted a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackDamping {
    Keep,
    Increase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iter: usize,
    /// `μ_0 = τ max_i A_ii`.
    pub tau: f64,
    /// Stop when `F ≤ ε1`.
    pub eps1: f64,
    /// Stop when `‖g‖_∞ ≤ ε2`.
    pub eps2: f64,
    /// Stop when `‖d‖ ≤ ε3 ‖x‖`.
    pub eps3: f64,
    /// Projected step accepted when `F(P(x + d)) ≤ γ F(x)`.
    pub gamma: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Armijo constant.
    pub sigma: f64,
    /// Maximum trial points per line search or projected-gradient search.
    pub max_backtracks: usize,
    pub fallback_damping: FallbackDamping,
    /// In the projected variant, solve the damped system only for components
    /// that are not held on a bound by the gradient.
    pub freeze_binding: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tau: 1e-3,
            eps1: 1e-10,
            eps2: 1e-10,
            eps3: 1e-10,
            gamma: 0.9999,
            beta: 0.5,
            sigma: 1e-4,
            max_backtracks: 40,
            fallback_damping: FallbackDamping::Increase,
            freeze_binding: true,
        }
    }
}

impl LmConfig {
    pub fn with_max_iter(max_iter: usize) -> Self {
        Self {
            max_iter,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.tau > 0.0 && self.eps1 > 0.0 && self.eps2 > 0.0 && self.eps3 > 0.0) {
            return Err(Error::Validation("LM tolerances and τ must be positive".into()));
        }
        if !(unit(self.gamma) && unit(self.beta) && unit(self.sigma)) {
            return Err(Error::Validation("γ, β and σ must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

struct Counter<'a, P: LeastSquares + ?Sized> {
    problem: &'a P,
    obj: usize,
    grad: usize,
}

impl<P: LeastSquares + ?Sized> Counter<'_, P> {
    /// `(f, F)`, or `None` when the residuals fail or are not finite.
    fn eval(&mut self, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        self.obj += 1;
        let f = self.problem.residuals(x).ok()?;
        let big_f = 0.5 * f.norm_squared();
        big_f.is_finite().then_some((f, big_f))
    }

    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.grad += 1;
        let j = self.problem.jacobian(x).ok()?;
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

fn solve_damped(a: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += mu;
    }
    let d = m.cholesky()?.solve(&(-g));
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// `L(0) - L(d) = -gᵀd - ½ dᵀAd`.
fn predicted_gain(a: &DMatrix<f64>, g: &DVector<f64>, d: &DVector<f64>) -> f64 {
    -g.dot(d) - 0.5 * d.dot(&(a * d))
}

fn nielsen(mu: f64, eta: f64) -> f64 {
    mu * (1.0 / 3.0f64).max(1.0 - (2.0 * eta - 1.0).powi(3))
}

/// Classic Levenberg-Marquardt with Nielsen's damping update.
pub fn lm<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    config: &LmConfig,
) -> Result<OptResult> {
    driver(problem, x0, None, config)
}

/// Levenberg-Marquardt with every trial point projected onto a feasible set.
///
/// A projected step `d = P(x + d_LM) - x` is taken when it reduces `F` by the
/// factor `γ`. Otherwise, if `d` is a descent direction for the current
/// gradient, an Armijo backtracking search along `d` is tried, and as a last
/// resort a projected gradient step `P(x - t g)` with `t = β^l`.
pub fn lm_bc<P: LeastSquares + ?Sized, S: Projection>(
    problem: &P,
    x0: &DVector<f64>,
    set: &S,
    config: &LmConfig,
) -> Result<OptResult> {
    driver(problem, x0, Some(set as &dyn Projection), config)
}

fn driver<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    set: Option<&dyn Projection>,
    cfg: &LmConfig,
) -> Result<OptResult> {
    cfg.validate()?;
    let mut c = Counter {
        problem,
        obj: 0,
        grad: 0,
    };
    let mut x = match set {
        Some(s) => s.project(x0),
        None => x0.clone(),
    };
    let (mut f, mut big_f) = c
        .eval(&x)
        .ok_or_else(|| Error::Optimizer("objective is not finite at the starting point".into()))?;
    let mut history = vec![big_f];
    let mut mu: f64 = -1.0;
    let mut nu: f64 = 2.0;
    let mut iterations = 0;

    let termination = 'outer: loop {
        if big_f <= cfg.eps1 {
            break Termination::FSmall;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;
        let Some(j) = c.jacobian(&x) else {
            break Termination::Numeric;
        };
        let g = j.transpose() * &f;
        let mut a = j.transpose() * &j;
        // Damped system restricted to components not held on a bound.
        let mut g_free = g.clone();
        if let (Some(set), true) = (set, cfg.freeze_binding) {
            for (i, fixed) in set.binding(&x, &g).into_iter().enumerate() {
                if fixed {
                    a.row_mut(i).fill(0.0);
                    a.column_mut(i).fill(0.0);
                    a[(i, i)] = 1.0;
                    g_free[i] = 0.0;
                }
            }
        }
        if g_free.amax() <= cfg.eps2 {
            break Termination::GradientSmall;
        }
        if mu < 0.0 {
            let max_diag = a.diagonal().amax();
            mu = cfg.tau * if max_diag > 0.0 { max_diag } else { 1.0 };
        }

        loop {
            if !(mu.is_finite() && nu.is_finite()) {
                break 'outer Termination::Numeric;
            }
            let Some(d) = solve_damped(&a, &g_free, mu) else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            if d.norm() <= cfg.eps3 * x.norm() {
                break 'outer Termination::StepSmall;
            }

            let Some(set) = set else {
                let trial = &x + &d;
                match c.eval(&trial) {
                    Some((ft, bft)) => {
                        let pred = predicted_gain(&a, &g, &d);
                        if big_f - bft > 0.0 && pred > 0.0 {
                            mu = nielsen(mu, (big_f - bft) / pred);
                            nu = 2.0;
                            x = trial;
                            f = ft;
                            big_f = bft;
                            history.push(big_f);
                            break;
                        }
                    }
                    None => {}
                }
                mu *= nu;
                nu *= 2.0;
                continue;
            };

            let trial = set.project(&(&x + &d));
            let dp = &trial - &x;
            let evaluated = if dp.norm() > 0.0 { c.eval(&trial) } else { None };
            if let Some((ft, bft)) = &evaluated {
                if *bft <= cfg.gamma * big_f {
                    let pred = predicted_gain(&a, &g_free, &dp);
                    if pred > 0.0 {
                        mu = nielsen(mu, (big_f - bft) / pred);
                        nu = 2.0;
                        x = trial;
                        f = ft.clone();
                        big_f = *bft;
                        history.push(big_f);
                        break;
                    }
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            }

            // Fallbacks: Armijo search along the projected step, then a
            // projected gradient step.
            let slope = g.dot(&dp);
            let mut accepted = None;
            if dp.norm() > 0.0 && slope <= 0.0 {
                let mut alpha = 1.0;
                for l in 0..cfg.max_backtracks {
                    let (xa, fa) = if l == 0 {
                        match &evaluated {
                            Some(e) => (trial.clone(), Some(e.clone())),
                            None => (trial.clone(), None),
                        }
                    } else {
                        let xa = set.project(&(&x + &dp * alpha));
                        let fa = c.eval(&xa);
                        (xa, fa)
                    };
                    if let Some((fv, bfv)) = fa {
                        if bfv < big_f && bfv <= big_f + cfg.sigma * g.dot(&(&xa - &x)) {
                            accepted = Some((xa, fv, bfv));
                            break;
                        }
                    }
                    alpha *= cfg.beta;
                }
            }
            if accepted.is_none() {
                let mut t = 1.0;
                for _ in 0..cfg.max_backtracks {
                    let xp = set.project(&(&x - &g * t));
                    let step = &xp - &x;
                    if step.norm() > 0.0 {
                        if let Some((fv, bfv)) = c.eval(&xp) {
                            if bfv < big_f && bfv <= big_f + cfg.sigma * g.dot(&step) {
                                accepted = Some((xp, fv, bfv));
                                break;
                            }
                        }
                    }
                    t *= cfg.beta;
                }
            }
            match accepted {
                Some((xn, fv, bfv)) => {
                    x = xn;
                    f = fv;
                    big_f = bfv;
                    history.push(big_f);
                    if cfg.fallback_damping == FallbackDamping::Increase {
                        mu *= nu;
                        nu *= 2.0;
                    }
                    break;
                }
                None => break 'outer Termination::StepSmall,
            }
        }
    };

    Ok(OptResult::new(
        x,
        big_f,
        iterations,
        c.obj,
        c.grad,
        termination,
        history,
    ))
}
