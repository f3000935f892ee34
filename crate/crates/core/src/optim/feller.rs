//! Feller-constrained Levenberg-Marquardt.
//!
//! In the coordinates `y = (a, b, c, d, ln κ, ln θ, ln ε, ρ)` the condition
//! `2κθ ≥ ε²` reads `ln κ + ln θ - 2 ln ε ≥ -ln 2`, a half-space. The feasible
//! set is the intersection of that half-space with the box of log bounds, and
//! the projection onto it is computed exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{lm_bc, nelder_mead, Bounds, LeastSquares, LmConfig, NelderMeadConfig, OptResult, Projection};
use crate::model::N_PARAMS;
use crate::{Error, Result};

const LOG_SLOTS: [usize; 3] = [4, 5, 6];
/// Normal of the Feller half-space in log coordinates.
const NORMAL: [f64; N_PARAMS] = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -2.0, 0.0];
/// Distance kept from the Feller boundary so that the condition survives `exp`.
const MARGIN: f64 = 1e-12;

/// Maps model parameters to log coordinates for `(κ, θ, ε)`.
pub fn feller_transform(x: &DVector<f64>) -> DVector<f64> {
    let mut y = x.clone();
    for i in LOG_SLOTS {
        y[i] = x[i].ln();
    }
    y
}

/// Inverse of [`feller_transform`].
pub fn feller_untransform(y: &DVector<f64>) -> DVector<f64> {
    let mut x = y.clone();
    for i in LOG_SLOTS {
        x[i] = y[i].exp();
    }
    x
}

/// Least-squares problem re-expressed in log coordinates.
pub struct FellerTransformed<'a, P: LeastSquares + ?Sized> {
    inner: &'a P,
}

impl<'a, P: LeastSquares + ?Sized> FellerTransformed<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self { inner }
    }
}

impl<P: LeastSquares + ?Sized> LeastSquares for FellerTransformed<'_, P> {
    fn residuals(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.residuals(&feller_untransform(y))
    }

    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = feller_untransform(y);
        let mut j = self.inner.jacobian(&x)?;
        for i in LOG_SLOTS {
            let scale = x[i];
            j.column_mut(i).scale_mut(scale);
        }
        Ok(j)
    }
}

/// Euclidean projection onto `{y in box : nᵀy ≥ -ln 2 + margin}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FellerProjection {
    bounds: Bounds,
    offset: f64,
}

impl FellerProjection {
    /// Builds the feasible set from bounds on the model parameters.
    pub fn from_bounds(bounds: &Bounds) -> Result<Self> {
        if bounds.dim() != N_PARAMS {
            return Err(Error::Validation(format!(
                "Feller projection needs {N_PARAMS} bounds, got {}",
                bounds.dim()
            )));
        }
        let mut lower = bounds.lower.clone();
        let mut upper = bounds.upper.clone();
        for i in LOG_SLOTS {
            if lower[i] < 0.0 {
                return Err(Error::Validation(
                    "lower bounds for κ, θ and ε must be non-negative".into(),
                ));
            }
            lower[i] = lower[i].ln();
            upper[i] = upper[i].ln();
        }
        let set = Self {
            bounds: Bounds { lower, upper },
            offset: -std::f64::consts::LN_2 + MARGIN,
        };
        // The intersection is empty when the box corner maximising nᵀy fails.
        let best = DVector::from_fn(N_PARAMS, |i, _| {
            if NORMAL[i] > 0.0 {
                set.bounds.upper[i]
            } else if NORMAL[i] < 0.0 {
                set.bounds.lower[i]
            } else {
                0.0
            }
        });
        if set.slack(&best) < 0.0 {
            return Err(Error::Validation(
                "bounds exclude every point satisfying the Feller condition".into(),
            ));
        }
        Ok(set)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn slack(&self, y: &DVector<f64>) -> f64 {
        (0..N_PARAMS).map(|i| NORMAL[i] * y[i]).sum::<f64>() - self.offset
    }

    fn shifted(&self, y: &DVector<f64>, t: f64) -> DVector<f64> {
        let v = DVector::from_fn(N_PARAMS, |i, _| y[i] + t * NORMAL[i]);
        self.bounds.project(&v)
    }
}

impl Projection for FellerProjection {
    /// The minimiser is `clamp(y + t n)` for the smallest `t ≥ 0` that meets
    /// the half-space; `t ↦ nᵀ clamp(y + t n)` is non-decreasing, so `t` is
    /// found by bracketing and bisection.
    fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.bounds.project(y);
        if self.slack(&p) >= 0.0 {
            return p;
        }
        let mut hi = 1.0;
        while self.slack(&self.shifted(y, hi)) < 0.0 {
            hi *= 2.0;
            if !hi.is_finite() {
                return p;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.slack(&self.shifted(y, mid)) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.shifted(y, hi)
    }

    fn contains(&self, y: &DVector<f64>) -> bool {
        self.bounds.contains(y) && self.slack(y) >= 0.0
    }

    fn binding(&self, y: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
        self.bounds.binding(y, g)
    }
}

/// Settings for the Nelder-Mead polish in [`lm_bleic_nm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Polish only when the Levenberg-Marquardt exit value exceeds this.
    pub threshold: f64,
    pub nm_iterations: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            nm_iterations: 200,
        }
    }
}

/// Projected Levenberg-Marquardt in log coordinates under the Feller
/// condition. Start and result are in model coordinates.
pub fn lm_bleic<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    bounds: &Bounds,
    config: &LmConfig,
) -> Result<OptResult> {
    let set = FellerProjection::from_bounds(bounds)?;
    if x0.len() != N_PARAMS || LOG_SLOTS.iter().any(|&i| !(x0[i] > 0.0)) {
        return Err(Error::Validation(
            "Feller-constrained start needs positive κ, θ and ε".into(),
        ));
    }
    let y0 = set.project(&feller_transform(x0));
    let transformed = FellerTransformed::new(problem);
    let r = lm_bc(&transformed, &y0, &set, config)?;
    Ok(OptResult::new(
        feller_untransform(&r.x_vector()),
        r.f,
        r.iterations,
        r.n_obj_calls,
        r.n_grad_calls,
        r.termination,
        r.history,
    ))
}

/// [`lm_bleic`] followed, when its value exceeds the threshold, by a
/// Nelder-Mead run on `penalized` (the objective with `+∞` outside the
/// feasible set) started from the Levenberg-Marquardt exit point. The better
/// of the two points is returned with combined counters.
pub fn lm_bleic_nm<P: LeastSquares + ?Sized>(
    problem: &P,
    penalized: &dyn Fn(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    bounds: &Bounds,
    config: &LmConfig,
    hybrid: &HybridConfig,
) -> Result<OptResult> {
    let first = lm_bleic(problem, x0, bounds, config)?;
    if first.f <= hybrid.threshold {
        return Ok(first);
    }
    let nm_cfg = NelderMeadConfig {
        max_iter: hybrid.nm_iterations,
        runs: 1,
        ..NelderMeadConfig::default()
    };
    let polish = match nelder_mead(penalized, &first.x_vector(), &nm_cfg) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("Nelder-Mead polish skipped: {e}");
            return Ok(first);
        }
    };
    let mut history = first.history.clone();
    history.extend(polish.history.iter().filter(|v| **v < first.f));
    let (x, f, termination) = if polish.f < first.f {
        (polish.x_vector(), polish.f, polish.termination)
    } else {
        (first.x_vector(), first.f, first.termination)
    };
    Ok(OptResult::new(
        x,
        f,
        first.iterations + polish.iterations,
        first.n_obj_calls + polish.n_obj_calls,
        first.n_grad_calls,
        termination,
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::feller_holds;

    fn set() -> FellerProjection {
        FellerProjection::from_bounds(&Bounds::model_default()).unwrap()
    }

    #[test]
    fn transform_round_trip() {
        let x = DVector::from_vec(vec![0.02, 0.05, 0.6, 0.05, 0.8, 1.2, 0.9, -0.3]);
        let back = feller_untransform(&feller_transform(&x));
        assert!((back - &x).amax() < 1e-15);
    }

    #[test]
    fn projection_lands_on_hyperplane() {
        let s = set();
        // κ = 0.1, θ = 0.1, ε = 1: strongly violates 2κθ ≥ ε².
        let x = DVector::from_vec(vec![0.02, 0.05, 0.6, 0.05, 0.1, 0.1, 1.0, -0.3]);
        let y = feller_transform(&x);
        let p = s.project(&y);
        assert!(s.contains(&p));
        assert!(s.slack(&p).abs() < 1e-12);
        // Unconstrained components are untouched; the move is along the normal.
        for i in [0, 1, 2, 3, 7] {
            assert_eq!(p[i], y[i]);
        }
        let t = p[4] - y[4];
        assert!((p[5] - y[5] - t).abs() < 1e-12 && (p[6] - y[6] + 2.0 * t).abs() < 1e-12);
        assert!(feller_holds(feller_untransform(&p).as_slice()));
        // Idempotent.
        assert_eq!(s.project(&p), p);
    }

    #[test]
    fn projection_is_nearest_point() {
        let s = set();
        let y = DVector::from_vec(vec![0.0, 1.0, -20.0, 0.3, -12.0, -0.5, 0.4, 1.5]);
        let p = s.project(&y);
        assert!(s.contains(&p));
        // Variational inequality (y - p)ᵀ(z - p) ≤ 0 on feasible samples.
        let zs = [
            DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.1, 2.0, -1.0, -5.0, 1.0, 1.0, 0.5, 0.9]),
            DVector::from_vec(vec![0.0, 0.0, -11.0, 0.0, -11.0, 5.0, -3.0, -0.5]),
        ];
        for z in zs.iter() {
            let z = s.project(z);
            assert!((&y - &p).dot(&(&z - &p)) <= 1e-10);
        }
    }

    struct Linear;
    impl LeastSquares for Linear {
        fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x - DVector::from_vec(vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 1.0, 0.0]))
        }
        fn jacobian(&self, _: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(N_PARAMS, N_PARAMS))
        }
    }

    #[test]
    fn jacobian_chain_rule() {
        let t = FellerTransformed::new(&Linear);
        let y = DVector::from_vec(vec![0.1, 0.1, 0.1, 0.1, 0.3, -0.2, 0.1, 0.0]);
        let j = t.jacobian(&y).unwrap();
        let h = 1e-6;
        for i in 0..N_PARAMS {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let fd = (t.residuals(&yp).unwrap() - t.residuals(&ym).unwrap()) / (2.0 * h);
            assert!((fd - j.column(i)).amax() < 1e-8);
        }
    }

    #[test]
    fn infeasible_target_stays_feasible() {
        let x0 = DVector::from_vec(vec![0.3, 0.3, 0.3, 0.3, 1.0, 1.0, 0.5, 0.2]);
        let cfg = LmConfig::with_max_iter(50);
        let r = lm_bleic(&Linear, &x0, &Bounds::model_default(), &cfg).unwrap();
        assert!(r.feller_satisfied);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        // Unconstrained components reach their targets.
        for i in 0..4 {
            assert!((r.x[i] - 0.1).abs() < 1e-6);
        }
        // The Feller boundary is active at the solution.
        assert!((2.0 * r.x[4] * r.x[5] / (r.x[6] * r.x[6]) - 1.0).abs() < 1e-6);
    }
}
