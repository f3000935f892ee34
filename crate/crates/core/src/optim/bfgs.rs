//! Quasi-Newton minimization on a box by gradient projection.
//!
//! Components sitting on a bound with the gradient pushing outward are frozen
//! for the iteration; the search direction `d = -H g` is formed on the free
//! components and the Wolfe line search never leaves the box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Bounds, Objective, OptResult, Projection, Termination};
use crate::{Error, Result};

/// Rank-two update of the inverse Hessian approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseUpdate {
    /// `H⁺ = (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`, `ρ = 1/(yᵀs)`.
    Bfgs,
    /// `H⁺ = H - H y yᵀ H/(yᵀ H y) + s sᵀ/(yᵀ s)`.
    Dfp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Stop when the projected gradient satisfies `‖P g‖_∞ ≤ gtol`.
    pub gtol: f64,
    /// Stop when `F ≤ ftol`.
    pub ftol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Maximum objective evaluations per line search.
    pub max_line_search: usize,
    pub update: InverseUpdate,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            gtol: 1e-10,
            ftol: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 20,
            update: InverseUpdate::Bfgs,
        }
    }
}

struct Counted<'a, O: Objective + ?Sized> {
    obj: &'a O,
    calls: usize,
}

impl<O: Objective + ?Sized> Counted<'_, O> {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self.calls += 1;
        let (f, g) = self.obj.value_and_gradient(x).ok()?;
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    }
}

struct Point {
    alpha: f64,
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective + ?Sized>(
    c: &mut Counted<O>,
    b: &Bounds,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
    alpha0: f64,
    cfg: &BfgsConfig,
) -> Option<Point> {
    let slope0 = g0.dot(d);
    let mut evals = 0;
    let probe = |c: &mut Counted<O>, alpha: f64| -> Point {
        let xa = b.project(&(x + d * alpha));
        match c.eval(&xa) {
            Some((f, g)) => Point { alpha, x: xa, f, g },
            None => Point {
                alpha,
                x: xa,
                f: f64::INFINITY,
                g: DVector::zeros(x.len()),
            },
        }
    };
    // Sufficient decrease along the projected path.
    let armijo = |p: &Point| p.f <= f0 + cfg.c1 * g0.dot(&(&p.x - x)) && p.f < f0;
    let curvature = |p: &Point| p.g.dot(d).abs() <= -cfg.c2 * slope0;

    let mut prev: Option<Point> = None;
    let mut alpha = alpha0;
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_line_search {
            return prev;
        }
        evals += 1;
        let p = probe(c, alpha);
        let prev_f = prev.as_ref().map_or(f0, |q| q.f);
        if !armijo(&p) || (prev.is_some() && p.f >= prev_f) {
            break (prev, p);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.g.dot(d) >= 0.0 {
            let hi_alpha = prev.as_ref().map_or(0.0, |q| q.alpha);
            let hi = Point {
                alpha: hi_alpha,
                x: x.clone(),
                f: prev_f,
                g: DVector::zeros(0),
            };
            break (Some(p), hi);
        }
        if prev.as_ref().is_some_and(|q| q.x == p.x) {
            return Some(p);
        }
        alpha *= 2.0;
        prev = Some(p);
    };

    // Zoom between lo (best Armijo point so far, or the origin) and hi.
    loop {
        if evals >= cfg.max_line_search {
            return lo;
        }
        evals += 1;
        let lo_alpha = lo.as_ref().map_or(0.0, |q| q.alpha);
        let lo_f = lo.as_ref().map_or(f0, |q| q.f);
        let mid = 0.5 * (lo_alpha + hi.alpha);
        if (hi.alpha - lo_alpha).abs() <= 1e-16 * lo_alpha.abs().max(1e-300) {
            return lo;
        }
        let p = probe(c, mid);
        if !armijo(&p) || p.f >= lo_f {
            hi = p;
        } else {
            if curvature(&p) {
                return Some(p);
            }
            if p.g.dot(d) * (hi.alpha - lo_alpha) >= 0.0 {
                hi = match lo.take() {
                    Some(q) => q,
                    None => Point {
                        alpha: 0.0,
                        x: x.clone(),
                        f: f0,
                        g: DVector::zeros(0),
                    },
                };
            }
            lo = Some(p);
        }
    }
}

/// Minimizes `F` over `bounds` with a quasi-Newton method, `H_0 = I`.
pub fn bfgs_bounded<O: Objective + ?Sized>(
    objective: &O,
    x0: &DVector<f64>,
    bounds: &Bounds,
    config: &BfgsConfig,
) -> Result<OptResult> {
    let n = x0.len();
    if bounds.dim() != n {
        return Err(Error::Validation("bounds dimension does not match start".into()));
    }
    let mut c = Counted {
        obj: objective,
        calls: 0,
    };
    let mut x = bounds.project(x0);
    let (mut f, mut g) = c
        .eval(&x)
        .ok_or_else(|| Error::Optimizer("objective is not finite at the starting point".into()))?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut history = vec![f];
    let mut iterations = 0;

    let termination = loop {
        let fixed = bounds.binding(&x, &g);
        let pg = DVector::from_fn(n, |i, _| if fixed[i] { 0.0 } else { g[i] });
        if f <= config.ftol {
            break Termination::FSmall;
        }
        if pg.amax() <= config.gtol {
            break Termination::GradientSmall;
        }
        if iterations >= config.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;

        let mut d = -(&h * &pg);
        for i in 0..n {
            if fixed[i] {
                d[i] = 0.0;
            }
        }
        if g.dot(&d) >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -pg.clone();
        }
        let alpha0 = if fresh { (1.0 / d.amax()).min(1.0) } else { 1.0 };
        let Some(p) = line_search(&mut c, bounds, &x, f, &g, &d, alpha0, config) else {
            if fresh {
                break Termination::StepSmall;
            }
            // Retry the iteration along the projected gradient.
            h = DMatrix::identity(n, n);
            fresh = true;
            iterations -= 1;
            continue;
        };
        let s = &p.x - &x;
        let y = &p.g - &g;
        let ys = y.dot(&s);
        if ys > 1e-12 * s.norm() * y.norm() {
            match config.update {
                InverseUpdate::Bfgs => {
                    let rho = 1.0 / ys;
                    let hy = &h * &y;
                    let yhy = y.dot(&hy);
                    // (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ expanded.
                    h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                        - (&hy * s.transpose() + &s * hy.transpose()) * rho;
                }
                InverseUpdate::Dfp => {
                    let hy = &h * &y;
                    let yhy = y.dot(&hy);
                    h += (&s * s.transpose()) / ys - (&hy * hy.transpose()) / yhy;
                }
            }
            fresh = false;
        }
        if s.amax() == 0.0 {
            break Termination::StepSmall;
        }
        x = p.x;
        f = p.f;
        g = p.g;
        history.push(f);
    };

    Ok(OptResult::new(
        x,
        f,
        iterations,
        c.calls,
        c.calls,
        termination,
        history,
    ))
}
