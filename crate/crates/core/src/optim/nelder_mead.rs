//! Nelder-Mead simplex search with restarts.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{OptResult, Termination};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    /// Iterations per run.
    pub max_iter: usize,
    /// Total number of runs; each restart rebuilds the simplex around the best point.
    pub runs: usize,
    /// Stop a run when the standard deviation of the vertex values falls below this.
    pub tol: f64,
    /// Relative size of the initial simplex edges.
    pub rel_step: f64,
    /// Edge used for components that are zero.
    pub zero_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            runs: 3,
            tol: 1e-12,
            rel_step: 0.05,
            zero_step: 0.00025,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Run {
    best: DVector<f64>,
    f: f64,
    iterations: usize,
    termination: Termination,
}

fn spread(values: &[f64]) -> f64 {
    if values.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn single_run(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    cfg: &NelderMeadConfig,
    history: &mut Vec<f64>,
) -> Result<Run> {
    let n = x0.len();
    let mut simplex = vec![x0.clone()];
    for i in 0..n {
        let mut v = x0.clone();
        v[i] = if v[i] != 0.0 {
            v[i] * (1.0 + cfg.rel_step)
        } else {
            cfg.zero_step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();
    if values.iter().all(|v| *v == f64::INFINITY) {
        return Err(Error::Optimizer(
            "every vertex of the initial simplex is infeasible".into(),
        ));
    }

    let mut iterations = 0;
    let termination = loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if history.last().is_none_or(|h| values[0] < *h) {
            history.push(values[0]);
        }
        if spread(&values) <= cfg.tol {
            break Termination::SpreadSmall;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;

        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, v| acc + v)
            / n as f64;
        let worst = &simplex[n];
        let xr = &centroid + (&centroid - worst) * REFLECT;
        let fr = sanitize(f(&xr));
        if fr < values[0] {
            let xe = &centroid + (&xr - &centroid) * EXPAND;
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = &centroid + (&xr - &centroid) * CONTRACT;
            let fc = sanitize(f(&xc));
            (xc, fc)
        } else {
            let xc = &centroid + (worst - &centroid) * CONTRACT;
            let fc = sanitize(f(&xc));
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            simplex[i] = &simplex[0] + (&simplex[i] - &simplex[0]) * SHRINK;
            values[i] = sanitize(f(&simplex[i]));
        }
    };
    Ok(Run {
        best: simplex[0].clone(),
        f: values[0],
        iterations,
        termination,
    })
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes a total objective (`+∞` marks infeasible points) by repeated
/// Nelder-Mead runs, each restarted from the best point found so far.
pub fn nelder_mead(
    f: &dyn Fn(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    config: &NelderMeadConfig,
) -> Result<OptResult> {
    if config.runs == 0 {
        return Err(Error::Validation("Nelder-Mead needs at least one run".into()));
    }
    let mut calls = 0usize;
    let mut counted = |x: &DVector<f64>| {
        calls += 1;
        f(x)
    };
    let mut history = Vec::new();
    let mut x = x0.clone();
    let mut best_f = f64::INFINITY;
    let mut iterations = 0;
    let mut termination = Termination::MaxIter;
    for _ in 0..config.runs {
        let run = single_run(&mut counted, &x, config, &mut history)?;
        iterations += run.iterations;
        termination = run.termination;
        if run.f <= best_f {
            best_f = run.f;
            x = run.best;
        }
    }
    Ok(OptResult::new(x, best_f, iterations, calls, 0, termination, history))
}
