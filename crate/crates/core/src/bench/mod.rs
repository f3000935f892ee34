//! Benchmark harness: random feasible starts, a method matrix, call counts,
//! timings and Feller accounting.

mod report;

use std::cell::Cell;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{quantiles, write_report, BenchReport, MethodSummary, ReportPaths, RunRow};

use crate::calib::{CalibOptions, CalibProblem};
use crate::charfn::Representation;
use crate::market::{load_market, LoadOptions, DEFAULT_FACTORS, DEFAULT_SHIFT};
use crate::model::{ModelParams, N_PARAMS};
use crate::optim::{
    bfgs_bounded, lm_bc, lm_bleic, lm_bleic_nm, nelder_mead, BfgsConfig, Bounds, HybridConfig,
    LeastSquares, LmConfig, NelderMeadConfig, Objective, OptResult,
};
use crate::pricer::DEFAULT_NODES;
use crate::{Error, Result};

/// Calibration methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Nelder-Mead on the penalized objective, 500 iterations, 3 runs.
    #[serde(rename = "heston-NM")]
    HestonNm,
    /// Bounded quasi-Newton, 30 iterations, Feller not enforced.
    #[serde(rename = "BFGS")]
    Bfgs,
    /// Box-constrained Levenberg-Marquardt with a central-difference Jacobian, 15 iterations.
    #[serde(rename = "LM-NUM")]
    LmNum,
    /// Box-constrained Levenberg-Marquardt, analytic Jacobian, 15 iterations.
    #[serde(rename = "LM-BC-15")]
    LmBc15,
    /// Box-constrained Levenberg-Marquardt, analytic Jacobian, 30 iterations.
    #[serde(rename = "LM-BC-30")]
    LmBc30,
    /// Feller-constrained Levenberg-Marquardt, 50 iterations.
    #[serde(rename = "LM-BLEIC")]
    LmBleic,
    /// `LM-BLEIC` followed by a Nelder-Mead polish above the threshold.
    #[serde(rename = "LM-BLEIC-NM")]
    LmBleicNm,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::HestonNm,
        Method::Bfgs,
        Method::LmNum,
        Method::LmBc15,
        Method::LmBc30,
        Method::LmBleic,
        Method::LmBleicNm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::HestonNm => "heston-NM",
            Method::Bfgs => "BFGS",
            Method::LmNum => "LM-NUM",
            Method::LmBc15 => "LM-BC-15",
            Method::LmBc30 => "LM-BC-30",
            Method::LmBleic => "LM-BLEIC",
            Method::LmBleicNm => "LM-BLEIC-NM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Validation(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Harness settings. Every field has a default, so a JSON config may name
/// only what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub n_starts: usize,
    pub seed: u64,
    pub bounds: Bounds,
    /// Upper sampling limits for the start distribution, applied on top of
    /// `bounds.upper` (needed where the bound is infinite).
    pub start_caps: Vec<f64>,
    /// Central-difference step for `LM-NUM`.
    pub fd_step: f64,
    /// Shared Levenberg-Marquardt constants; the iteration cap is set per method.
    pub lm: LmConfig,
    pub lm_num_iterations: usize,
    pub lm_bc_short_iterations: usize,
    pub lm_bc_long_iterations: usize,
    pub lm_bleic_iterations: usize,
    pub bfgs: BfgsConfig,
    pub nelder_mead: NelderMeadConfig,
    pub hybrid: HybridConfig,
    pub shift: f64,
    pub v0: f64,
    pub nodes: usize,
    pub representation: Representation,
    pub n_factors: usize,
    pub grid_spacing: f64,
    pub curve: Option<PathBuf>,
    pub quotes: Option<PathBuf>,
    pub betas: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            n_starts: 100,
            seed: 2017,
            bounds: Bounds::model_default(),
            start_caps: DEFAULT_START_CAPS.to_vec(),
            fd_step: 1e-8,
            lm: LmConfig::default(),
            lm_num_iterations: 15,
            lm_bc_short_iterations: 15,
            lm_bc_long_iterations: 30,
            lm_bleic_iterations: 50,
            bfgs: BfgsConfig::default(),
            nelder_mead: NelderMeadConfig::default(),
            hybrid: HybridConfig::default(),
            shift: DEFAULT_SHIFT,
            v0: 1.0,
            nodes: DEFAULT_NODES,
            representation: Representation::Albrecher,
            n_factors: DEFAULT_FACTORS,
            grid_spacing: 1.0,
            curve: None,
            quotes: None,
            betas: None,
            threads: None,
        }
    }
}

/// Default upper limits of the start distribution: `a, b, d ≤ 0.3`, `c ≤ 2`,
/// `κ, θ ≤ 3`, `ε ≤ 2`, `ρ` up to its bound.
pub const DEFAULT_START_CAPS: [f64; N_PARAMS] = [0.3, 0.3, 2.0, 0.3, 3.0, 3.0, 2.0, 1.0];

impl BenchConfig {
    /// Parses a JSON config; missing keys take their defaults and `null`
    /// bounds mean unbounded.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        cfg.bounds = cfg.bounds.normalized();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Validation("method list is empty".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Validation("n_starts must be at least 1".into()));
        }
        if self.bounds.dim() != N_PARAMS || self.start_caps.len() != N_PARAMS {
            return Err(Error::Validation(format!(
                "bounds and start caps need {N_PARAMS} components"
            )));
        }
        Bounds::new(self.bounds.lower.clone(), self.bounds.upper.clone())?;
        if !(self.fd_step > 0.0) {
            return Err(Error::Validation("fd_step must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Validation("threads must be at least 1".into()));
        }
        self.lm.validate()
    }

    pub fn calib_options(&self) -> CalibOptions {
        CalibOptions {
            nodes: self.nodes,
            representation: self.representation,
            regularization: None,
        }
    }

    /// Loads the market files named in the config into a calibration problem.
    pub fn load_problem(&self) -> Result<CalibProblem> {
        let (Some(curve), Some(quotes), Some(betas)) = (&self.curve, &self.quotes, &self.betas)
        else {
            return Err(Error::Validation(
                "curve, quotes and betas file paths are required".into(),
            ));
        };
        let market = load_market(
            curve,
            quotes,
            betas,
            &LoadOptions {
                shift: self.shift,
                grid_spacing: self.grid_spacing,
                n_factors: self.n_factors,
            },
        )?;
        CalibProblem::from_market(&market, self.shift, self.v0, self.calib_options())
    }
}

/// Smallest acceptance rate tolerated by [`sample_starts`].
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Draws `n` starts uniformly in `[LB, min(UB, cap)]`, keeping those with
/// `2κθ ≥ ε²`. Deterministic under `seed`.
pub fn sample_starts(bounds: &Bounds, caps: &[f64], n: usize, seed: u64) -> Result<Vec<ModelParams>> {
    if bounds.dim() != N_PARAMS || caps.len() != N_PARAMS {
        return Err(Error::Validation(format!("sampling needs {N_PARAMS} bounds and caps")));
    }
    let mut box_lo = [0.0; N_PARAMS];
    let mut box_hi = [0.0; N_PARAMS];
    for i in 0..N_PARAMS {
        box_lo[i] = bounds.lower[i];
        box_hi[i] = bounds.upper[i].min(caps[i]);
        if !(box_lo[i].is_finite() && box_hi[i].is_finite() && box_lo[i] < box_hi[i]) {
            return Err(Error::Validation(format!(
                "component {i} has no finite sampling range [{}, {}]",
                box_lo[i], box_hi[i]
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_draws = ((n as f64) / MIN_ACCEPTANCE).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        if draws >= max_draws {
            return Err(Error::Validation(format!(
                "start sampling accepted {} of {draws} draws; widen the caps",
                out.len()
            )));
        }
        draws += 1;
        let mut x = [0.0; N_PARAMS];
        for i in 0..N_PARAMS {
            x[i] = rng.random_range(box_lo[i]..box_hi[i]);
        }
        let theta = ModelParams::from_array(x);
        if theta.feller_satisfied() && theta.in_domain() {
            out.push(theta);
        }
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector function. A component whose
/// bumped evaluation fails falls back to a one-sided difference.
pub fn numerical_jacobian(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::Validation("finite-difference step must be positive".into()));
    }
    let finite = |v: Result<DVector<f64>>| v.ok().filter(|v| v.iter().all(|e| e.is_finite()));
    let mut center: Option<DVector<f64>> = None;
    let mut columns = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = match (finite(f(&xp)), finite(f(&xm))) {
            (Some(p), Some(m)) => (p - m) / (2.0 * h),
            (p, m) => {
                log::warn!("central difference infeasible in component {i}; using one-sided");
                if center.is_none() {
                    center = Some(f(x)?);
                }
                let c = center.as_ref().expect("center evaluated");
                match (p, m) {
                    (Some(p), None) => (p - c) / h,
                    (None, Some(m)) => (c - m) / h,
                    _ => {
                        return Err(Error::Domain(format!(
                            "finite difference fails on both sides of component {i}"
                        )))
                    }
                }
            }
        };
        columns.push(col);
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Central-difference gradient of a scalar function.
pub fn numerical_gradient(
    f: &dyn Fn(&DVector<f64>) -> Result<f64>,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let wrapped = |y: &DVector<f64>| f(y).map(|v| DVector::from_element(1, v));
    Ok(numerical_jacobian(&wrapped, x, h)?.row(0).transpose())
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return Duration::ZERO;
    }
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

/// Counts and times every objective and gradient request made to a problem.
pub struct Instrumented<'a> {
    problem: &'a CalibProblem,
    fd_step: Option<f64>,
    obj_calls: Cell<usize>,
    grad_calls: Cell<usize>,
    obj_time: Cell<Duration>,
    grad_time: Cell<Duration>,
}

impl<'a> Instrumented<'a> {
    pub fn new(problem: &'a CalibProblem) -> Self {
        Self {
            problem,
            fd_step: None,
            obj_calls: Cell::new(0),
            grad_calls: Cell::new(0),
            obj_time: Cell::new(Duration::ZERO),
            grad_time: Cell::new(Duration::ZERO),
        }
    }

    /// Replaces the analytic Jacobian by central differences of the
    /// residuals; each bumped residual evaluation counts as an objective call.
    pub fn with_numerical_jacobian(problem: &'a CalibProblem, h: f64) -> Self {
        Self {
            fd_step: Some(h),
            ..Self::new(problem)
        }
    }

    pub fn obj_calls(&self) -> usize {
        self.obj_calls.get()
    }

    pub fn grad_calls(&self) -> usize {
        self.grad_calls.get()
    }

    pub fn obj_time(&self) -> Duration {
        self.obj_time.get()
    }

    pub fn grad_time(&self) -> Duration {
        self.grad_time.get()
    }

    fn timed_obj<T>(&self, f: impl FnOnce() -> T) -> T {
        self.obj_calls.set(self.obj_calls.get() + 1);
        let t0 = thread_cpu_time();
        let out = f();
        self.obj_time.set(self.obj_time.get() + (thread_cpu_time() - t0));
        out
    }

    fn timed_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        self.grad_calls.set(self.grad_calls.get() + 1);
        let t0 = thread_cpu_time();
        let out = f();
        self.grad_time.set(self.grad_time.get() + (thread_cpu_time() - t0));
        out
    }

    /// `F` on its domain with the Feller condition, `+∞` elsewhere.
    pub fn penalized(&self, x: &DVector<f64>) -> f64 {
        self.timed_obj(|| match ModelParams::from_slice(x.as_slice()) {
            Ok(theta) => self.problem.objective_penalized(&theta),
            Err(_) => f64::INFINITY,
        })
    }
}

impl LeastSquares for Instrumented<'_> {
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.timed_obj(|| LeastSquares::residuals(self.problem, x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.fd_step {
            None => self.timed_grad(|| LeastSquares::jacobian(self.problem, x)),
            Some(h) => self.timed_grad(|| {
                numerical_jacobian(&|y: &DVector<f64>| LeastSquares::residuals(self, y), x, h)
            }),
        }
    }
}

impl Objective for Instrumented<'_> {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.timed_obj(|| self.problem.value(x))
    }

    /// One combined request counts as one objective and one gradient call.
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.obj_calls.set(self.obj_calls.get() + 1);
        self.timed_grad(|| self.problem.value_and_gradient(x))
    }
}

/// Runs one method from one start.
pub fn run_method<'a>(
    problem: &'a CalibProblem,
    method: Method,
    x0: &ModelParams,
    config: &BenchConfig,
) -> (Result<OptResult>, Instrumented<'a>) {
    let x0 = DVector::from_row_slice(&x0.to_array());
    let lm_cfg = |iters: usize| LmConfig {
        max_iter: iters,
        ..config.lm.clone()
    };
    let inst = match method {
        Method::LmNum => Instrumented::with_numerical_jacobian(problem, config.fd_step),
        _ => Instrumented::new(problem),
    };
    let b = &config.bounds;
    let result = match method {
        Method::HestonNm => nelder_mead(&|x| inst.penalized(x), &x0, &config.nelder_mead),
        Method::Bfgs => bfgs_bounded(&inst, &x0, b, &config.bfgs),
        Method::LmNum => lm_bc(&inst, &x0, b, &lm_cfg(config.lm_num_iterations)),
        Method::LmBc15 => lm_bc(&inst, &x0, b, &lm_cfg(config.lm_bc_short_iterations)),
        Method::LmBc30 => lm_bc(&inst, &x0, b, &lm_cfg(config.lm_bc_long_iterations)),
        Method::LmBleic => lm_bleic(&inst, &x0, b, &lm_cfg(config.lm_bleic_iterations)),
        Method::LmBleicNm => lm_bleic_nm(
            &inst,
            &|x| inst.penalized(x),
            &x0,
            b,
            &lm_cfg(config.lm_bleic_iterations),
            &config.hybrid,
        ),
    };
    (result, inst)
}

fn run_row(problem: &CalibProblem, method: Method, start: usize, x0: &ModelParams, cfg: &BenchConfig) -> RunRow {
    let wall0 = Instant::now();
    let cpu0 = thread_cpu_time();
    let (result, inst) = run_method(problem, method, x0, cfg);
    let cpu = thread_cpu_time() - cpu0;
    let wall = wall0.elapsed();
    let mut row = RunRow {
        method,
        start,
        x0: x0.to_array().to_vec(),
        x: None,
        f: None,
        iterations: 0,
        n_obj_calls: inst.obj_calls(),
        n_grad_calls: inst.grad_calls(),
        obj_time_s: inst.obj_time().as_secs_f64(),
        grad_time_s: inst.grad_time().as_secs_f64(),
        cpu_time_s: cpu.as_secs_f64(),
        wall_time_s: wall.as_secs_f64(),
        termination: None,
        feller_satisfied: true,
        error: None,
    };
    match result {
        Ok(r) => {
            row.feller_satisfied = r.feller_satisfied;
            row.iterations = r.iterations;
            row.termination = Some(r.termination);
            row.f = Some(r.f);
            row.x = Some(r.x);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every `(method, start)` pair on `problem` and aggregates the results.
pub fn run_matrix_on(problem: &CalibProblem, config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let starts = sample_starts(&config.bounds, &config.start_caps, config.n_starts, config.seed)?;
    let jobs: Vec<(Method, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| (0..starts.len()).map(move |s| (m, s)))
        .collect();
    let run_all = || -> Vec<RunRow> {
        jobs.par_iter()
            .map(|&(m, s)| run_row(problem, m, s, &starts[s], config))
            .collect()
    };
    let runs = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    Ok(BenchReport::assemble(config, runs))
}

/// Loads the configured market files and runs the method matrix.
pub fn run_matrix(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let problem = config.load_problem()?;
    run_matrix_on(&problem, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("LM".parse::<Method>().is_err());
    }

    #[test]
    fn starts_are_feasible_and_reproducible() {
        let b = Bounds::model_default();
        let a = sample_starts(&b, &DEFAULT_START_CAPS, 200, 7).unwrap();
        let c = sample_starts(&b, &DEFAULT_START_CAPS, 200, 7).unwrap();
        assert_eq!(a, c);
        for t in &a {
            assert!(t.feller_satisfied());
            let x = DVector::from_row_slice(&t.to_array());
            assert!(crate::optim::Projection::contains(&b, &x));
        }
        assert_ne!(a, sample_starts(&b, &DEFAULT_START_CAPS, 200, 8).unwrap());
    }

    #[test]
    fn default_caps_accept_often() {
        let b = Bounds::model_default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut ok = 0;
        for _ in 0..n {
            let k = rng.random_range(b.lower[4]..DEFAULT_START_CAPS[4]);
            let t = rng.random_range(b.lower[5]..DEFAULT_START_CAPS[5]);
            let e = rng.random_range(b.lower[6]..DEFAULT_START_CAPS[6]);
            if 2.0 * k * t >= e * e {
                ok += 1;
            }
        }
        assert!(ok as f64 / n as f64 > 0.1);
    }

    #[test]
    fn impossible_caps_error() {
        let mut b = Bounds::model_default();
        // κ, θ ≤ 1e-5 + tiny while ε ≥ 1: Feller never holds.
        b.lower[6] = 1.0;
        let mut caps = DEFAULT_START_CAPS;
        caps[4] = 2e-5;
        caps[5] = 2e-5;
        assert!(sample_starts(&b, &caps, 1, 0).is_err());
    }

    #[test]
    fn finite_differences_exact_on_affine_and_quadratic() {
        let lin = |x: &DVector<f64>| Ok(3.0 * x[0] - 2.0 * x[1] + 0.5);
        let g = numerical_gradient(&lin, &DVector::from_vec(vec![0.3, -1.0]), 1e-3).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-10 && (g[1] + 2.0).abs() < 1e-10);
        let quad = |x: &DVector<f64>| Ok(x[0] * x[0] + 3.0 * x[0] * x[1]);
        let x = DVector::from_vec(vec![0.7, 0.2]);
        let g = numerical_gradient(&quad, &x, 1e-3).unwrap();
        assert!((g[0] - (2.0 * 0.7 + 0.6)).abs() < 1e-9 && (g[1] - 2.1).abs() < 1e-9);
    }

    #[test]
    fn one_sided_fallback() {
        // Undefined for x < 0; at x = 0 only the forward difference works.
        let f = |x: &DVector<f64>| {
            if x[0] < 0.0 {
                Err(Error::Domain("negative".into()))
            } else {
                Ok(2.0 * x[0])
            }
        };
        let g = numerical_gradient(&f, &DVector::from_vec(vec![0.0]), 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn empty_method_list_rejected() {
        let cfg = BenchConfig {
            methods: vec![],
            ..BenchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
