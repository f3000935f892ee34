//! Optimizers for the calibration problem.
//!
//! * [`nelder_mead`]: derivative-free simplex search on a total objective that
//!   returns `+∞` outside the feasible set.
//! * [`bfgs_bounded`]: quasi-Newton with gradient projection on a box.
//! * [`lm`]: classic Levenberg-Marquardt with Nielsen damping.
//! * [`lm_bc`]: projected Levenberg-Marquardt for box constraints, with
//!   line-search and projected-gradient fallbacks.
//! * [`lm_bleic`] / [`lm_bleic_nm`]: `lm_bc` in log coordinates for
//!   `(κ, θ, ε)` where the Feller condition becomes a half-space, optionally
//!   followed by a Nelder-Mead polish.
//!
//! All routines are generic over the problem dimension and count every
//! objective (`f` or `F`) and gradient (`J` or `∇F`) evaluation they request.

mod bfgs;
mod feller;
mod lm;
mod nelder_mead;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bfgs::{bfgs_bounded, BfgsConfig, InverseUpdate};
pub use feller::{
    feller_transform, feller_untransform, lm_bleic, lm_bleic_nm, FellerProjection, FellerTransformed,
    HybridConfig,
};
pub use lm::{lm, lm_bc, FallbackDamping, LmConfig};
pub use nelder_mead::{nelder_mead, NelderMeadConfig};

use crate::model::N_PARAMS;
use crate::{Error, Result};

/// Why an optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientSmall,
    StepSmall,
    FSmall,
    /// Simplex function values agree to the configured tolerance.
    SpreadSmall,
    MaxIter,
    Numeric,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GradientSmall => "gradient-small",
            Termination::StepSmall => "step-small",
            Termination::FSmall => "F-small",
            Termination::SpreadSmall => "spread-small",
            Termination::MaxIter => "max-iter",
            Termination::Numeric => "numeric",
        }
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub n_obj_calls: usize,
    pub n_grad_calls: usize,
    pub termination: Termination,
    /// For eight-parameter model vectors, whether `2κθ ≥ ε²` holds at `x`;
    /// always true for other dimensions.
    pub feller_satisfied: bool,
    /// Objective value after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

impl OptResult {
    pub(crate) fn new(
        x: DVector<f64>,
        f: f64,
        iterations: usize,
        n_obj_calls: usize,
        n_grad_calls: usize,
        termination: Termination,
        history: Vec<f64>,
    ) -> Self {
        let feller_satisfied = feller_holds(x.as_slice());
        Self {
            x: x.iter().copied().collect(),
            f,
            iterations,
            n_obj_calls,
            n_grad_calls,
            termination,
            feller_satisfied,
            history,
        }
    }

    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

pub(crate) fn feller_holds(x: &[f64]) -> bool {
    if x.len() != N_PARAMS {
        return true;
    }
    2.0 * x[4] * x[5] >= x[6] * x[6]
}

/// Residual vector `f` and Jacobian `J` of a least-squares problem `½‖f‖²`.
pub trait LeastSquares {
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Scalar objective with gradient.
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

/// Projection onto a closed convex feasible set.
pub trait Projection {
    fn project(&self, x: &DVector<f64>) -> DVector<f64>;
    fn contains(&self, x: &DVector<f64>) -> bool;

    /// Components held on a coordinate bound by a gradient `g` that pushes
    /// them outward.
    fn binding(&self, x: &DVector<f64>, _g: &DVector<f64>) -> Vec<bool> {
        vec![false; x.len()]
    }
}

/// Componentwise bounds `LB ≤ x ≤ UB`; infinite entries are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(with = "extended")]
    pub lower: Vec<f64>,
    #[serde(with = "extended")]
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Validation("bound vectors differ in length".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l >= u {
                return Err(Error::Validation(format!(
                    "bounds must satisfy lower < upper, component {i}: [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `LB = (1e-5, …, 1e-5, -0.999)`, `UB = (+∞, …, +∞, 0.999)`.
    pub fn model_default() -> Self {
        let mut lower = vec![1e-5; N_PARAMS];
        let mut upper = vec![f64::INFINITY; N_PARAMS];
        lower[N_PARAMS - 1] = -0.999;
        upper[N_PARAMS - 1] = 0.999;
        Self { lower, upper }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

impl Projection for Bounds {
    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].max(self.lower[i]).min(self.upper[i]))
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    fn binding(&self, x: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
        (0..x.len())
            .map(|i| (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0))
            .collect()
    }
}

/// Serializes infinite bounds as `null`.
mod extended {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

impl Bounds {
    /// Replaces `+∞` placeholders from deserialization in the lower vector by `-∞`.
    pub fn normalized(mut self) -> Self {
        for l in self.lower.iter_mut() {
            if *l == f64::INFINITY {
                *l = f64::NEG_INFINITY;
            }
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bounds() {
        let b = Bounds::model_default();
        assert_eq!(b.lower[0], 1e-5);
        assert_eq!(b.upper[7], 0.999);
        let x = DVector::from_vec(vec![-1.0, 0.5, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let p = b.project(&x);
        assert!(b.contains(&p));
        assert_eq!(p[0], 1e-5);
        assert_eq!(p[7], 0.999);
        assert_eq!(p[2], 2.0);
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn bounds_json_round_trip() {
        let b = Bounds::model_default();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("null"));
        let back: Bounds = serde_json::from_str::<Bounds>(&s).unwrap().normalized();
        assert_eq!(back, b);
    }
}
