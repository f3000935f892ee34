//! Calibration objective on swaption prices.
//!
//! Residual `q` is `f_q = √(w_q/W) (PS_q(Θ) - PS_q^mkt)/PS_q^mkt` with
//! `W = Σ w_q`, and `F(Θ) = ½ ‖f‖²`. An optional Tikhonov term `½ ‖ΓΘ‖²` is
//! carried as extra residual rows `ΓΘ`, so `∇F = Jᵀ f` holds in both cases.

use nalgebra::{DMatrix, DVector};

use crate::charfn::Representation;
use crate::market::{swap_geometry, MarketData, SwapGeometry, SwaptionQuote, TenorGrid, ZeroCurve};
use crate::model::{build_coeffs, build_coeffs_with_partials, ModelContext, ModelParams, N_PARAMS};
use crate::optim::{LeastSquares, Objective};
use crate::pricer::{node_values, price_from_nodes, quad_rule, PriceAndGrad, QuadratureRule, DEFAULT_NODES};
use crate::{Error, Result};

/// Pricing and objective settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibOptions {
    pub nodes: usize,
    pub representation: Representation,
    /// Tikhonov matrix `Γ` (rows × 8); `None` disables regularization.
    pub regularization: Option<DMatrix<f64>>,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            representation: Representation::Albrecher,
            regularization: None,
        }
    }
}

/// Quotes sharing one swap `(m, n)` and therefore one set of node values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteGroup {
    pub geom: SwapGeometry,
    /// Indices into the quote list, in load order.
    pub quotes: Vec<usize>,
}

/// Residual vector and Jacobian at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub f: DVector<f64>,
    pub j: DMatrix<f64>,
}

impl Residuals {
    pub fn objective(&self) -> f64 {
        0.5 * self.f.norm_squared()
    }

    pub fn gradient(&self) -> DVector<f64> {
        self.j.transpose() * &self.f
    }
}

/// An immutable calibration problem: quotes, cached swap geometry and pricing rule.
#[derive(Debug, Clone)]
pub struct CalibProblem {
    ctx: ModelContext,
    quotes: Vec<SwaptionQuote>,
    groups: Vec<QuoteGroup>,
    scales: Vec<f64>,
    total_weight: f64,
    rule: QuadratureRule,
    options: CalibOptions,
}

impl CalibProblem {
    pub fn new(
        curve: &ZeroCurve,
        grid: &TenorGrid,
        quotes: Vec<SwaptionQuote>,
        ctx: ModelContext,
        options: CalibOptions,
    ) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::Validation("calibration needs at least one quote".into()));
        }
        if let Some(g) = &options.regularization {
            if g.ncols() != N_PARAMS {
                return Err(Error::Validation(format!(
                    "regularization matrix must have {N_PARAMS} columns, got {}",
                    g.ncols()
                )));
            }
        }
        let mut groups: Vec<QuoteGroup> = Vec::new();
        for (i, q) in quotes.iter().enumerate() {
            if !(q.price > 0.0) {
                return Err(Error::Validation(format!(
                    "quote {i} has non-positive market price {}",
                    q.price
                )));
            }
            if !(q.weight > 0.0) {
                return Err(Error::Validation(format!("quote {i} has non-positive weight")));
            }
            match groups.iter_mut().find(|g| g.geom.m == q.m && g.geom.n == q.n) {
                Some(g) => g.quotes.push(i),
                None => groups.push(QuoteGroup {
                    geom: swap_geometry(curve, grid, q.m, q.n, ctx.shift)?,
                    quotes: vec![i],
                }),
            }
        }
        let total_weight: f64 = quotes.iter().map(|q| q.weight).sum();
        let scales = quotes
            .iter()
            .map(|q| (q.weight / total_weight).sqrt() / q.price)
            .collect();
        let rule = quad_rule(options.nodes)?;
        Ok(Self {
            ctx,
            quotes,
            groups,
            scales,
            total_weight,
            rule,
            options,
        })
    }

    /// Builds the problem from loaded market files with initial variance `v0`.
    pub fn from_market(market: &MarketData, shift: f64, v0: f64, options: CalibOptions) -> Result<Self> {
        let ctx = ModelContext::new(shift, v0, market.betas.clone())?;
        Self::new(&market.curve, &market.grid, market.quotes.clone(), ctx, options)
    }

    pub fn quotes(&self) -> &[SwaptionQuote] {
        &self.quotes
    }

    pub fn groups(&self) -> &[QuoteGroup] {
        &self.groups
    }

    pub fn context(&self) -> &ModelContext {
        &self.ctx
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn options(&self) -> &CalibOptions {
        &self.options
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Number of residual rows (quotes plus regularization rows).
    pub fn n_residuals(&self) -> usize {
        self.quotes.len() + self.options.regularization.as_ref().map_or(0, |g| g.nrows())
    }

    fn price_all(&self, theta: &ModelParams, with_grad: bool) -> Result<Vec<PriceAndGrad>> {
        theta.validate()?;
        let mut out = vec![None; self.quotes.len()];
        for g in &self.groups {
            let first = g.quotes[0];
            let wrap = |e: Error| Error::Quote {
                quote: first,
                source: Box::new(e),
            };
            let (coeffs, partials) = if with_grad {
                let (c, p) = build_coeffs_with_partials(theta, &self.ctx, &g.geom).map_err(wrap)?;
                (c, Some(p))
            } else {
                (build_coeffs(theta, &self.ctx, &g.geom).map_err(wrap)?, None)
            };
            let nodes = node_values(
                theta,
                self.ctx.v0,
                &coeffs,
                partials.as_ref(),
                &self.rule,
                self.options.representation,
            )
            .map_err(wrap)?;
            for &qi in &g.quotes {
                let r = price_from_nodes(&nodes, &g.geom, self.quotes[qi].strike, &self.rule)
                    .map_err(|e| Error::Quote {
                        quote: qi,
                        source: Box::new(e),
                    })?;
                out[qi] = Some(r);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every quote belongs to a group")).collect())
    }

    /// Model prices in quote order.
    pub fn model_prices(&self, theta: &ModelParams) -> Result<Vec<f64>> {
        Ok(self.price_all(theta, false)?.iter().map(|r| r.price).collect())
    }

    /// Model prices and price gradients in quote order.
    pub fn prices_and_gradients(&self, theta: &ModelParams) -> Result<Vec<PriceAndGrad>> {
        self.price_all(theta, true)
    }

    fn regularization_rows(&self, theta: &ModelParams) -> Option<DVector<f64>> {
        self.options
            .regularization
            .as_ref()
            .map(|g| g * DVector::from_row_slice(&theta.to_array()))
    }

    pub fn residuals(&self, theta: &ModelParams) -> Result<DVector<f64>> {
        let prices = self.model_prices(theta)?;
        let mut f = DVector::zeros(self.n_residuals());
        for (i, (p, q)) in prices.iter().zip(&self.quotes).enumerate() {
            f[i] = self.scales[i] * (p - q.price);
        }
        if let Some(r) = self.regularization_rows(theta) {
            f.rows_mut(self.quotes.len(), r.len()).copy_from(&r);
        }
        Ok(f)
    }

    pub fn residuals_and_jacobian(&self, theta: &ModelParams) -> Result<Residuals> {
        let priced = self.prices_and_gradients(theta)?;
        let nr = self.n_residuals();
        let mut f = DVector::zeros(nr);
        let mut j = DMatrix::zeros(nr, N_PARAMS);
        for (i, (p, q)) in priced.iter().zip(&self.quotes).enumerate() {
            f[i] = self.scales[i] * (p.price - q.price);
            for x in 0..N_PARAMS {
                j[(i, x)] = self.scales[i] * p.grad[x];
            }
        }
        if let Some(g) = &self.options.regularization {
            let r = self.regularization_rows(theta).expect("regularization present");
            let n = self.quotes.len();
            f.rows_mut(n, r.len()).copy_from(&r);
            j.view_mut((n, 0), (g.nrows(), N_PARAMS)).copy_from(g);
        }
        Ok(Residuals { f, j })
    }

    pub fn jacobian(&self, theta: &ModelParams) -> Result<DMatrix<f64>> {
        Ok(self.residuals_and_jacobian(theta)?.j)
    }

    /// `F(Θ) = ½ ‖f(Θ)‖²`.
    pub fn objective(&self, theta: &ModelParams) -> Result<f64> {
        Ok(0.5 * self.residuals(theta)?.norm_squared())
    }

    /// `(F, ∇F = Jᵀ f)`.
    pub fn objective_and_gradient(&self, theta: &ModelParams) -> Result<(f64, DVector<f64>)> {
        let r = self.residuals_and_jacobian(theta)?;
        Ok((r.objective(), r.gradient()))
    }

    /// `F(Θ)` on the open domain with `2κθ ≥ ε²`, `+∞` elsewhere or when
    /// pricing fails.
    pub fn objective_penalized(&self, theta: &ModelParams) -> f64 {
        if !theta.in_domain() || !theta.feller_satisfied() {
            return f64::INFINITY;
        }
        match self.objective(theta) {
            Ok(f) if f.is_finite() => f,
            _ => f64::INFINITY,
        }
    }
}

fn params(x: &DVector<f64>) -> Result<ModelParams> {
    ModelParams::from_slice(x.as_slice())
}

impl LeastSquares for CalibProblem {
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        CalibProblem::residuals(self, &params(x)?)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        CalibProblem::jacobian(self, &params(x)?)
    }
}

impl Objective for CalibProblem {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.objective(&params(x)?)
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.objective_and_gradient(&params(x)?)
    }
}

/// Adds `½ ‖ΓΘ‖²` to `F` and `ΓᵀΓΘ` to its gradient.
pub fn regularize(
    f: f64,
    grad: &DVector<f64>,
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
) -> (f64, DVector<f64>) {
    let gt = gamma * theta;
    (f + 0.5 * gt.norm_squared(), grad + gamma.transpose() * gt)
}
