//! Curves, tenor grids, swaption quotes and the frozen swap-rate geometry.
//!
//! Everything here depends on market data only. Once loaded, the objects are
//! immutable and shared freely between pricing threads.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Matching tolerance when mapping a year fraction onto a grid date.
const GRID_TOL: f64 = 1e-9;

/// Default displacement of forward and swap rates.
pub const DEFAULT_SHIFT: f64 = 0.1;

/// Default number of Brownian risk factors driving the forwards.
pub const DEFAULT_FACTORS: usize = 2;

/// Ordered tenor dates `T_0 < T_1 < ... < T_K` in years.
#[derive(Debug, Clone, PartialEq)]
pub struct TenorGrid {
    dates: Vec<f64>,
}

impl TenorGrid {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::Validation(
                "tenor grid needs at least two dates".into(),
            ));
        }
        if dates.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("tenor grid dates must be finite".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "tenor grid dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    /// Regular grid `T_j = j * spacing`, `j = 0..=count`.
    pub fn regular(spacing: f64, count: usize) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Validation("grid spacing must be positive".into()));
        }
        Self::new((0..=count).map(|j| j as f64 * spacing).collect())
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn date(&self, j: usize) -> f64 {
        self.dates[j]
    }

    /// Index of the last date, `K`.
    pub fn last_index(&self) -> usize {
        self.dates.len() - 1
    }

    /// `ΔT_j = T_{j+1} - T_j`.
    pub fn delta(&self, j: usize) -> f64 {
        self.dates[j + 1] - self.dates[j]
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.dates.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the grid date equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.dates.iter().position(|&d| (d - t).abs() <= GRID_TOL)
    }
}

/// Discount curve given by `(maturity, P(0, T))` pillars.
///
/// Discount factors are interpolated log-linearly between pillars, so the
/// instantaneous forward is piecewise constant. Beyond the last pillar the
/// last instantaneous forward is extended flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCurve {
    maturities: Vec<f64>,
    log_discounts: Vec<f64>,
}

impl ZeroCurve {
    /// Builds a curve from pillars. A pillar at `T = 0` with `P = 1` is
    /// prepended when absent.
    pub fn new(pillars: &[(f64, f64)]) -> Result<Self> {
        let mut maturities = Vec::with_capacity(pillars.len() + 1);
        let mut log_discounts = Vec::with_capacity(pillars.len() + 1);
        if pillars.first().map_or(true, |p| p.0 > 0.0) {
            maturities.push(0.0);
            log_discounts.push(0.0);
        }
        for &(t, p) in pillars {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Validation(format!("invalid pillar maturity {t}")));
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::Validation(format!(
                    "discount factor at {t} must be positive, got {p}"
                )));
            }
            if t == 0.0 && (p - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "discount factor at maturity 0 must be 1, got {p}"
                )));
            }
            if let Some(&last) = maturities.last() {
                if t <= last {
                    return Err(Error::Validation(format!(
                        "pillar maturities must be strictly increasing ({last} then {t})"
                    )));
                }
            }
            maturities.push(t);
            log_discounts.push(p.ln());
        }
        Ok(Self {
            maturities,
            log_discounts,
        })
    }

    /// Flat continuously-compounded curve `P(0,T) = exp(-rate T)` sampled on `pillars`.
    pub fn flat(rate: f64, pillars: &[f64]) -> Result<Self> {
        let pts: Vec<(f64, f64)> = pillars.iter().map(|&t| (t, (-rate * t).exp())).collect();
        Self::new(&pts)
    }

    pub fn pillars(&self) -> Vec<(f64, f64)> {
        self.maturities
            .iter()
            .zip(&self.log_discounts)
            .map(|(&t, &l)| (t, l.exp()))
            .collect()
    }

    pub fn last_maturity(&self) -> f64 {
        *self.maturities.last().unwrap()
    }

    /// `P(0, t)`.
    pub fn discount(&self, t: f64) -> Result<f64> {
        let last = self.last_maturity();
        if !t.is_finite() || t < 0.0 || (t > last && self.maturities.len() < 2) {
            return Err(Error::Range {
                maturity: t,
                min: 0.0,
                max: last,
            });
        }
        let n = self.maturities.len();
        if t >= last {
            if t == last {
                return Ok(self.log_discounts[n - 1].exp());
            }
            let slope = (self.log_discounts[n - 1] - self.log_discounts[n - 2])
                / (self.maturities[n - 1] - self.maturities[n - 2]);
            return Ok((self.log_discounts[n - 1] + slope * (t - last)).exp());
        }
        // first pillar strictly greater than t
        let hi = self.maturities.partition_point(|&m| m <= t);
        let lo = hi - 1;
        let (t0, t1) = (self.maturities[lo], self.maturities[hi]);
        let w = (t - t0) / (t1 - t0);
        let l = self.log_discounts[lo] * (1.0 - w) + self.log_discounts[hi] * w;
        Ok(l.exp())
    }
}

/// Simply-compounded forward rate `F_j(0)` over `[T_j, T_{j+1})`.
pub fn forward_rate(curve: &ZeroCurve, grid: &TenorGrid, j: usize) -> Result<f64> {
    if j >= grid.last_index() {
        return Err(Error::Range {
            maturity: grid.dates().get(j + 1).copied().unwrap_or(f64::INFINITY),
            min: 0.0,
            max: grid.date(grid.last_index()),
        });
    }
    let p0 = curve.discount(grid.date(j))?;
    let p1 = curve.discount(grid.date(j + 1))?;
    Ok((p0 / p1 - 1.0) / grid.delta(j))
}

/// Swap-rate quantities frozen at `t = 0` for the swap over `[T_m, T_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapGeometry {
    pub m: usize,
    pub n: usize,
    pub shift: f64,
    /// Spot swap rate `R_{m,n}(0)`.
    pub r0: f64,
    /// Annuity `B^S(0)`.
    pub annuity: f64,
    /// `T_0 ..= T_n`.
    pub dates: Vec<f64>,
    /// `P(0, T_j)` for `j = 0..=n`.
    pub discounts: Vec<f64>,
    /// `F_j(0)` for `j = 0..n`.
    pub forwards: Vec<f64>,
    /// `α_j(0)` for `j = m..n`, stored from index 0.
    pub alphas: Vec<f64>,
    /// `∂R/∂F_j` at `t = 0` for `j = m..n`.
    pub dr_dfwd: Vec<f64>,
    /// `ω_j(0)` for `j = m..n`.
    pub omegas: Vec<f64>,
}

impl SwapGeometry {
    pub fn maturity(&self) -> f64 {
        self.dates[self.m]
    }

    pub fn delta(&self, j: usize) -> f64 {
        self.dates[j + 1] - self.dates[j]
    }

    /// Forward-rate index range `m..n` covered by the swap.
    pub fn swap_indices(&self) -> std::ops::Range<usize> {
        self.m..self.n
    }

    /// Log-moneyness `ln((K+δ)/(R0+δ))` of a strike.
    pub fn log_moneyness(&self, strike: f64) -> Result<f64> {
        if !(strike + self.shift > 0.0) {
            return Err(Error::Domain(format!(
                "shifted strike {strike} + {} must be positive",
                self.shift
            )));
        }
        Ok(((strike + self.shift) / (self.r0 + self.shift)).ln())
    }
}

/// Computes the frozen geometry of the swap `[T_m, T_n]` with shift `δ`.
pub fn swap_geometry(
    curve: &ZeroCurve,
    grid: &TenorGrid,
    m: usize,
    n: usize,
    shift: f64,
) -> Result<SwapGeometry> {
    if m >= n || n > grid.last_index() {
        return Err(Error::Validation(format!(
            "swap indices must satisfy m < n <= K (m={m}, n={n}, K={})",
            grid.last_index()
        )));
    }
    if !(shift >= 0.0) {
        return Err(Error::Domain(format!("shift must be non-negative, got {shift}")));
    }
    let dates = grid.dates()[..=n].to_vec();
    let discounts = dates
        .iter()
        .map(|&t| curve.discount(t))
        .collect::<Result<Vec<_>>>()?;
    let forwards: Vec<f64> = (0..n)
        .map(|j| (discounts[j] / discounts[j + 1] - 1.0) / (dates[j + 1] - dates[j]))
        .collect();
    let annuity: f64 = (m..n)
        .map(|j| (dates[j + 1] - dates[j]) * discounts[j + 1])
        .sum();
    if !(annuity > 0.0) {
        return Err(Error::Domain("annuity must be positive".into()));
    }
    let r0 = (discounts[m] - discounts[n]) / annuity;
    if !(r0 + shift > 0.0) {
        return Err(Error::Domain(format!(
            "shifted swap rate R0 + δ = {} must be positive",
            r0 + shift
        )));
    }
    let alphas: Vec<f64> = (m..n)
        .map(|j| (dates[j + 1] - dates[j]) * discounts[j + 1] / annuity)
        .collect();
    let mut dr_dfwd = Vec::with_capacity(n - m);
    let mut running = 0.0;
    for (idx, j) in (m..n).enumerate() {
        let dt = dates[j + 1] - dates[j];
        dr_dfwd.push(alphas[idx] + dt / (1.0 + dt * forwards[j]) * running);
        running += alphas[idx] * (forwards[j] - r0);
    }
    let omegas = (m..n)
        .enumerate()
        .map(|(idx, j)| dr_dfwd[idx] * (forwards[j] + shift) / (r0 + shift))
        .collect();
    Ok(SwapGeometry {
        m,
        n,
        shift,
        r0,
        annuity,
        dates,
        discounts,
        forwards,
        alphas,
        dr_dfwd,
        omegas,
    })
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Payer swaption price under the normal (Bachelier) model.
pub fn bachelier_price(
    forward: f64,
    strike: f64,
    normal_vol: f64,
    expiry: f64,
    annuity: f64,
) -> Result<f64> {
    if !(normal_vol >= 0.0) || !(expiry > 0.0) || !(annuity > 0.0) {
        return Err(Error::Domain(format!(
            "bachelier inputs out of domain (vol={normal_vol}, T={expiry}, annuity={annuity})"
        )));
    }
    let sd = normal_vol * expiry.sqrt();
    if sd == 0.0 {
        return Ok(annuity * (forward - strike).max(0.0));
    }
    let d = (forward - strike) / sd;
    Ok(annuity * ((forward - strike) * norm_cdf(d) + sd * norm_pdf(d)))
}

/// Inter-forward correlation loadings: row `k` (1-based) is the unit vector `β_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMatrix {
    rows: Vec<Vec<f64>>,
    n_factors: usize,
}

impl BetaMatrix {
    pub fn new(rows: Vec<Vec<f64>>, n_factors: usize) -> Result<Self> {
        if n_factors == 0 {
            return Err(Error::Validation("number of factors must be positive".into()));
        }
        if rows.is_empty() {
            return Err(Error::Validation("beta matrix is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_factors {
                return Err(Error::Validation(format!(
                    "beta row {} has {} entries, expected {n_factors}",
                    i + 1,
                    row.len()
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::Validation(format!(
                    "beta row {} is not a unit vector (norm {norm})",
                    i + 1
                )));
            }
        }
        Ok(Self { rows, n_factors })
    }

    /// Smoothly decorrelating two-factor loadings `β_k = (cos φ_k, sin φ_k)`
    /// with `φ_k = max_angle (1 - exp(-decay (k-1)))`.
    pub fn two_factor(count: usize, max_angle: f64, decay: f64) -> Self {
        let rows = (1..=count)
            .map(|k| {
                let phi = max_angle * (1.0 - (-decay * (k as f64 - 1.0)).exp());
                vec![phi.cos(), phi.sin()]
            })
            .collect();
        Self { rows, n_factors: 2 }
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `β_k`, 1-based.
    pub fn get(&self, k: usize) -> Result<&[f64]> {
        if k == 0 || k > self.rows.len() {
            return Err(Error::Validation(format!(
                "beta vector {k} requested but only {} provided",
                self.rows.len()
            )));
        }
        Ok(&self.rows[k - 1])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// A loaded swaption quote with its market price.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaptionQuote {
    pub m: usize,
    pub n: usize,
    pub strike: f64,
    pub strike_offset_bps: f64,
    /// Market price; converted from `normal_vol` when the file carried a vol.
    pub price: f64,
    pub normal_vol: Option<f64>,
    pub weight: f64,
}

/// Options controlling how market files are interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub shift: f64,
    pub grid_spacing: f64,
    pub n_factors: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            shift: DEFAULT_SHIFT,
            grid_spacing: 1.0,
            n_factors: DEFAULT_FACTORS,
        }
    }
}

/// Curve, grid, quotes and correlation loadings as loaded from disk.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub curve: ZeroCurve,
    pub grid: TenorGrid,
    pub quotes: Vec<SwaptionQuote>,
    pub betas: BetaMatrix,
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    maturity_years: f64,
    discount: f64,
}

#[derive(Debug, Deserialize)]
struct QuoteRow {
    maturity: f64,
    tenor: f64,
    strike_offset_bps: f64,
    normal_vol: Option<f64>,
    price: Option<f64>,
    weight: f64,
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Parses the `maturity_years,discount` curve CSV.
pub fn parse_curve(text: &str, origin: &str) -> Result<ZeroCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut pillars = Vec::new();
    for rec in rdr.deserialize::<CurveRow>() {
        let row = rec.map_err(|e| parse_err(origin, csv_line(&e), e.to_string()))?;
        pillars.push((row.maturity_years, row.discount));
    }
    if pillars.is_empty() {
        return Err(Error::Validation(format!("{origin}: no curve pillars")));
    }
    ZeroCurve::new(&pillars)
}

/// Parses a headerless beta CSV, one unit vector per row.
pub fn parse_betas(text: &str, origin: &str, n_factors: usize) -> Result<BetaMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(origin, csv_line(&e), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(origin, line, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    BetaMatrix::new(rows, n_factors)
}

/// Parses the quotes CSV, converting normal vols to prices.
pub fn parse_quotes(
    text: &str,
    origin: &str,
    curve: &ZeroCurve,
    opts: &LoadOptions,
) -> Result<(TenorGrid, Vec<SwaptionQuote>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(origin, csv_line(&e), e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(origin, csv_line(&e), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: QuoteRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(origin, line, e.to_string()))?;
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{origin}: no quotes")));
    }
    let horizon = rows
        .iter()
        .map(|(_, r)| r.maturity + r.tenor)
        .fold(0.0_f64, f64::max);
    let count = (horizon / opts.grid_spacing).round() as usize;
    let grid = TenorGrid::regular(opts.grid_spacing, count.max(1))?;

    let mut quotes = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if !(row.weight > 0.0) {
            return Err(Error::Validation(format!(
                "{origin}:{line}: weight must be positive, got {}",
                row.weight
            )));
        }
        let m = grid.index_of(row.maturity).ok_or_else(|| {
            parse_err(origin, line, format!("maturity {} not on the tenor grid", row.maturity))
        })?;
        let n = grid.index_of(row.maturity + row.tenor).ok_or_else(|| {
            parse_err(origin, line, format!("tenor {} not on the tenor grid", row.tenor))
        })?;
        if m == 0 || n <= m {
            return Err(Error::Validation(format!(
                "{origin}:{line}: maturity and tenor must be positive"
            )));
        }
        let geom = swap_geometry(curve, &grid, m, n, opts.shift)?;
        let strike = geom.r0 + row.strike_offset_bps * 1e-4;
        let price = match (row.normal_vol, row.price) {
            (Some(_), Some(_)) => {
                return Err(Error::Validation(format!(
                    "{origin}:{line}: both normal_vol and price given"
                )))
            }
            (None, None) => {
                return Err(Error::Validation(format!(
                    "{origin}:{line}: one of normal_vol or price is required"
                )))
            }
            (Some(vol), None) => {
                bachelier_price(geom.r0, strike, vol, geom.maturity(), geom.annuity)?
            }
            (None, Some(p)) => p,
        };
        quotes.push(SwaptionQuote {
            m,
            n,
            strike,
            strike_offset_bps: row.strike_offset_bps,
            price,
            normal_vol: row.normal_vol,
            weight: row.weight,
        });
    }
    Ok((grid, quotes))
}

/// Loads curve, quotes and beta files.
pub fn load_market(
    curve_path: &Path,
    quotes_path: &Path,
    betas_path: &Path,
    opts: &LoadOptions,
) -> Result<MarketData> {
    let curve = parse_curve(&read_to_string(curve_path)?, &curve_path.display().to_string())?;
    let (grid, quotes) = parse_quotes(
        &read_to_string(quotes_path)?,
        &quotes_path.display().to_string(),
        &curve,
        opts,
    )?;
    let betas = parse_betas(
        &read_to_string(betas_path)?,
        &betas_path.display().to_string(),
        opts.n_factors,
    )?;
    Ok(MarketData {
        curve,
        grid,
        quotes,
        betas,
    })
}
