//! Pricing and calibration of payer swaptions under the displaced-diffusion
//! stochastic-volatility LIBOR market model.
//!
//! The swap rate dynamics are frozen into a Heston-type model with
//! piecewise-constant coefficients. Prices come from the characteristic
//! function of the log shifted swap rate, integrated with Gauss-Laguerre
//! quadrature; the same sweep also yields the analytical gradient of every
//! price with respect to the eight model parameters, which drives the
//! gradient-based calibrators in [`optim`].
//!
//! Module map:
//!
//! - [`market`]: curves, tenor grids, quotes and the frozen swap geometry.
//! - [`model`]: parameter vector, volatility parametrization, segment coefficients.
//! - [`charfn`]: the two equivalent Riccati recursions for the moment generating function.
//! - [`gradient`]: analytical gradient of the log moment generating function.
//! - [`pricer`]: quadrature, prices and price gradients.
//! - [`calib`]: residuals, Jacobian and penalized objective.
//! - [`optim`]: Nelder-Mead, bounded BFGS and the Levenberg-Marquardt family.
//! - [`bench`]: random starts, method matrix and reports.

pub mod bench;
pub mod calib;
pub mod charfn;
mod error;
pub mod gradient;
pub mod market;
pub mod model;
pub mod optim;
pub mod pricer;

pub use error::{Error, Result};

pub use num_complex::Complex64;
