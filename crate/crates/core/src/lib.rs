//! Credit portfolio loss distributions in the Merton structural model when
//! asset correlations fluctuate according to a Wishart ensemble.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: Bessel functions, Gauss rules, root finding, eigensolver.
//! * [`ensemble_returns`]: the ensemble-averaged return densities and exact samplers.
//! * [`portfolio_loss`]: Merton losses, conditional moments, the averaged loss
//!   density for finite portfolios and its infinite-portfolio limit.
//! * [`montecarlo`]: a brute-force simulation of the full model used as an oracle.
//! * [`calibration`]: estimation of the mean correlation `c`, the fluctuation
//!   strength `N` and per-asset drift/volatility from a price panel.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod calibration;
pub mod ensemble_returns;
pub mod error;
pub mod montecarlo;
pub mod numerics;
pub mod portfolio_loss;

pub use error::{Error, Result};
