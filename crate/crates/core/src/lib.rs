//! Arbitrage-free option price interpolation with the piecewise-linear
//! local variance gamma model.

pub mod banded;
pub mod black;
pub mod calibration;
mod clock;
pub mod dearbitrage;
pub mod error;
pub mod fixtures;
pub mod hyperbolic;
pub mod io;
pub mod lm;
pub mod pdde;
pub mod repro;
pub mod surface;

pub use error::{LlvgError, Result};
pub use pdde::{solve_theta, IntervalCoefficients, LVGSlice, LocalVarianceGrid, Side};
