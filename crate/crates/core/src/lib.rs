//! Transport-entropy inequalities on finite metric spaces.
//!
//! The crate evaluates and minimizes `F_a(nu) = alpha(a H(nu|mu)) - beta(T_c(nu, mu))`
//! over probability vectors, solves the underlying transport problems exactly,
//! and estimates the constants of the Talagrand, log-Sobolev and
//! transport-information inequalities.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod lab;
pub mod matrix;
pub mod measures;
pub mod metric;
pub mod numerics;
pub mod transport;
pub mod variational;

pub use error::{Error, Result};
pub use matrix::SquareMatrix;
pub use measures::{ConcentrationProfile, ProbVector};
pub use metric::{FiniteMetricSpace, PowerTypeCost, Profile, SlopeOperator};
pub use transport::TransportSolution;
pub use variational::{FunctionalSpec, MinimizationResult, ScalarProfile};
pub use lab::{ConstantsReport, SemiconcaveClass};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
