//! Learning time-delay dynamics with neural ordinary differential equations.
//!
//! The solution history of a delay differential equation is sampled on a
//! uniform mesh, turning the DDE into an ODE on the stacked history. A small
//! tanh network fed with linearly interpolated delayed values forms the
//! right-hand side of that ODE; the network weights and the delays are
//! trained jointly by differentiating through the RK4 integrator.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod csvfmt;
pub mod dataset;
pub mod dde;
pub mod discretization;
pub mod error;
pub mod gradcheck;
pub mod mlp;
pub mod node;
pub mod ode;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
