//! Multi-asset Kyle–Back equilibrium with a risk-averse informed trader.

pub mod cdf;
pub mod density;
pub mod error;
pub mod fixed_point;
pub mod gaussian;
pub mod grid;
pub mod linalg;
pub mod maps;
pub mod market;
pub mod potential;
pub mod quadrature;
pub mod sim;
pub mod stats;
pub mod transport;
pub mod value_function;

pub use error::{Error, Result};
