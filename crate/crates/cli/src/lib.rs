//! Configuration and stage orchestration for the `kyleback` binary.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{run, Outcome};
