//! Configuration, experiment orchestration and reporting for the ks-para solver.

pub mod commands;
pub mod config;
pub mod fit;
pub mod io;
pub mod line;
pub mod studies;
pub mod svg;

pub use config::{RunConfig, SigmaSpec};
pub use studies::{run_all, Bundle, Outcome, Study};
