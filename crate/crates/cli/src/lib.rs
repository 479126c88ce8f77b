//! Command-line campaigns on top of the `spde_mlmc` library: field dumps,
//! variance maps, covariance checks, Darcy solves and MLMC runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod spe10;

pub use error::CliError;
