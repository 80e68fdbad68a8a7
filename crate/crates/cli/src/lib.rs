//! The `mmpca` command line: manifests and CSV input, solution bundles,
//! cross-validation, imputation and simulation studies.

pub mod bundle;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod settings;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
