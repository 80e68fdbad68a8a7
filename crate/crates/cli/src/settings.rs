//! Run settings resolved from flags, the manifest and built-in defaults, in
//! that order of precedence. Every resolved value is logged with its source.

use std::fmt::Display;

use mmpca_core::{LambdaGrid, OptimizerConfig, DEFAULT_ZERO_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Edge threshold for the directed-R² graph in `analysis.json`.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.35;
pub const DEFAULT_GRID: &str = "logspace(e^-8,1,10)";
pub const DEFAULT_FLAGS: &str = "1111";
pub const DEFAULT_HOLDOUT: f64 = 0.1;

/// Settings a manifest may carry. Field names match the long flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub k_max: Option<usize>,
    pub lambda0: Option<f64>,
    pub lambda0_grid: Option<String>,
    pub penalty_flags: Option<String>,
    pub holdout_prob: Option<f64>,
    pub seed: Option<u64>,
    pub tol_grad: Option<f64>,
    pub max_iter: Option<usize>,
    pub zero_threshold: Option<f64>,
    pub directed_r2_edge_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Flag,
    Manifest,
    Default,
}

impl Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Manifest => "manifest",
            Source::Default => "default",
        })
    }
}

/// Picks the first present value and logs where it came from.
pub fn pick<T: Clone + std::fmt::Debug>(name: &str, flag: Option<T>, manifest: Option<T>, default: Option<T>) -> Option<T> {
    let (value, source) = match (flag, manifest) {
        (Some(v), _) => (Some(v), Source::Flag),
        (None, Some(v)) => (Some(v), Source::Manifest),
        (None, None) => (default, Source::Default),
    };
    match &value {
        Some(v) => log::info!("{name} = {v:?} ({source})"),
        None => log::info!("{name} unset"),
    }
    value
}

/// Parses a penalty switch string such as `1010`.
pub fn parse_flags(s: &str) -> CliResult<[bool; 4]> {
    mmpca_core::selection::parse_flags(s).map_err(|e| CliError::input(format!("--penalty-flags: {e}")))
}

/// Parses a number, also accepting `e^x` for `exp(x)`.
pub fn parse_number(s: &str) -> CliResult<f64> {
    let s = s.trim();
    let v = if let Some(exp) = s.strip_prefix("e^") {
        exp.trim_matches(|c| c == '(' || c == ')').parse::<f64>().map(f64::exp)
    } else {
        s.parse::<f64>()
    };
    v.map_err(|_| CliError::input(format!("not a number: '{s}'")))
}

/// Parses `logspace(lo,hi,n)` or a comma-separated list of `λ0` values.
pub fn parse_grid(spec: &str, flags: [bool; 4]) -> CliResult<LambdaGrid> {
    let s = spec.trim();
    let grid = if let Some(inner) = s.strip_prefix("logspace(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(CliError::input(format!("--lambda0-grid: expected logspace(lo,hi,n), got '{s}'")));
        }
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("--lambda0-grid: bad count '{}'", parts[2].trim())))?;
        LambdaGrid::logspace(flags, parse_number(parts[0])?, parse_number(parts[1])?, n)
    } else {
        let values = s.split(',').map(parse_number).collect::<CliResult<Vec<f64>>>()?;
        LambdaGrid::ray(flags, &values)
    };
    grid.map_err(|e| CliError::input(format!("--lambda0-grid: {e}")))
}

/// Optimizer and snapping settings shared by every command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommonFlags {
    pub seed: Option<u64>,
    pub tol_grad: Option<f64>,
    pub max_iter: Option<usize>,
    pub zero_threshold: Option<f64>,
    pub directed_r2_edge_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Common {
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub zero_threshold: f64,
    pub edge_threshold: f64,
}

pub fn resolve_common(flags: &CommonFlags, file: &FileSettings) -> CliResult<Common> {
    let mut optimizer = OptimizerConfig::default();
    optimizer.gradient_tolerance = pick(
        "tol-grad",
        flags.tol_grad,
        file.tol_grad,
        Some(optimizer.gradient_tolerance),
    )
    .expect("has default");
    optimizer.max_iterations =
        pick("max-iter", flags.max_iter, file.max_iter, Some(optimizer.max_iterations)).expect("has default");
    optimizer
        .validate()
        .map_err(|e| CliError::input(format!("optimizer settings: {e}")))?;
    let zero_threshold = pick(
        "zero-threshold",
        flags.zero_threshold,
        file.zero_threshold,
        Some(DEFAULT_ZERO_THRESHOLD),
    )
    .expect("has default");
    if !(zero_threshold >= 0.0 && zero_threshold.is_finite()) {
        return Err(CliError::input("--zero-threshold must be a finite nonnegative number"));
    }
    let edge_threshold = pick(
        "directed-r2-edge-threshold",
        flags.directed_r2_edge_threshold,
        file.directed_r2_edge_threshold,
        Some(DEFAULT_EDGE_THRESHOLD),
    )
    .expect("has default");
    Ok(Common {
        seed: pick("seed", flags.seed, file.seed, Some(0)).expect("has default"),
        optimizer,
        zero_threshold,
        edge_threshold,
    })
}
