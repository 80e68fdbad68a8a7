//! Command-line definitions and the four commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmpca_core::objective::DEFAULT_TAU;
use mmpca_core::{
    cross_validate, fit_model, impute_denormalized, normalize, CvConfig, Dataset, FitConfig, NormalizationPolicy,
    NormalizationRecord, RefitStart, Solution,
};
use mmpca_sim::{derive_seeds, run_studies, MethodConfig, SimSpec, Study};
use serde::Serialize;

use crate::bundle::{self, load_bundle, write_bundle, RunInfo};
use crate::error::{CliError, CliResult, PathContext};
use crate::manifest::{load_dataset, load_manifest, LoadedManifest};
use crate::settings::{
    parse_flags, parse_grid, parse_number, pick, resolve_common, Common, CommonFlags, FileSettings, DEFAULT_FLAGS,
    DEFAULT_GRID, DEFAULT_HOLDOUT,
};

#[derive(Debug, Parser)]
#[command(name = "mmpca", version, about = "Penalized multi-group multi-view low-rank factorization")]
pub struct Cli {
    /// Worker threads for CV candidates and simulation runs (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log resolved settings and optimizer progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model at a fixed λ and write a solution bundle.
    Fit(FitArgs),
    /// Select λ by element hold-out and write the table and final bundle.
    Cv(CvArgs),
    /// Run a simulation study and write per-run and summary tables.
    Simulate(SimulateArgs),
    /// Predict a view pair from a bundle, in the input scale.
    Impute(ImputeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    /// Master seed for the hold-out split and any randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop when the gradient ∞-norm falls below this.
    #[arg(long)]
    pub tol_grad: Option<f64>,
    /// Optimizer iteration budget.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Magnitude below which D and V·D entries become exact zeros.
    #[arg(long)]
    pub zero_threshold: Option<f64>,
    /// Smallest directed R² reported as an edge in analysis.json.
    #[arg(long)]
    pub directed_r2_edge_threshold: Option<f64>,
}

impl OptimizerArgs {
    fn flags(&self) -> CommonFlags {
        CommonFlags {
            seed: self.seed,
            tol_grad: self.tol_grad,
            max_iter: self.max_iter,
            zero_threshold: self.zero_threshold,
            directed_r2_edge_threshold: self.directed_r2_edge_threshold,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// JSON manifest listing views, matrix CSVs and settings.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum rank k.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Common penalty level; accepts `e^x`.
    #[arg(long)]
    pub lambda0: Option<String>,
    /// Active penalties as four 0/1 digits (integration, rank, loading ℓ1, loading groups).
    #[arg(long)]
    pub penalty_flags: Option<String>,
    #[command(flatten)]
    pub common: OptimizerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefitArg {
    Initial,
    Candidate,
    Best,
}

impl From<RefitArg> for RefitStart {
    fn from(r: RefitArg) -> Self {
        match r {
            RefitArg::Initial => RefitStart::Initial,
            RefitArg::Candidate => RefitStart::Candidate,
            RefitArg::Best => RefitStart::Best,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    /// JSON manifest listing views, matrix CSVs and settings.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bundle directory to write; cv.csv goes there too.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum rank k.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// `logspace(lo,hi,n)` or a comma-separated list of λ0 values.
    #[arg(long)]
    pub lambda0_grid: Option<String>,
    /// Active penalties as four 0/1 digits.
    #[arg(long)]
    pub penalty_flags: Option<String>,
    /// Probability that an observed element is held out.
    #[arg(long)]
    pub holdout_prob: Option<f64>,
    /// Start of the final full-data fit.
    #[arg(long, value_enum, default_value = "initial")]
    pub refit_start: RefitArg,
    #[command(flatten)]
    pub common: OptimizerArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Study number: 1 (partial sharing), 2 (joint vs individual) or 3 (sparse loadings).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub study: u8,
    /// Signal-to-noise ratios (studies 1 and 3), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// Size regimes of study 2 as `NxP`; repeatable.
    #[arg(long, value_delimiter = ',')]
    pub regime: Option<Vec<String>>,
    /// Joint proportions of study 2, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p_joint: Option<Vec<f64>>,
    /// Repetitions per setting.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Master seed; each run derives its own seeds from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum rank k.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// `logspace(lo,hi,n)` or a comma-separated list of λ0 values.
    #[arg(long)]
    pub lambda0_grid: Option<String>,
    /// Active penalties as four 0/1 digits.
    #[arg(long)]
    pub penalty_flags: Option<String>,
    /// Directory for results.csv, truth.jsonl and method.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    /// Bundle directory written by `fit` or `cv`.
    #[arg(long)]
    pub bundle: PathBuf,
    /// View whose items index the rows.
    #[arg(long)]
    pub rows: String,
    /// View whose items index the columns.
    #[arg(long)]
    pub cols: String,
    /// CSV file for the predicted matrix.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line inside a thread pool sized by `--jobs`.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::input("--jobs must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Impute(a) => cmd_impute(a),
    })
}

/// Loaded input plus the settings every model command needs.
struct Prepared {
    loaded: LoadedManifest,
    normalized: Dataset<f64>,
    record: NormalizationRecord<f64>,
    policy: NormalizationPolicy,
    common: Common,
    k: usize,
    flags: [bool; 4],
}

fn prepare(manifest: &Path, common: &OptimizerArgs, k_max: Option<usize>, flags: Option<&String>) -> CliResult<Prepared> {
    let loaded = load_manifest(manifest)?;
    let dataset = load_dataset(&loaded)?;
    let file: &FileSettings = &loaded.manifest.settings;
    let common = resolve_common(&common.flags(), file)?;
    let k = pick("k-max", k_max, file.k_max, None)
        .ok_or_else(|| CliError::input("--k-max is required (flag or settings.k_max in the manifest)"))?;
    if k == 0 {
        return Err(CliError::input("--k-max must be at least 1"));
    }
    let flags = pick(
        "penalty-flags",
        flags.cloned(),
        file.penalty_flags.clone(),
        Some(DEFAULT_FLAGS.to_string()),
    )
    .expect("has default");
    let flags = parse_flags(&flags)?;
    let policy = match &loaded.manifest.normalization {
        Some(p) => {
            log::info!("normalization = {p:?} (manifest)");
            p.clone()
        }
        None => {
            let p = NormalizationPolicy::default();
            log::info!("normalization = {p:?} (default)");
            p
        }
    };
    let (normalized, record) = normalize(&dataset, &policy)?;
    Ok(Prepared {
        loaded,
        normalized,
        record,
        policy,
        common,
        k,
        flags,
    })
}

fn fit_config(common: &Common) -> FitConfig {
    FitConfig {
        optimizer: common.optimizer.clone(),
        tau: DEFAULT_TAU,
        zero_threshold: common.zero_threshold,
    }
}

fn lambda_of(flags: [bool; 4], lambda0: f64) -> [f64; 4] {
    flags.map(|b| if b { lambda0 } else { 0.0 })
}

fn report_line(out: &Path, solution: &Solution<f64>, objective: f64) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "effective rank {} of {}, objective {objective:.6e}; bundle written to {}",
        mmpca_core::effective_rank(solution),
        solution.k(),
        out.display()
    )
    .map_err(|e| CliError::Internal(e.to_string()))
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let p = prepare(&args.manifest, &args.common, args.k_max, args.penalty_flags.as_ref())?;
    let lambda0 = args.lambda0.as_deref().map(parse_number).transpose()?;
    let lambda0 = pick("lambda0", lambda0, p.loaded.manifest.settings.lambda0, Some(0.0)).expect("has default");
    let lambda = lambda_of(p.flags, lambda0);
    let fit = fit_model(&p.normalized, p.k, lambda, &fit_config(&p.common))?;
    let solution = Solution::new(&p.normalized, fit.params, p.common.zero_threshold)?.with_normalization(p.record);
    let info = RunInfo {
        lambda,
        lambda0: Some(lambda0),
        penalty_flags: Some(p.flags),
        tau: DEFAULT_TAU,
        seed: p.common.seed,
        edge_threshold: p.common.edge_threshold,
        policy: p.policy,
    };
    write_bundle(&args.out, &solution, &fit.report, &info)?;
    report_line(&args.out, &solution, fit.report.final_objective)
}

#[derive(Serialize)]
struct CvRow {
    lambda0: f64,
    lambda_1: f64,
    lambda_2: f64,
    lambda_3: f64,
    lambda_4: f64,
    test_error: Option<f64>,
    iterations: Option<usize>,
    termination: Option<String>,
    chosen: bool,
    failure: Option<String>,
}

pub fn cmd_cv(args: &CvArgs) -> CliResult<()> {
    let p = prepare(&args.manifest, &args.common, args.k_max, args.penalty_flags.as_ref())?;
    let file = &p.loaded.manifest.settings;
    let grid = pick(
        "lambda0-grid",
        args.lambda0_grid.clone(),
        file.lambda0_grid.clone(),
        Some(DEFAULT_GRID.to_string()),
    )
    .expect("has default");
    let grid = parse_grid(&grid, p.flags)?;
    let holdout = pick("holdout-prob", args.holdout_prob, file.holdout_prob, Some(DEFAULT_HOLDOUT)).expect("has default");
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(CliError::input("--holdout-prob must lie strictly between 0 and 1"));
    }
    log::info!("refit-start = {:?} (flag or default)", args.refit_start);
    let config = CvConfig {
        fit: fit_config(&p.common),
        holdout_probability: holdout,
        seed: p.common.seed,
        warm_start: false,
        refit: args.refit_start.into(),
    };
    let result = cross_validate(&p.normalized, p.k, &grid, &config)?;
    std::fs::create_dir_all(&args.out).with_path(&args.out)?;
    let cv_path = args.out.join("cv.csv");
    let mut w = csv::Writer::from_path(&cv_path).map_err(|e| CliError::at(&cv_path, e))?;
    for (i, c) in result.candidates.iter().enumerate() {
        let l = c.candidate.lambda;
        w.serialize(CvRow {
            lambda0: c.candidate.lambda0,
            lambda_1: l[0],
            lambda_2: l[1],
            lambda_3: l[2],
            lambda_4: l[3],
            test_error: c.test_error,
            iterations: c.report.as_ref().map(|r| r.iterations),
            termination: c.report.as_ref().map(|r| format!("{:?}", r.termination).to_lowercase()),
            chosen: i == result.chosen,
            failure: c.failure.clone(),
        })
        .map_err(|e| CliError::at(&cv_path, e))?;
    }
    w.flush().with_path(&cv_path)?;
    let chosen = result.chosen_candidate();
    let info = RunInfo {
        lambda: chosen.lambda,
        lambda0: Some(chosen.lambda0),
        penalty_flags: Some(p.flags),
        tau: DEFAULT_TAU,
        seed: p.common.seed,
        edge_threshold: p.common.edge_threshold,
        policy: p.policy,
    };
    let solution = result.solution.with_normalization(p.record);
    write_bundle(&args.out, &solution, &result.report, &info)?;
    log::info!("chose λ0 = {}", chosen.lambda0);
    report_line(&args.out, &solution, result.report.final_objective)
}

fn parse_regime(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::input(format!("--regime: expected NxP, got '{s}'"));
    let (n, p) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, p.trim().parse().map_err(|_| bad())?))
}

/// The settings a `simulate` invocation expands to.
pub fn study_settings(args: &SimulateArgs) -> CliResult<Vec<Study>> {
    let snrs = || args.snr.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
    let studies: Vec<Study> = match args.study {
        1 => snrs().into_iter().map(|snr| Study::Sim1 { snr }).collect(),
        2 => {
            let regimes = match &args.regime {
                Some(r) => r.iter().map(|s| parse_regime(s)).collect::<CliResult<Vec<_>>>()?,
                None => vec![(100, 25), (10, 40)],
            };
            let pjs = args.p_joint.clone().unwrap_or_else(|| vec![0.0, 0.5, 1.0]);
            regimes
                .iter()
                .flat_map(|&(n, p)| pjs.iter().map(move |&p_joint| Study::Sim2 { n, p, p_joint }))
                .collect()
        }
        _ => snrs().into_iter().map(|snr| Study::Sim3 { snr }).collect(),
    };
    if studies.is_empty() {
        return Err(CliError::input("no study settings given"));
    }
    for s in &studies {
        s.validate()?;
    }
    Ok(studies)
}

/// Default method of each study with command-line overrides applied.
pub fn study_method(args: &SimulateArgs) -> CliResult<MethodConfig> {
    let mut method = match args.study {
        1 => MethodConfig::sim1(),
        2 => MethodConfig::sim2(),
        _ => MethodConfig::sim3(args.k_max.unwrap_or(2)),
    };
    if let Some(k) = args.k_max {
        if k == 0 {
            return Err(CliError::input("--k-max must be at least 1"));
        }
        method.k = k;
    }
    let flags = match &args.penalty_flags {
        Some(f) => Some(parse_flags(f)?),
        None => None,
    };
    if args.lambda0_grid.is_some() || flags.is_some() {
        let flags = flags.unwrap_or_else(|| {
            let c = method.grid.candidates()[0];
            c.lambda.map(|l| l > 0.0)
        });
        method.grid = parse_grid(args.lambda0_grid.as_deref().unwrap_or(DEFAULT_GRID), flags)?;
    }
    Ok(method)
}

#[derive(Serialize)]
struct TruthLine {
    setting: String,
    run: usize,
    data_seed: u64,
    truth: mmpca_sim::TruthDump,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.runs == 0 {
        return Err(CliError::input("--runs must be at least 1"));
    }
    let studies = study_settings(args)?;
    let method = study_method(args)?;
    let specs: Vec<SimSpec> = studies
        .iter()
        .map(|&study| SimSpec {
            study,
            runs: args.runs,
            seed: args.seed,
        })
        .collect();
    let table = run_studies(&specs, &method)?;
    std::fs::create_dir_all(&args.out).with_path(&args.out)?;
    let results = args.out.join("results.csv");
    let file = std::fs::File::create(&results).with_path(&results)?;
    table.write_csv(file).map_err(|e| CliError::at(&results, e))?;

    let truth_path = args.out.join("truth.jsonl");
    let mut truth = String::new();
    for study in &studies {
        for run in 0..args.runs {
            let (data_seed, _) = derive_seeds(args.seed, run);
            let line = TruthLine {
                setting: study.label(),
                run,
                data_seed,
                truth: study.truth(data_seed)?,
            };
            truth.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))?);
            truth.push('\n');
        }
    }
    std::fs::write(&truth_path, truth).with_path(&truth_path)?;

    let method_path = args.out.join("method.json");
    let text = serde_json::to_string_pretty(&method).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&method_path, text + "\n").with_path(&method_path)?;

    let mut stdout = std::io::stdout().lock();
    for study in &studies {
        let s = table.summary(study);
        writeln!(
            stdout,
            "{}: {} ok, {} failed, {} excluded",
            study.label(),
            s.ok,
            s.failed,
            s.excluded
        )
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

pub fn cmd_impute(args: &ImputeArgs) -> CliResult<()> {
    let loaded = load_bundle(&args.bundle)?;
    let sol = &loaded.solution;
    let index = |name: &str| {
        sol.graph().view_index(name).ok_or_else(|| {
            let known: Vec<&str> = sol.graph().views().iter().map(|v| v.name.as_str()).collect();
            CliError::input(format!("unknown view '{name}' (bundle has {})", known.join(", ")))
        })
    };
    let (i, j) = (index(&args.rows)?, index(&args.cols)?);
    let record = sol.normalization().expect("bundles carry a record");
    let x = impute_denormalized(sol, i, j, record)?;
    bundle::write_imputed(&args.out, &x)
}

