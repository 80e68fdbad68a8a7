//! Penalty selection by element hold-out cross-validation.

use crate::analysis::Solution;
use crate::data::{holdout_split, Dataset, Holdout};
use crate::error::{Error, Result};
use crate::initialize::init_global;
use crate::objective::{scale_lambda, ModelParams, Objective, Penalties, DEFAULT_TAU};
use crate::optimizer::{fit, OptimizerConfig, OptimizerReport};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One penalty setting `λ = (λ0 b1, …, λ0 b4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda0: f64,
    pub lambda: [f64; 4],
}

/// Candidate penalty settings in increasing order of `λ0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    candidates: Vec<Candidate>,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl LambdaGrid {
    /// The ray `λ0 · (b1, b2, b3, b4)` for each `λ0` in `values`.
    pub fn ray(flags: [bool; 4], values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("grid values must be finite and nonnegative".into()));
        }
        let mut values = values.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let candidates = values
            .into_iter()
            .map(|l0| Candidate {
                lambda0: l0,
                lambda: flags.map(|b| l0 * flag(b)),
            })
            .collect();
        Self::from_candidates(candidates)
    }

    /// `n` values of `λ0` spaced evenly on a log scale from `lo` to `hi`.
    pub fn logspace(flags: [bool; 4], lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && n >= 1) {
            return Err(Error::Parameter(format!("invalid log grid from {lo} to {hi} with {n} values")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let values: Vec<f64> = (0..n)
            .map(|t| {
                if n == 1 {
                    lo
                } else {
                    (a + (b - a) * t as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        Self::ray(flags, &values)
    }

    /// User-supplied λ vectors. `λ0` is taken as the largest entry.
    pub fn explicit(lambdas: &[[f64; 4]]) -> Result<Self> {
        if lambdas.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("penalty weights must be finite and nonnegative".into()));
        }
        let mut candidates: Vec<Candidate> = lambdas
            .iter()
            .map(|&lambda| Candidate {
                lambda0: lambda.iter().copied().fold(0.0, f64::max),
                lambda,
            })
            .collect();
        candidates.sort_by(|a, b| a.lambda0.total_cmp(&b.lambda0));
        Self::from_candidates(candidates)
    }

    fn from_candidates(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Parameter("the penalty grid is empty".into()));
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Parses `b1b2b3b4` activity flags such as `"1011"`.
pub fn parse_flags(s: &str) -> Result<[bool; 4]> {
    let bits: Vec<char> = s.trim().chars().collect();
    if bits.len() != 4 || bits.iter().any(|c| *c != '0' && *c != '1') {
        return Err(Error::Parameter(format!("penalty flags must be four 0/1 digits, got {s:?}")));
    }
    Ok([bits[0] == '1', bits[1] == '1', bits[2] == '1', bits[3] == '1'])
}

/// Settings shared by plain fits and cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub optimizer: OptimizerConfig,
    pub tau: f64,
    pub zero_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            tau: DEFAULT_TAU,
            zero_threshold: crate::analysis::DEFAULT_ZERO_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fit<T: Scalar> {
    pub params: ModelParams<T>,
    pub report: OptimizerReport,
}

fn penalties<T: Scalar>(lambda: [f64; 4], tau: f64) -> Penalties<T> {
    Penalties::new(lambda.map(T::lit)).with_tau(T::lit(tau))
}

/// Minimizes the objective from `start` with λ already in data units.
fn fit_scaled<T: Scalar>(
    dataset: &Dataset<T>,
    start: &ModelParams<T>,
    scaled: [T; 4],
    config: &FitConfig,
) -> Result<Fit<T>> {
    let pen = Penalties::new(scaled).with_tau(T::lit(config.tau));
    let objective = Objective::with_unscaled_lambda(dataset, start.k(), pen)?;
    let (params, report) = fit(&objective, start, &config.optimizer)?;
    Ok(Fit { params, report })
}

/// Initializes with all components joint and minimizes the penalized
/// objective at `λ` (before data scaling).
pub fn fit_model<T: Scalar>(dataset: &Dataset<T>, k: usize, lambda: [f64; 4], config: &FitConfig) -> Result<Fit<T>> {
    let pen = penalties::<T>(lambda, config.tau);
    pen.validate()?;
    let start = init_global(dataset, k)?;
    fit_scaled(dataset, &start, scale_lambda(pen.lambda, dataset), config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub fit: FitConfig,
    pub holdout_probability: f64,
    pub seed: u64,
    /// Start each candidate from the previous one's solution along the grid
    /// instead of from the common initialization.
    pub warm_start: bool,
    pub refit: RefitStart,
}

/// Starting point of the final full-data fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitStart {
    /// A fresh `init_global` on the full data.
    Initial,
    /// The chosen candidate's training solution.
    Candidate,
    /// Both of the above; keeps the fit with the lower full-data objective
    /// (ties to `Initial`).
    #[default]
    Best,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            holdout_probability: 0.1,
            seed: 0,
            warm_start: false,
            refit: RefitStart::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    /// `Σ (X − X̂)²` over held-out elements; `None` if the fit failed.
    pub test_error: Option<f64>,
    pub report: Option<OptimizerReport>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct CvResult<T: Scalar> {
    pub candidates: Vec<CandidateResult>,
    pub chosen: usize,
    pub holdout: Holdout,
    pub params: ModelParams<T>,
    pub report: OptimizerReport,
    pub solution: Solution<T>,
}

impl<T: Scalar> CvResult<T> {
    pub fn chosen_candidate(&self) -> Candidate {
        self.candidates[self.chosen].candidate
    }
}

/// Squared error of `params` on the held-out elements of `dataset`.
pub fn holdout_error<T: Scalar>(dataset: &Dataset<T>, params: &ModelParams<T>, holdout: &Holdout) -> T {
    let frames = params.frames();
    let mut cache: Vec<Option<nalgebra::DMatrix<T>>> = vec![None; dataset.n_matrices()];
    holdout.elements.iter().fold(T::zero(), |acc, &(m, r, c)| {
        let xhat = cache[m].get_or_insert_with(|| {
            let (i, j) = dataset.graph().links()[m];
            crate::objective::reconstruct(frames[i].matrix(), params.d(i), params.d(j), frames[j].matrix())
        });
        let e = dataset.matrix(m).values()[(r, c)] - xhat[(r, c)];
        acc + e * e
    })
}

/// Fits every grid candidate on a training copy with a shared random set of
/// elements withheld, picks the one with the least hold-out error (ties to
/// the smaller `λ0`) and refits it on all data.
pub fn cross_validate<T: Scalar>(
    dataset: &Dataset<T>,
    k: usize,
    grid: &LambdaGrid,
    config: &CvConfig,
) -> Result<CvResult<T>> {
    let (train, holdout) = holdout_split(dataset, config.holdout_probability, config.seed)?;
    let start = init_global(&train, k)?;
    let scaled = |c: &Candidate| {
        let pen = penalties::<T>(c.lambda, config.fit.tau);
        pen.validate().map(|_| scale_lambda(pen.lambda, dataset))
    };
    let evaluate = |c: &Candidate, from: &ModelParams<T>| -> (CandidateResult, Option<ModelParams<T>>) {
        match scaled(c).and_then(|l| fit_scaled(&train, from, l, &config.fit)) {
            Ok(f) => {
                let err = holdout_error(dataset, &f.params, &holdout).as_f64();
                let ok = err.is_finite();
                (
                    CandidateResult {
                        candidate: *c,
                        test_error: ok.then_some(err),
                        report: Some(f.report),
                        failure: (!ok).then(|| "non-finite hold-out error".to_string()),
                    },
                    Some(f.params),
                )
            }
            Err(e) => {
                log::warn!("candidate λ0 = {} failed: {e}", c.lambda0);
                (
                    CandidateResult {
                        candidate: *c,
                        test_error: None,
                        report: None,
                        failure: Some(e.to_string()),
                    },
                    None,
                )
            }
        }
    };
    let (results, fitted): (Vec<CandidateResult>, Vec<Option<ModelParams<T>>>) = if config.warm_start {
        let mut from = start.clone();
        grid.candidates()
            .iter()
            .map(|c| {
                let (r, p) = evaluate(c, &from);
                if let Some(p) = &p {
                    from = p.clone();
                }
                (r, p)
            })
            .unzip()
    } else {
        grid.candidates().par_iter().map(|c| evaluate(c, &start)).unzip()
    };
    for r in &results {
        log::info!("λ0 = {:.4e}: hold-out error {:?}", r.candidate.lambda0, r.test_error);
    }
    let chosen = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.test_error.map(|e| (i, e)))
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::AllCandidatesFailed)?;
    let full = refit(dataset, k, results[chosen].candidate.lambda, fitted[chosen].as_ref(), config)?;
    let solution = Solution::new(dataset, full.params.clone(), T::lit(config.fit.zero_threshold))?;
    Ok(CvResult {
        candidates: results,
        chosen,
        holdout,
        params: full.params,
        report: full.report,
        solution,
    })
}

fn refit<T: Scalar>(
    dataset: &Dataset<T>,
    k: usize,
    lambda: [f64; 4],
    trained: Option<&ModelParams<T>>,
    config: &CvConfig,
) -> Result<Fit<T>> {
    let trained = trained.ok_or(Error::AllCandidatesFailed)?;
    let from_candidate = || {
        let pen = penalties::<T>(lambda, config.fit.tau);
        fit_scaled(dataset, trained, scale_lambda(pen.lambda, dataset), &config.fit)
    };
    match config.refit {
        RefitStart::Initial => fit_model(dataset, k, lambda, &config.fit),
        RefitStart::Candidate => from_candidate(),
        RefitStart::Best => {
            let a = fit_model(dataset, k, lambda, &config.fit)?;
            let b = from_candidate()?;
            let better = b.report.final_objective < a.report.final_objective;
            log::info!(
                "refit objective {:.6e} from the initialization, {:.6e} from the chosen candidate",
                a.report.final_objective,
                b.report.final_objective
            );
            Ok(if better { b } else { a })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_grid_is_sorted_and_masked() {
        let g = LambdaGrid::ray([true, false, true, false], &[1.0, 0.5]).unwrap();
        assert_eq!(g.candidates()[0].lambda, [0.5, 0.0, 0.5, 0.0]);
        assert_eq!(g.candidates()[1].lambda0, 1.0);
    }

    #[test]
    fn logspace_matches_endpoints() {
        let g = LambdaGrid::logspace([true; 4], (-8f64).exp(), 1.0, 10).unwrap();
        assert_eq!(g.len(), 10);
        let c = g.candidates();
        assert!((c[0].lambda0 - (-8f64).exp()).abs() < 1e-15);
        assert!((c[9].lambda0 - 1.0).abs() < 1e-12);
        for w in c.windows(2) {
            assert!((w[1].lambda0.ln() - w[0].lambda0.ln() - 8.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(LambdaGrid::ray([true; 4], &[]).is_err());
        assert!(LambdaGrid::ray([true; 4], &[-1.0]).is_err());
        assert!(LambdaGrid::logspace([true; 4], 0.0, 1.0, 3).is_err());
        let e = LambdaGrid::explicit(&[[0.0, 2.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(e.candidates()[0].lambda0, 1.0);
    }

    #[test]
    fn flags_parse() {
        assert_eq!(parse_flags("1010").unwrap(), [true, false, true, false]);
        assert!(parse_flags("10").is_err());
        assert!(parse_flags("10a0").is_err());
    }
}
