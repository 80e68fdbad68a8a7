//! Repeated simulation runs with per-run metrics and per-setting summaries.
//!
//! Each run draws its data seed and its hold-out seed from a ChaCha stream
//! keyed by the master seed and the run index, so a table does not depend on
//! how runs are scheduled across threads.

use std::io::Write;

use mmpca_core::optimizer::Memory;
use mmpca_core::{
    cross_validate, effective_rank, impute, impute_denormalized, normalize, CvConfig, Dataset, LambdaGrid,
    NormalizationPolicy, Solution,
};
use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generators::{gen_sim1, gen_sim2, gen_sim3, stack_rows, top_right_singular_vector, TruthDump};
use crate::metrics::{joint_direction_accuracy, loading_mcc, quantile, structure_rmse, support_pattern};
use crate::SimError;

/// One simulation setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum Study {
    Sim1 { snr: f64 },
    Sim2 { n: usize, p: usize, p_joint: f64 },
    Sim3 { snr: f64 },
}

impl Study {
    pub fn id(&self) -> u8 {
        match self {
            Study::Sim1 { .. } => 1,
            Study::Sim2 { .. } => 2,
            Study::Sim3 { .. } => 3,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Study::Sim1 { snr } | Study::Sim3 { snr } => format!("snr={snr}"),
            Study::Sim2 { n, p, p_joint } => format!("n={n};p={p};pj={p_joint}"),
        }
    }

    /// Metric columns reported for this study, in table order.
    pub fn metrics(&self) -> &'static [&'static str] {
        match self {
            Study::Sim1 { .. } => &["structure_rmse", "exact_structure", "signal_error", "effective_rank"],
            Study::Sim2 { .. } => &[
                "joint_components",
                "rank_1",
                "rank_2",
                "rank_3",
                "mmpca_accuracy",
                "pca_accuracy",
            ],
            Study::Sim3 { .. } => &["mcc", "mcc_degenerate", "effective_rank"],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            Study::Sim1 { snr } | Study::Sim3 { snr } => snr > 0.0 && snr.is_finite(),
            Study::Sim2 { n, p, p_joint } => n >= 3 && p >= 1 && (0.0..=1.0).contains(&p_joint),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid(format!("bad setting {}", self.label())))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub study: Study,
    pub runs: usize,
    pub seed: u64,
}

/// How each run is fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub k: usize,
    pub grid: LambdaGrid,
    pub cv: CvConfig,
    pub normalization: NormalizationPolicy,
}

impl MethodConfig {
    /// Ten `λ0` values log-spaced over `[e^-8, 1]` with the given penalties
    /// active, and the data only rescaled (centering would move the planted
    /// structure).
    pub fn new(k: usize, flags: [bool; 4]) -> Result<Self, SimError> {
        Ok(Self {
            k,
            grid: LambdaGrid::logspace(flags, (-8f64).exp(), 1.0, 10)?,
            cv: CvConfig::default(),
            normalization: NormalizationPolicy::rescale_only(),
        })
    }

    /// Rank 2 with the integration penalty (`ℓ1` on D) only.
    pub fn sim1() -> Self {
        Self::new(2, [true, false, false, false]).expect("valid grid")
    }

    /// Maximum rank 10 with the integration penalty only. These fits
    /// have up to ~1600 parameters, where limited-memory BFGS reaches the same
    /// solutions an order of magnitude faster than the dense update.
    pub fn sim2() -> Self {
        let mut m = Self::new(10, [true, false, false, false]).expect("valid grid");
        m.cv.fit.optimizer.memory = Memory::Limited { history: 10 };
        m
    }

    /// Maximum rank `k` with the loading penalties (`ℓ1` on VD and its
    /// row-group counterpart).
    pub fn sim3(k: usize) -> Self {
        Self::new(k, [false, false, true, true]).expect("valid grid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The fit itself failed.
    Failed(String),
    /// The fit succeeded but is left out of summaries (rank-zero solutions).
    Excluded(String),
}

impl RunStatus {
    fn tag(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed(_) => "failed",
            RunStatus::Excluded(_) => "excluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub study: Study,
    pub run: usize,
    pub data_seed: u64,
    pub cv_seed: u64,
    pub status: RunStatus,
    pub lambda0: Option<f64>,
    /// Values for [`Study::metrics`], empty if the run failed.
    pub metrics: Vec<f64>,
}

impl RunRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        let i = self.study.metrics().iter().position(|&m| m == name)?;
        self.metrics.get(i).copied()
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Median and quartiles of every metric over the runs of one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub study: Study,
    pub ok: usize,
    pub failed: usize,
    pub excluded: usize,
    pub median: Vec<Option<f64>>,
    pub q1: Vec<Option<f64>>,
    pub q3: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub records: Vec<RunRecord>,
}

impl Study {
    /// Regenerates the data of a run and returns its ground truth.
    pub fn truth(&self, data_seed: u64) -> Result<TruthDump, SimError> {
        self.validate()?;
        Ok(match *self {
            Study::Sim1 { snr } => gen_sim1(snr, data_seed)?.truth_dump(),
            Study::Sim2 { n, p, p_joint } => gen_sim2(n, p, p_joint, data_seed)?.truth_dump(),
            Study::Sim3 { snr } => gen_sim3(snr, data_seed)?.truth_dump(),
        })
    }
}

/// Data seed and hold-out seed of run `run` under `master`.
pub fn derive_seeds(master: u64, run: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run as u64);
    (rng.next_u64(), rng.next_u64())
}

/// Runs every repetition of `spec` (in parallel) and returns one record per
/// run in run order.
pub fn run_study(spec: &SimSpec, method: &MethodConfig) -> Result<StudyTable, SimError> {
    spec.study.validate()?;
    if spec.runs == 0 {
        return Err(SimError::Invalid("runs must be at least 1".into()));
    }
    let records = (0..spec.runs)
        .into_par_iter()
        .map(|run| {
            let (data_seed, cv_seed) = derive_seeds(spec.seed, run);
            run_one(spec.study, run, data_seed, cv_seed, method)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StudyTable { records })
}

/// [`run_study`] over several settings, concatenated in order.
pub fn run_studies(specs: &[SimSpec], method: &MethodConfig) -> Result<StudyTable, SimError> {
    let mut table = StudyTable::default();
    for spec in specs {
        table.records.extend(run_study(spec, method)?.records);
    }
    Ok(table)
}

struct Fitted {
    solution: Solution<f64>,
    normalized: Dataset<f64>,
    lambda0: f64,
}

fn fit(dataset: &Dataset<f64>, method: &MethodConfig, cv_seed: u64) -> mmpca_core::Result<Fitted> {
    let (normalized, record) = normalize(dataset, &method.normalization)?;
    let cv = CvConfig {
        seed: cv_seed,
        ..method.cv.clone()
    };
    let result = cross_validate(&normalized, method.k, &method.grid, &cv)?;
    let lambda0 = result.chosen_candidate().lambda0;
    Ok(Fitted {
        solution: result.solution.with_normalization(record),
        normalized,
        lambda0,
    })
}

fn run_one(
    study: Study,
    run: usize,
    data_seed: u64,
    cv_seed: u64,
    method: &MethodConfig,
) -> Result<RunRecord, SimError> {
    let record = |status, lambda0, metrics| RunRecord {
        study,
        run,
        data_seed,
        cv_seed,
        status,
        lambda0,
        metrics,
    };
    let (dataset, scorer): (Dataset<f64>, Box<dyn Fn(&Fitted) -> Result<(RunStatus, Vec<f64>), SimError>>) =
        match study {
            Study::Sim1 { snr } => {
                let sim = gen_sim1(snr, data_seed)?;
                (sim.data.dataset.clone(), Box::new(move |f| score_sim1(&sim, f)))
            }
            Study::Sim2 { n, p, p_joint } => {
                let sim = gen_sim2(n, p, p_joint, data_seed)?;
                (sim.data.dataset.clone(), Box::new(move |f| score_sim2(&sim, f)))
            }
            Study::Sim3 { snr } => {
                let sim = gen_sim3(snr, data_seed)?;
                (sim.data.dataset.clone(), Box::new(move |f| score_sim3(&sim, f)))
            }
        };
    match fit(&dataset, method, cv_seed) {
        Ok(fitted) => {
            let (status, metrics) = scorer(&fitted)?;
            Ok(record(status, Some(fitted.lambda0), metrics))
        }
        Err(e) => {
            log::warn!("{} run {run}: {e}", study.label());
            Ok(record(RunStatus::Failed(e.to_string()), None, Vec::new()))
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn score_sim1(sim: &crate::Sim1, f: &Fitted) -> Result<(RunStatus, Vec<f64>), SimError> {
    let sol = &f.solution;
    let rmse = structure_rmse(&support_pattern(sol.augmented_d()), &sim.truth);
    let record = sol.normalization().expect("attached in fit");
    let g = sol.graph();
    let (mut err, mut energy) = (0.0, 0.0);
    for (m, &(i, j)) in g.links().iter().enumerate() {
        let xhat = impute_denormalized(sol, i, j, record)?;
        err += (xhat - &sim.data.signal[m]).norm_squared();
        energy += sim.data.signal[m].norm_squared();
    }
    Ok((
        RunStatus::Ok,
        vec![rmse, flag(rmse == 0.0), err / energy, effective_rank(sol) as f64],
    ))
}

/// Components present in every matrix of the dataset.
fn globally_joint(sol: &Solution<f64>) -> Vec<usize> {
    let d = sol.augmented_d();
    (0..sol.k())
        .filter(|&c| (0..d.ncols()).all(|v| d[(c, v)] != 0.0))
        .collect()
}

fn score_sim2(sim: &crate::Sim2, f: &Fitted) -> Result<(RunStatus, Vec<f64>), SimError> {
    let sol = &f.solution;
    let features = sol.graph().n_views() - 1;
    let joint = globally_joint(sol);
    let importance = sol.component_importance();
    let strongest = joint
        .iter()
        .copied()
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if importance[b] >= importance[c] => Some(b),
            _ => Some(c),
        });
    let estimate: DVector<f64> = match strongest {
        Some(c) => sol.loadings()[features].matrix().column(c).into_owned(),
        None => {
            let residuals = (0..features)
                .map(|m| {
                    let xhat = impute(sol, m, features)?;
                    Ok(f.normalized.matrix(m).values() - xhat)
                })
                .collect::<mmpca_core::Result<Vec<DMatrix<f64>>>>()?;
            top_right_singular_vector(&stack_rows(&residuals))
        }
    };
    let data: Vec<DMatrix<f64>> = sim.data.dataset.matrices().iter().map(|m| m.values().clone()).collect();
    let pca = top_right_singular_vector(&stack_rows(&data));
    let mut metrics = vec![joint.len() as f64];
    metrics.extend((0..features).map(|m| sol.matrix_components(m).len() as f64));
    metrics.push(flag(joint_direction_accuracy(&estimate, &sim.directions, &sim.noise_direction)));
    metrics.push(flag(joint_direction_accuracy(&pca, &sim.directions, &sim.noise_direction)));
    Ok((RunStatus::Ok, metrics))
}

fn score_sim3(sim: &crate::Sim3, f: &Fitted) -> Result<(RunStatus, Vec<f64>), SimError> {
    let sol = &f.solution;
    let rank = effective_rank(sol);
    let est = stack_rows(&[sol.scaled_loadings()[0].clone(), sol.scaled_loadings()[1].clone()]);
    let truth = stack_rows(&[sim.u.clone(), sim.v.clone()]);
    let mcc = loading_mcc(&est, &truth);
    let status = if rank == 0 {
        RunStatus::Excluded("rank-zero solution".into())
    } else {
        RunStatus::Ok
    };
    Ok((status, vec![mcc.value, flag(mcc.degenerate), rank as f64]))
}

impl StudyTable {
    /// Settings in first-appearance order.
    pub fn settings(&self) -> Vec<Study> {
        let mut out: Vec<Study> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.study) {
                out.push(r.study);
            }
        }
        out
    }

    pub fn runs_of(&self, study: &Study) -> impl Iterator<Item = &RunRecord> {
        let study = *study;
        self.records.iter().filter(move |r| r.study == study)
    }

    /// Values of `metric` over the successful, non-excluded runs of `study`.
    pub fn values(&self, study: &Study, metric: &str) -> Vec<f64> {
        self.runs_of(study).filter(|r| r.is_ok()).filter_map(|r| r.metric(metric)).collect()
    }

    pub fn summary(&self, study: &Study) -> Summary {
        let runs: Vec<&RunRecord> = self.runs_of(study).collect();
        let count = |tag: &str| runs.iter().filter(|r| r.status.tag() == tag).count();
        let stat = |q: f64| {
            study
                .metrics()
                .iter()
                .map(|m| quantile(&self.values(study, m), q))
                .collect()
        };
        Summary {
            study: *study,
            ok: count("ok"),
            failed: count("failed"),
            excluded: count("excluded"),
            median: stat(0.5),
            q1: stat(0.25),
            q3: stat(0.75),
        }
    }

    /// Writes one row per run followed by median, q1 and q3 rows per setting.
    /// All settings must belong to the same study.
    ///
    /// Columns: `kind, setting, run, data_seed, cv_seed, status, lambda0`,
    /// the study's metric columns, then `n_ok, n_failed, n_excluded` (filled
    /// on summary rows only). Missing values are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let settings = self.settings();
        let Some(first) = settings.first() else {
            return Err(SimError::Invalid("empty result table".into()));
        };
        if settings.iter().any(|s| s.id() != first.id()) {
            return Err(SimError::Invalid("a table holds one study".into()));
        }
        let metrics = first.metrics();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind", "setting", "run", "data_seed", "cv_seed", "status", "lambda0"];
        header.extend(metrics);
        header.extend(["n_ok", "n_failed", "n_excluded"]);
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            let mut row = vec![
                "run".to_string(),
                r.study.label(),
                r.run.to_string(),
                r.data_seed.to_string(),
                r.cv_seed.to_string(),
                r.status.tag().to_string(),
                opt(r.lambda0),
            ];
            row.extend((0..metrics.len()).map(|i| opt(r.metrics.get(i).copied())));
            row.extend([String::new(), String::new(), String::new()]);
            w.write_record(&row)?;
        }
        for s in &settings {
            let sum = self.summary(s);
            for (kind, vals) in [("median", &sum.median), ("q1", &sum.q1), ("q3", &sum.q3)] {
                let mut row = vec![kind.to_string(), s.label(), String::new(), String::new(), String::new(), String::new()];
                row.push(String::new());
                row.extend(vals.iter().map(|&v| opt(v)));
                row.extend([sum.ok.to_string(), sum.failed.to_string(), sum.excluded.to_string()]);
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_run_not_schedule() {
        assert_eq!(derive_seeds(7, 3), derive_seeds(7, 3));
        assert_ne!(derive_seeds(7, 3), derive_seeds(7, 4));
        assert_ne!(derive_seeds(7, 3), derive_seeds(8, 3));
        let (a, b) = derive_seeds(7, 0);
        assert_ne!(a, b);
    }

    #[test]
    fn single_run_gives_single_row() {
        let spec = SimSpec {
            study: Study::Sim1 { snr: 4.0 },
            runs: 1,
            seed: 3,
        };
        let mut method = MethodConfig::sim1();
        method.grid = LambdaGrid::ray([true, true, false, false], &[0.01]).unwrap();
        let table = run_study(&spec, &method).unwrap();
        assert_eq!(table.records.len(), 1);
        let csv = table.to_csv_string().unwrap();
        assert_eq!(csv.lines().filter(|l| l.starts_with("run,")).count(), 1);
        assert_eq!(csv.lines().count(), 1 + 1 + 3);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let method = MethodConfig::sim1();
        let bad = |study, runs| run_study(&SimSpec { study, runs, seed: 0 }, &method).is_err();
        assert!(bad(Study::Sim1 { snr: -1.0 }, 1));
        assert!(bad(Study::Sim1 { snr: 1.0 }, 0));
        assert!(bad(
            Study::Sim2 {
                n: 10,
                p: 5,
                p_joint: 1.5
            },
            1
        ));
    }

    #[test]
    fn summary_counts_statuses() {
        let study = Study::Sim3 { snr: 1.0 };
        let rec = |run, status, m: f64| RunRecord {
            study,
            run,
            data_seed: 0,
            cv_seed: 0,
            status,
            lambda0: Some(0.1),
            metrics: vec![m, 0.0, 2.0],
        };
        let table = StudyTable {
            records: vec![
                rec(0, RunStatus::Ok, 1.0),
                rec(1, RunStatus::Ok, 0.5),
                rec(2, RunStatus::Excluded("rank".into()), -1.0),
                RunRecord {
                    metrics: vec![],
                    lambda0: None,
                    ..rec(3, RunStatus::Failed("x".into()), 0.0)
                },
            ],
        };
        let s = table.summary(&study);
        assert_eq!((s.ok, s.failed, s.excluded), (2, 1, 1));
        assert_eq!(s.median[0], Some(0.75));
    }
}
