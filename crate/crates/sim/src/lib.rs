//! Simulation studies: data generators, recovery metrics and a study runner
//! that writes per-run and aggregate result tables.

pub mod generators;
pub mod metrics;
pub mod study;

pub use generators::{gen_sim1, gen_sim2, gen_sim3, Sim1, Sim2, Sim3, TruthDump};
pub use metrics::{joint_direction_accuracy, loading_mcc, structure_rmse, Mcc};
pub use study::{derive_seeds, run_studies, run_study, MethodConfig, RunRecord, RunStatus, SimSpec, Study, StudyTable, Summary};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid study parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] mmpca_core::Error),
    #[error("writing results: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
