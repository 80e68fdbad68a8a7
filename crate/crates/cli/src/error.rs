use std::path::Path;

/// Failures of a CLI command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, manifest, CSV or bundle. Exit status 2.
    #[error("{0}")]
    Input(String),
    /// The optimizer could not produce a solution. Exit status 3.
    #[error("optimization failed: {0}")]
    Optimization(String),
    /// Something that validated input should never trigger. Exit status 4.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Optimization(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn at(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {msg}", path.display()))
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::at(path, e)
    }
}

impl From<mmpca_core::Error> for CliError {
    fn from(e: mmpca_core::Error) -> Self {
        use mmpca_core::Error as E;
        match e {
            E::NonFinite { .. } | E::AllCandidatesFailed => CliError::Optimization(e.to_string()),
            E::Inversion(_) => CliError::Internal(e.to_string()),
            E::Dimension(_) | E::Index(_) | E::Graph(_) | E::NoObserved { .. } | E::EmptyLine { .. } | E::Parameter(_) | E::Depth { .. } => {
                CliError::Input(e.to_string())
            }
        }
    }
}

impl From<mmpca_sim::SimError> for CliError {
    fn from(e: mmpca_sim::SimError) -> Self {
        use mmpca_sim::SimError as S;
        match e {
            S::Model(m) => m.into(),
            S::Invalid(_) => CliError::Input(e.to_string()),
            S::Csv(_) | S::Io(_) => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the path to I/O failures.
pub trait PathContext<T> {
    fn with_path(self, path: &Path) -> CliResult<T>;
}

impl<T> PathContext<T> for std::io::Result<T> {
    fn with_path(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::input("x").exit_code(), 2);
        assert_eq!(CliError::Optimization("x".into()).exit_code(), 3);
        assert_eq!(CliError::Internal("x".into()).exit_code(), 4);
    }

    #[test]
    fn core_errors_map_to_their_kind() {
        let e: CliError = mmpca_core::Error::AllCandidatesFailed.into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = mmpca_core::Error::Parameter("bad".into()).into();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn path_context_names_the_file() {
        let r: std::io::Result<()> = Err(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        let e = r.with_path(Path::new("a/b.csv")).unwrap_err();
        assert_eq!(e.to_string(), "a/b.csv: gone");
    }
}
