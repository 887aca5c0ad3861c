use std::path::PathBuf;

use suscept::Error as CoreError;
use thiserror::Error;

/// Everything a subcommand can fail with, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration; `field` is a dotted path such as `model.variant`.
    #[error("{field}: {msg}")]
    Config { field: String, msg: String },
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: CoreError },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), msg: msg.into() }
    }

    /// 2 for bad input or configuration, 1 for failures while computing or
    /// writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Read { .. } | CliError::Input { .. } => 2,
            CliError::Write { .. } => 1,
            CliError::Core(e) => {
                if is_input_error(e) {
                    2
                } else {
                    1
                }
            }
        }
    }
}

fn is_input_error(e: &CoreError) -> bool {
    use CoreError::*;
    matches!(
        e,
        NotSquare { .. }
            | TooSmall(_)
            | NonzeroDiagonal(_)
            | AsymmetricUndirected { .. }
            | IsolatedActor(_)
            | NoEdges
            | ZeroVariance(_)
            | DimensionMismatch(_)
            | RankDeficient(_)
            | ProportionalToIntercept(_)
            | InvalidPrior(_)
            | UnsupportedVariant(_)
            | EmptyEgoSet
            | InvalidEgo(_)
            | MissingAlterCovariates(_)
            | InvalidConfig(_)
            | Parse { .. }
    )
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
