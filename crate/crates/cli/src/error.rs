use loja_core::curve::CurveError;
use loja_core::kinf::KinfError;
use loja_core::levelset::LevelSetError;
use loja_core::loja::LojaError;
use loja_core::ExprError;
use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or arguments rejected by the core checks.
    #[error("config: {0}")]
    Config(String),
    /// The computation ran but could not produce an answer.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Writing reports failed.
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Output(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        CliError::Config(format!("expression: {e}"))
    }
}

impl From<CurveError> for CliError {
    fn from(e: CurveError) -> Self {
        match e {
            CurveError::Domain { .. } | CurveError::NonPositiveSample { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LevelSetError> for CliError {
    fn from(e: LevelSetError) -> Self {
        match e {
            LevelSetError::Inconclusive { .. } | LevelSetError::Domain(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<KinfError> for CliError {
    fn from(e: KinfError) -> Self {
        match e {
            KinfError::Csv(_) | KinfError::Json(_) => CliError::Output(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LojaError> for CliError {
    fn from(e: LojaError) -> Self {
        match e {
            LojaError::Level(e) => e.into(),
            LojaError::Curve(e) => e.into(),
            LojaError::AllNearFiber | LojaError::Inconclusive { .. } | LojaError::Domain(_) => {
                CliError::Numerical(e.to_string())
            }
            LojaError::Json(_) | LojaError::Csv(_) => CliError::Output(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
