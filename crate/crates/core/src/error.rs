use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("feature arity mismatch: model expects {expected}, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("empty training data: {0}")]
    EmptyData(&'static str),
    #[error("total sample weight must be positive")]
    ZeroWeight,
    #[error("regime `{regime}` cannot be paired with learner `{learner}`")]
    InvalidPairing {
        regime: &'static str,
        learner: &'static str,
    },
    #[error("base learner failed in boosting round {round}: {reason}")]
    BoostingFailed { round: usize, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Non-fatal conditions reported alongside a result.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    SeriesTooShort {
        series: String,
        length: usize,
        required: usize,
    },
    ZeroTotalCases {
        city: String,
    },
    MissingRegime {
        horizon: usize,
        cutoff: Option<u32>,
        city: String,
        regime: String,
    },
    Tie {
        horizon: usize,
        cutoff: Option<u32>,
        city: String,
        regimes: alloc::vec::Vec<String>,
    },
    ZeroVariancePair {
        skipped: usize,
    },
    TrainingDiverged {
        epoch: usize,
    },
    FinetuneReverted,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::SeriesTooShort {
                series,
                length,
                required,
            } => write!(
                f,
                "series {series} has {length} points, at least {required} needed for windowing"
            ),
            Warning::ZeroTotalCases { city } => {
                write!(f, "city {city} has zero total cases; excluded from pmae")
            }
            Warning::MissingRegime {
                horizon,
                cutoff,
                city,
                regime,
            } => write!(
                f,
                "cell (city {city}, horizon {horizon}, cutoff {cutoff:?}) lacks regime {regime}; skipped"
            ),
            Warning::Tie {
                horizon,
                cutoff,
                city,
                regimes,
            } => write!(
                f,
                "tie in cell (city {city}, horizon {horizon}, cutoff {cutoff:?}) between {regimes:?}"
            ),
            Warning::ZeroVariancePair { skipped } => {
                write!(f, "{skipped} series pairs skipped for zero variance")
            }
            Warning::TrainingDiverged { epoch } => {
                write!(f, "training loss became non-finite at epoch {epoch}")
            }
            Warning::FinetuneReverted => {
                write!(f, "fine-tuning diverged; pre-finetune parameters kept")
            }
        }
    }
}
