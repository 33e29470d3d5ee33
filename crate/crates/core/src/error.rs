use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("a schedule needs at least one timestep")]
    EmptySchedule,
    #[error("timestep {t} is outside 1..={max}")]
    TimestepOutOfRange { t: i64, max: usize },
    #[error("ddim step from t=0: there is no noise left to remove")]
    DdimFromZero,
    #[error("ddim step must not move backwards in noise level (t_now={t_now}, t_next={t_next})")]
    DdimBackwards { t_now: i64, t_next: i64 },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no checkpoint provided for ablation row {0}")]
    MissingCheckpoint(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}
