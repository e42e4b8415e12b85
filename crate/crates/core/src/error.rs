use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset is empty after filtering")]
    EmptyAfterFiltering,
    #[error("dataset has no interactions")]
    EmptyDataset,
    #[error("unknown {kind} id `{id}` in external interactions")]
    UnknownId { kind: &'static str, id: String },
    #[error("all {0} items are positives for this user; no negative exists")]
    NoNegativeAvailable(usize),
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("unknown group id {0}")]
    UnknownGroup(usize),
    #[error("synthetic spec produced zero interactions")]
    DegenerateSynthetic,
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: bpr={bpr} sampling={sampling} causal={causal} contrastive={contrastive}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        bpr: f64,
        sampling: f64,
        causal: f64,
        contrastive: f64,
    },
    #[error("environment mode `given` requires per-interaction labels")]
    MissingEnvLabels,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
