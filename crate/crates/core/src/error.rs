use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("signal has zero power; no excitation, identification impossible")]
    ZeroPowerSignal,

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("sample interval mismatch: expected {expected} s, found {found} s")]
    DtMismatch { expected: f64, found: f64 },

    #[error("length mismatch: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("insufficient excitation: {0}")]
    InsufficientExcitation(String),

    #[error("data matrix rank {rank} is below the requested order {order}")]
    RankDeficient { rank: usize, order: usize },

    #[error("matrix logarithm undefined: eigenvalue {0} lies on the closed negative real axis")]
    LogUndefined(String),

    #[error("simulation became non-finite at sample {step}; substep too large for the network")]
    InstabilityDetected { step: usize },

    #[error("loop topology needs {expected} model inputs, model has {found}")]
    TopologyMismatch { expected: usize, found: usize },

    #[error("results are not on the same grid: {0}")]
    GridMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
}
