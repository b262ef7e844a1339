use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative jump rate {rate} from state {from} to state {to}")]
    NegativeRate { from: usize, to: usize, rate: f64 },
    #[error("negative killing rate {rate} at state {state}")]
    NegativeKill { state: usize, rate: f64 },
    #[error("reference weight m[{state}] = {weight} is not positive")]
    NonpositiveWeight { state: usize, weight: f64 },
    #[error("chain is not transient: {0}")]
    NonTransient(String),
    #[error("killing time is not finite from state {0}")]
    InfiniteLifetime(usize),
    #[error("time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("bridge density p_t({from},{to}) underflows at t = {t}")]
    UnderflowBridge { from: usize, to: usize, t: f64 },
    #[error("measure references unknown state '{0}'")]
    UnknownState(String),
    #[error("measure is not finite: {0}")]
    InfiniteMeasure(String),
    #[error("invalid cutoff delta = {0}")]
    InvalidDelta(f64),
    #[error("loop intensity alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("moment order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("kernel is not positive definite (min eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("unknown norm kind '{0}'")]
    UnknownNorm(String),
    #[error("invalid kernel specification: {0}")]
    InvalidKernel(String),
    #[error("kernel is not sectorial: {0}")]
    NotSectorial(String),
    #[error("distance matrix is not a metric: {0}")]
    NotAMetric(String),
    #[error("weights do not form a probability measure: {0}")]
    NotProbability(String),
    #[error("Orlicz norm search failed below c = {0}")]
    HeavyTail(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
