use thiserror::Error;

/// Errors raised by model construction, inference, solvers and studies.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter {theta} outside domain [{lo}, {hi}]")]
    OutOfDomain { theta: f64, lo: f64, hi: f64 },

    #[error("emission depends on the previous state or observation; augment the model first")]
    NonStandardEmission,

    #[error("impossible observation y={obs} after control u={control} (predictive probability {prob:e})")]
    ImpossibleObservation { obs: usize, control: usize, prob: f64 },

    #[error("impossible history window (observations {obs:?}, controls {ctrl:?})")]
    ImpossibleWindow { obs: Vec<usize>, ctrl: Vec<usize> },

    #[error("posterior annihilated: every grid point assigns the observation probability <= 1e-12")]
    PosteriorAnnihilated,

    #[error("{what}: required size {required:e} exceeds budget {budget:e} ({formula})")]
    BudgetExceeded {
        what: &'static str,
        required: f64,
        budget: f64,
        formula: &'static str,
    },

    #[error("value iteration did not converge after {sweeps} sweeps (last delta {delta:e})")]
    NoConvergence { sweeps: usize, delta: f64 },

    #[error("non-finite EM objective at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("discretization underflow: every transition from cell {cell} under control {control} underflows (Euler mean {mean:?} left the grid)")]
    DiscretizationUnderflow {
        cell: usize,
        control: usize,
        mean: Vec<f64>,
    },

    #[error("emission underflow: observation row for state cell {cell} underflows (center {center:?})")]
    EmissionUnderflow { cell: usize, center: Vec<f64> },

    #[error("every grid point makes the data impossible")]
    AllImpossible,

    #[error("replication {rep} of variant {variant} failed: {source}")]
    Replication {
        variant: String,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line} (byte offset {offset}): {msg}")]
    Parse {
        line: usize,
        offset: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
