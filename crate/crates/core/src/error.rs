use alloc::string::String;

/// Errors raised by the numerical core.
///
/// Contract checks (shape mismatches, inverted windows, bad parameters) are
/// errors; measured violations of inequalities are reported in the
/// corresponding report structs instead.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stopping-time window inverted on path {path}: from {from} > to {to}")]
    WindowInverted { path: usize, from: usize, to: usize },

    #[error("modulus vanishes at x = {x} > 0")]
    DegenerateModulus { x: f64 },

    #[error("driver `{0}` has no Lipschitz constant; mollify it before solving")]
    NonLipschitzDriver(String),

    #[error("terminal condition is not Markovian (depends on more than B(1))")]
    NonMarkovianTerminal,

    #[error("Lipschitz regularization diverges: k = {k} must exceed growth constant {growth}")]
    DivergentEnvelope { k: f64, growth: f64 },

    #[error("process exceeds declared bound {bound} on path {path} (value {value})")]
    BoundExceeded { bound: f64, path: usize, value: f64 },

    #[error("process decreases on path {path} at index {index}")]
    NotMonotone { path: usize, index: usize },

    #[error("depth {depth} is not resolved by a {steps}-step grid; need at least {min_steps} steps")]
    UnresolvedDepth {
        depth: usize,
        steps: usize,
        min_steps: usize,
    },

    #[error("window invariant broken on path {path} at index {index}: |z| = {norm} < eps0 = {eps0}")]
    WindowInvariant {
        path: usize,
        index: usize,
        norm: f64,
        eps0: f64,
    },

    #[error("comparison requires one shared path ensemble")]
    EnsembleMismatch,

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalogEntry(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
