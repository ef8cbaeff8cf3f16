use thiserror::Error;

use crate::dsl::{EvalError, FileError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gap closing at k = {k}: band energy {eps:e} is below the 1e-12 threshold")]
    GapClosing { k: f64, eps: f64 },

    #[error("momentum k = {0} lies outside the open half Brillouin zone (0, pi)")]
    MomentumOutOfRange(f64),

    #[error("time t = {0} must be finite and non-negative")]
    InvalidTime(f64),

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("non-finite value encountered at k = {k}")]
    NonFinite { k: f64 },

    #[error("RK4 step dt = {dt:e} exceeds the limit 0.01/eps_f = {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("no dynamical critical momentum exists for this quench")]
    NoDqpt,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },

    #[error("samples are not uniformly spaced in t (index {index})")]
    NonUniformSamples { index: usize },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("model file: {0}")]
    ModelFile(#[from] FileError),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("at {param_name} = {param}, t = {t}: {source}")]
    Cell {
        param_name: String,
        param: f64,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("need at least 2 rows to plot, got {0}")]
    TooFewRows(usize),

    #[error("malformed table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
