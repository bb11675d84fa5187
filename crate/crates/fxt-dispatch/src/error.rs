use thiserror::Error;

/// Errors surfaced by the dispatch library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NonSymmetric { max_asymmetry: f64 },

    #[error("topology {index} in the schedule is disconnected")]
    DisconnectedTopology { index: usize },

    #[error("demand {p_tot} MW is infeasible: capacity range is [{p_min_sum}, {p_max_sum}] MW")]
    Infeasible {
        p_tot: f64,
        p_min_sum: f64,
        p_max_sum: f64,
    },

    #[error("every generator is saturated; the free-set incremental cost is undefined")]
    AllSaturated,

    #[error("consensus did not reach tolerance {tol:e} by t = {t_limit} s (residual {residual:e}); integration step too coarse")]
    NotConverged {
        tol: f64,
        t_limit: f64,
        residual: f64,
    },

    #[error("iteration cap {cap} exceeded (residual {residual:e})")]
    MaxIterations { cap: usize, residual: f64 },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("case data not found: {0}")]
    MissingCase(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
