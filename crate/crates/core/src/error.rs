use std::path::PathBuf;

use crate::geometry::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// `K + Θ` stayed indefinite after every jitter retry.
    #[error("covariance matrix of size {size} is not positive definite after {attempts} jitter attempts")]
    DegenerateFactorization { size: usize, attempts: usize },

    #[error("point ({}, {}) lies outside the domain", .0.x, .0.y)]
    OutOfDomain(Point),

    #[error("fidelity index {index} is invalid for a model with {levels} fidelity level(s)")]
    InvalidFidelity { index: usize, levels: usize },

    #[error("Voronoi cell {0} contains no grid points")]
    EmptyCell(usize),

    #[error(
        "virtual sampling selected {selected} points without reaching the variance target {target}"
    )]
    NonTermination { selected: usize, target: f64 },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run} failed at iteration {iteration}: {source}")]
    Run {
        run: u64,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// Every failed run of a batch, in run order.
    #[error("{} of {total} runs failed; first: {}", .failures.len(), .failures[0])]
    Batch { total: usize, failures: Vec<Error> },

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
