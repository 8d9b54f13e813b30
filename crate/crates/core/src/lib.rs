//! Multi-fidelity Gaussian-process learning combined with Voronoi coverage
//! control for teams of mobile sensing agents.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: grids, densities, Voronoi partitions, centroids, loss and regret.
//! - [`mfgp`]: the autoregressive multi-fidelity GP and its hyperparameter fit.
//! - [`planner`]: open-path tours for sampling campaigns.
//! - [`algorithms`]: the stochastic and epoch-based learning-coverage policies and the known-density baseline.
//! - [`harness`]: configuration, seeded runs, batches and CSV metrics.

pub mod algorithms;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mfgp;
pub mod planner;

pub use algorithms::{Algorithm, FidelityMode};
pub use error::{Error, Result};
pub use geometry::{Bounds, DensityField, GridEnvironment, Point, TeamConfiguration, TestDensity};
pub use harness::{ExperimentConfig, MetricsRecord};
pub use mfgp::{KernelParams, MfgpHyper, MfgpModel};
