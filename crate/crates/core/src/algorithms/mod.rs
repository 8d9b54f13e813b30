//! Learning-and-coverage policies: stochastic sequencing (SMLC), epoch-based
//! deterministic sequencing (DMLC), and plain Lloyd iteration on a known
//! density as the reference baseline.

mod baseline;
mod dmlc;
mod smlc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, DensityField, GridEnvironment, Point, TestDensity};
use crate::mfgp::{
    collapse_to_single_fidelity, FidelityDataset, KernelParams, MfgpHyper, MfgpModel,
};

pub use baseline::known_density_baseline;
pub use dmlc::{
    coverage_length, dmlc_coverage_step, dmlc_epoch, dmlc_learning_phase, dmlc_virtual_sampling,
    DmlcParams, DmlcState,
};
pub use smlc::{learning_probability, smlc_iteration, SmlcState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Smlc,
    Dmlc,
    Baseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Smlc, Algorithm::Dmlc, Algorithm::Baseline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Smlc => "smlc",
            Algorithm::Dmlc => "dmlc",
            Algorithm::Baseline => "baseline",
        }
    }

    pub fn learns(&self) -> bool {
        !matches!(self, Algorithm::Baseline)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smlc" => Ok(Algorithm::Smlc),
            "dmlc" => Ok(Algorithm::Dmlc),
            "baseline" => Ok(Algorithm::Baseline),
            _ => Err(Error::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

/// Whether the learner keeps separate per-fidelity datasets or pools them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityMode {
    Single,
    Multi,
}

impl FidelityMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FidelityMode::Single => "single",
            FidelityMode::Multi => "multi",
        }
    }
}

impl std::fmt::Display for FidelityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FidelityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(FidelityMode::Single),
            "multi" => Ok(FidelityMode::Multi),
            _ => Err(Error::Config(format!("unknown fidelity mode '{s}'"))),
        }
    }
}

/// High-fidelity sensor carried by the agents.
pub trait Sampler {
    fn sample(&mut self, x: Point) -> Result<f64>;
}

/// Samples a known density with additive Gaussian noise.
#[derive(Clone, Debug)]
pub struct NoisySampler {
    density: TestDensity,
    noise: Option<Normal<f64>>,
    domain: Bounds,
    rng: ChaCha8Rng,
}

impl NoisySampler {
    pub fn new(
        density: TestDensity,
        noise_var: f64,
        domain: Bounds,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance must be nonnegative, got {noise_var}"
            )));
        }
        let noise = (noise_var > 0.0)
            .then(|| Normal::new(0.0, noise_var.sqrt()).expect("finite positive std dev"));
        Ok(Self {
            density,
            noise,
            domain,
            rng,
        })
    }

    /// Exact density values, no noise.
    pub fn noiseless(density: TestDensity, domain: Bounds) -> Self {
        Self {
            density,
            noise: None,
            domain,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Sampler for NoisySampler {
    fn sample(&mut self, x: Point) -> Result<f64> {
        if !self.domain.contains(&x) {
            return Err(Error::Sampler(format!(
                "location ({}, {}) is outside the domain",
                x.x, x.y
            )));
        }
        let eps = self.noise.as_ref().map_or(0.0, |n| n.sample(&mut self.rng));
        Ok(self.density.value_at(&x) + eps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AgentAction {
    /// Sampled the high-fidelity sensor at a point after driving there.
    Learn {
        at: Point,
    },
    /// Drove to an estimated (or, for the baseline, true) centroid.
    Cover {
        to: Point,
    },
    /// Drove a tour through acquisition points, sampling at each.
    Tour {
        waypoints: Vec<Point>,
    },
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub fidelity: usize,
    pub location: Point,
    pub value: f64,
}

/// One straight-line hop of one agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leg {
    pub agent: usize,
    pub to: Point,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub actions: Vec<AgentAction>,
    pub samples: Vec<Sample>,
    /// Distance travelled by each agent during this step.
    pub distances: Vec<f64>,
    /// Individual hops, in the order they were driven.
    pub legs: Vec<Leg>,
}

impl StepOutcome {
    fn with_agents(n: usize) -> Self {
        Self {
            actions: Vec::with_capacity(n),
            samples: Vec::new(),
            distances: vec![0.0; n],
            legs: Vec::new(),
        }
    }

    fn record_leg(&mut self, agent: usize, to: Point, distance: f64) {
        self.distances[agent] += distance;
        self.legs.push(Leg {
            agent,
            to,
            distance,
        });
    }
}

/// Clamped posterior mean and posterior variance over the grid.
pub(crate) fn estimate_on_grid(
    model: &MfgpModel,
    grid: &GridEnvironment,
) -> (DensityField, Vec<f64>) {
    let post = model.posterior(grid.points());
    (DensityField::from_values(post.means), post.variances)
}

/// Largest value and its lowest index.
pub(crate) fn global_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Single-fidelity learner over the pooled data of `model`: every sample is
/// treated as a direct observation of the ground truth with one noise level.
pub fn make_single_fidelity_variant(
    model: &MfgpModel,
    kernel: KernelParams,
    noise_var: f64,
) -> Result<MfgpModel> {
    let pooled = collapse_to_single_fidelity(model.datasets());
    MfgpModel::new(
        MfgpHyper::single(kernel, noise_var),
        vec![pooled],
        *model.domain(),
    )
}

/// Initial learner for a fidelity mode, seeded with the low-fidelity data.
///
/// `Multi` keeps the data at level 0 of a two-level model; `Single` pools it
/// into a one-level model with `single_hyper`.
pub fn initial_model(
    mode: FidelityMode,
    low: &FidelityDataset,
    multi_hyper: &MfgpHyper,
    single_hyper: &MfgpHyper,
    domain: Bounds,
) -> Result<MfgpModel> {
    match mode {
        FidelityMode::Multi => {
            let mut datasets: Vec<FidelityDataset> = (0..multi_hyper.levels())
                .map(FidelityDataset::new)
                .collect();
            datasets[0] = FidelityDataset {
                fidelity: 0,
                ..low.clone()
            };
            MfgpModel::new(multi_hyper.clone(), datasets, domain)
        }
        FidelityMode::Single => {
            let pooled = collapse_to_single_fidelity(std::slice::from_ref(low));
            MfgpModel::new(single_hyper.clone(), vec![pooled], domain)
        }
    }
}
