//! Seeded execution of single runs, batches and full comparisons.
//!
//! Every run draws from independent ChaCha8 streams keyed by
//! `(master seed, run index, purpose)`, so a run's output does not depend on
//! which other runs exist or in which order they execute. Runs with the same
//! index share their starting positions and low-fidelity data across
//! policies, which keeps comparisons paired.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{ExperimentConfig, HyperSource};
use super::metrics::{aggregate, Aggregate, MetricsRecord, MetricsRow, Series};
use crate::algorithms::{
    coverage_length, dmlc_coverage_step, dmlc_learning_phase, initial_model, smlc_iteration,
    Algorithm, DmlcState, NoisySampler, SmlcState,
};
use crate::error::{Error, Result};
use crate::geometry::{
    eval_test_density, instantaneous_regret, lloyd_step, Bounds, DensityField, GridEnvironment,
    Point, TeamConfiguration, TestDensity,
};
use crate::mfgp::{fit_hyperparameters, FidelityDataset, FitOutcome, MfgpHyper, MfgpModel};

/// Environment variable capping the number of worker threads of a batch.
pub const THREADS_ENV: &str = "MF_COVERAGE_THREADS";

const STREAMS_PER_RUN: u64 = 8;

/// Purpose of a random stream within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    LowNoise = 1,
    HighNoise = 2,
    Decisions = 3,
}

/// Independent generator for one purpose of one run.
pub fn run_rng(master_seed: u64, run_index: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index * STREAMS_PER_RUN + stream as u64);
    rng
}

/// Generator for the fit's training locations, disjoint from all run streams.
pub fn fit_rng(master_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::MAX);
    rng
}

fn uniform_point<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Point {
    Point::new(
        bounds.x_min + bounds.width() * rng.random::<f64>(),
        bounds.y_min + bounds.height() * rng.random::<f64>(),
    )
}

fn noisy_values<R: Rng + ?Sized>(
    density: &TestDensity,
    points: &[Point],
    noise_var: f64,
    rng: &mut R,
) -> Vec<f64> {
    let noise =
        (noise_var > 0.0).then(|| Normal::new(0.0, noise_var.sqrt()).expect("finite std dev"));
    points
        .iter()
        .map(|p| density.value_at(p) + noise.as_ref().map_or(0.0, |n| n.sample(rng)))
        .collect()
}

/// Low-fidelity observations on the configured lattice.
pub fn seed_low_fidelity<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    rng: &mut R,
) -> FidelityDataset {
    let locations = config.low_fidelity_locations();
    let values = noisy_values(
        &config.density.low,
        &locations,
        config.low_fidelity.noise_var,
        rng,
    );
    FidelityDataset::from_samples(0, locations, values)
}

/// `N` starting positions drawn uniformly over the bounds.
pub fn initial_configuration(
    config: &ExperimentConfig,
    run_index: u64,
) -> Result<TeamConfiguration> {
    let mut rng = run_rng(config.seed, run_index, Stream::Init);
    let b = config.grid.bounds;
    let positions = (0..config.agents)
        .map(|_| uniform_point(&b, &mut rng))
        .collect();
    TeamConfiguration::new(positions, &b)
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub multi: FitOutcome,
    pub single: FitOutcome,
    pub training_locations: Vec<Point>,
}

/// Maximum-likelihood fit of both learners on noiseless training samples at
/// uniformly random locations: `φ_ℓ` and `φ_h` at the same points for the
/// two-level model, `φ_h` alone for the single-fidelity model. Noise is held
/// at `hyper.fit_noise_var`.
pub fn fit(config: &ExperimentConfig) -> Result<FitReport> {
    let mut rng = fit_rng(config.seed);
    let b = config.grid.bounds;
    let locations: Vec<Point> = (0..config.hyper.training_samples)
        .map(|_| uniform_point(&b, &mut rng))
        .collect();
    let low: Vec<f64> = locations
        .iter()
        .map(|p| config.density.low.value_at(p))
        .collect();
    let high: Vec<f64> = locations
        .iter()
        .map(|p| config.density.high.value_at(p))
        .collect();
    let noise = config.hyper.fit_noise_var;
    let spec = &config.hyper;

    let multi_init = MfgpHyper::two_level(
        spec.multi.low,
        spec.multi.high,
        spec.multi.rho,
        [noise, noise],
    );
    let multi_data = vec![
        FidelityDataset::from_samples(0, locations.clone(), low),
        FidelityDataset::from_samples(1, locations.clone(), high.clone()),
    ];
    let multi = fit_hyperparameters(&multi_data, &multi_init, &spec.fit_bounds, spec.fit_budget)?;

    let single_init = MfgpHyper::single(spec.single.kernel, noise);
    let single_data = vec![FidelityDataset::from_samples(0, locations.clone(), high)];
    let single = fit_hyperparameters(
        &single_data,
        &single_init,
        &spec.fit_bounds,
        spec.fit_budget,
    )?;

    Ok(FitReport {
        multi,
        single,
        training_locations: locations,
    })
}

/// Copies fitted kernels and scaling into `config` and marks them pinned.
/// Noise levels stay as configured.
pub fn pin_fit(config: &ExperimentConfig, report: &FitReport) -> ExperimentConfig {
    let mut out = config.clone();
    out.hyper.source = HyperSource::Pinned;
    out.hyper.multi.low = report.multi.hyper.kernels[0];
    out.hyper.multi.high = report.multi.hyper.kernels[1];
    out.hyper.multi.rho = report.multi.hyper.rho[0];
    out.hyper.single.kernel = report.single.hyper.kernels[0];
    out
}

/// A config whose hyperparameters are ready to use, fitting first if asked.
pub fn resolve_hyper(config: &ExperimentConfig) -> Result<ExperimentConfig> {
    match config.hyper.source {
        HyperSource::Pinned => Ok(config.clone()),
        HyperSource::Fit => Ok(pin_fit(config, &fit(config)?)),
    }
}

struct Recorder<'a> {
    grid: &'a GridEnvironment,
    truth: &'a DensityField,
    rows: Vec<MetricsRow>,
    cum_regret: f64,
}

impl<'a> Recorder<'a> {
    fn new(grid: &'a GridEnvironment, truth: &'a DensityField, capacity: usize) -> Self {
        Self {
            grid,
            truth,
            rows: Vec::with_capacity(capacity),
            cum_regret: 0.0,
        }
    }

    fn record(&mut self, config: &TeamConfiguration, model: Option<&MfgpModel>) {
        let regret = instantaneous_regret(self.grid, config.positions(), self.truth);
        self.cum_regret += regret;
        let (mse, max_var) = match model {
            Some(m) => {
                let post = m.posterior(self.grid.points());
                let estimate = DensityField::from_values(post.means);
                let mse = estimate
                    .values()
                    .iter()
                    .zip(self.truth.values())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / self.grid.len() as f64;
                (mse, post.variances.iter().copied().fold(0.0, f64::max))
            }
            // the baseline knows the density exactly
            None => (0.0, 0.0),
        };
        self.rows.push(MetricsRow {
            iteration: self.rows.len() + 1,
            regret,
            cum_regret: self.cum_regret,
            mse,
            max_var,
            mean_distance: config.mean_travel(),
        });
    }
}

/// Executes the configured policy for `config.iterations` iterations.
///
/// `config` must carry pinned hyperparameters (see [`resolve_hyper`]).
pub fn run_experiment(config: &ExperimentConfig, run_index: u64) -> Result<MetricsRecord> {
    let fail = |iteration: usize| {
        move |e: Error| Error::Run {
            run: run_index,
            iteration,
            source: Box::new(e),
        }
    };
    config.validate().map_err(fail(0))?;
    if config.hyper.source != HyperSource::Pinned {
        return Err(fail(0)(Error::Config(
            "hyperparameters must be resolved before running".into(),
        )));
    }
    let grid = config.grid_environment().map_err(fail(0))?;
    let truth = eval_test_density(&config.density.high, &grid);
    let start = initial_configuration(config, run_index).map_err(fail(0))?;
    let series = Series::new(config.algorithm, config.fidelity);
    let t_max = config.iterations;
    let mut rec = Recorder::new(&grid, &truth, t_max);

    let final_config = match config.algorithm {
        Algorithm::Baseline => {
            let mut current = start;
            for _ in 0..t_max {
                current = lloyd_step(&grid, &current, &truth);
                rec.record(&current, None);
            }
            current
        }
        Algorithm::Smlc | Algorithm::Dmlc => {
            let domain = config.grid.bounds;
            let low = seed_low_fidelity(
                config,
                &mut run_rng(config.seed, run_index, Stream::LowNoise),
            );
            let model = initial_model(
                config.fidelity,
                &low,
                &config.multi_hyper(),
                &config.single_hyper(),
                domain,
            )
            .map_err(fail(0))?;
            let mut sampler = NoisySampler::new(
                config.density.high,
                config.high_fidelity.noise_var,
                domain,
                run_rng(config.seed, run_index, Stream::HighNoise),
            )
            .map_err(fail(0))?;
            if config.algorithm == Algorithm::Smlc {
                let mut rng = run_rng(config.seed, run_index, Stream::Decisions);
                let mut state =
                    SmlcState::new(model, start, config.smlc.gamma, &grid).map_err(fail(0))?;
                for t in 1..=t_max {
                    let (next, _) =
                        smlc_iteration(state, &grid, &mut sampler, &mut rng).map_err(fail(t))?;
                    state = next;
                    rec.record(&state.config, Some(&state.model));
                }
                state.config
            } else {
                let mut state =
                    DmlcState::new(model, start, config.dmlc, &grid).map_err(fail(0))?;
                // learning phases do not consume iterations; their travel
                // shows up in the next recorded coverage step
                'epochs: loop {
                    let t = rec.rows.len() + 1;
                    let (next, _) =
                        dmlc_learning_phase(state, &grid, &mut sampler).map_err(fail(t))?;
                    state = next;
                    for _ in 0..coverage_length(&state.params, state.epoch) {
                        let (next, _) = dmlc_coverage_step(state, &grid);
                        state = next;
                        rec.record(&state.config, Some(&state.model));
                        if rec.rows.len() == t_max {
                            break 'epochs;
                        }
                    }
                    state.epoch += 1;
                }
                state.config
            }
        }
    };

    Ok(MetricsRecord {
        run_id: run_index,
        series,
        rows: rec.rows,
        final_agent_distances: final_config.travel().to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    /// One record per run, in run order.
    pub records: Vec<MetricsRecord>,
    pub aggregate: Aggregate,
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Runs `0..config.runs` in parallel and aggregates them. Hyperparameters are
/// resolved once, before any run starts.
pub fn run_batch(config: &ExperimentConfig) -> Result<BatchResult> {
    let config = resolve_hyper(config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<MetricsRecord>> = pool.install(|| {
        (0..config.runs as u64)
            .into_par_iter()
            .map(|r| run_experiment(&config, r))
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Batch {
            total: config.runs,
            failures,
        });
    }
    let aggregate = aggregate(&records)?;
    Ok(BatchResult { records, aggregate })
}

/// Batches for every series of [`Series::comparison`], all sharing one
/// hyperparameter resolution and seed.
pub fn compare(config: &ExperimentConfig) -> Result<Vec<(Series, BatchResult)>> {
    let resolved = resolve_hyper(config)?;
    Series::comparison()
        .into_iter()
        .map(|series| {
            let mut c = resolved.clone();
            c.algorithm = series.algorithm;
            if let Some(f) = series.fidelity {
                c.fidelity = f;
            }
            run_batch(&c).map(|b| (series, b))
        })
        .collect()
}
