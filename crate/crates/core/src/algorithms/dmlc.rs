use serde::{Deserialize, Serialize};

use super::{estimate_on_grid, global_argmax, AgentAction, Sample, Sampler, StepOutcome};
use crate::error::{Error, Result};
use crate::geometry::{
    centroids, nearest_site, voronoi_partition, GridEnvironment, Point, TeamConfiguration,
};
use crate::mfgp::MfgpModel;
use crate::planner::plan_tour;

/// Virtual sampling gives up after this many picks per grid point.
const VIRTUAL_SAMPLES_PER_POINT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmlcParams {
    /// Per-epoch variance reduction factor, in `(0, 1)`.
    pub alpha: f64,
    /// Epoch length growth factor, `> 1`.
    pub beta: f64,
    /// Coverage steps in the first epoch.
    pub initial_epoch_length: usize,
}

impl Default for DmlcParams {
    fn default() -> Self {
        Self {
            alpha: std::f64::consts::FRAC_1_SQRT_2,
            beta: 2.0,
            initial_epoch_length: 4,
        }
    }
}

impl DmlcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must exceed 1, got {}",
                self.beta
            )));
        }
        if self.initial_epoch_length == 0 {
            return Err(Error::Config(
                "initial epoch length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Coverage steps in epoch `epoch` (counted from 1): `n_e0 · β^(e-1)`,
/// rounded up.
pub fn coverage_length(params: &DmlcParams, epoch: u32) -> usize {
    let exact = params.initial_epoch_length as f64 * params.beta.powi(epoch as i32 - 1);
    let nearest = exact.round();
    if (exact - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        exact.ceil() as usize
    }
}

#[derive(Clone, Debug)]
pub struct DmlcState {
    pub model: MfgpModel,
    pub config: TeamConfiguration,
    /// Estimated centroids from the last coverage step (initially the
    /// starting positions); they generate the Voronoi partition.
    pub centroids: Vec<Point>,
    pub m0: f64,
    pub params: DmlcParams,
    /// Current epoch, counted from 1.
    pub epoch: u32,
}

impl DmlcState {
    pub fn new(
        model: MfgpModel,
        config: TeamConfiguration,
        params: DmlcParams,
        grid: &GridEnvironment,
    ) -> Result<Self> {
        params.validate()?;
        let (_, variances) = estimate_on_grid(&model, grid);
        let (_, m0) = global_argmax(&variances);
        if !(m0 > 0.0) {
            return Err(Error::Config(
                "initial maximum posterior variance must be positive".into(),
            ));
        }
        Ok(Self {
            centroids: config.positions().to_vec(),
            model,
            config,
            m0,
            params,
            epoch: 1,
        })
    }

    /// Variance level the current epoch's learning phase must reach.
    pub fn variance_target(&self) -> f64 {
        self.params.alpha.powi(self.epoch as i32) * self.m0
    }
}

/// Greedily picks grid points of maximum posterior variance, conditioning on
/// each as a zero-valued top-level observation, until the maximum variance
/// over the grid is at most `target`. The input model is not modified.
pub fn dmlc_virtual_sampling(
    model: &MfgpModel,
    grid: &GridEnvironment,
    target: f64,
) -> Result<Vec<Point>> {
    if !(target > 0.0) {
        return Err(Error::Config(format!(
            "variance target must be positive, got {target}"
        )));
    }
    let limit = grid.len() * VIRTUAL_SAMPLES_PER_POINT;
    let top = model.top();
    let mut picked = Vec::new();
    let mut virtual_model = model.clone();
    loop {
        let variances = virtual_model.posterior(grid.points()).variances;
        let (j, max) = global_argmax(&variances);
        if max <= target {
            return Ok(picked);
        }
        if picked.len() >= limit {
            return Err(Error::NonTermination {
                selected: picked.len(),
                target,
            });
        }
        let x = grid.point(j);
        picked.push(x);
        virtual_model = virtual_model.add_observation(top, x, 0.0)?;
    }
}

/// Learning phase of the current epoch: plan acquisition points, split them
/// by Voronoi ownership, drive each agent along its tour and sample.
///
/// Real samples enter the model in acquisition order, so the resulting
/// variance field matches the virtual one exactly.
pub fn dmlc_learning_phase<S: Sampler + ?Sized>(
    state: DmlcState,
    grid: &GridEnvironment,
    sampler: &mut S,
) -> Result<(DmlcState, StepOutcome)> {
    let target = state.variance_target();
    let acquisition = dmlc_virtual_sampling(&state.model, grid, target)?;
    let DmlcState {
        model,
        mut config,
        centroids: sites,
        m0,
        params,
        epoch,
    } = state;
    let n = config.len();

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, x) in acquisition.iter().enumerate() {
        assigned[nearest_site(x, &sites)].push(k);
    }

    let mut outcome = StepOutcome::with_agents(n);
    let mut collected: Vec<(usize, f64)> = Vec::with_capacity(acquisition.len());
    for (agent, ids) in assigned.iter().enumerate() {
        if ids.is_empty() {
            outcome.actions.push(AgentAction::Idle);
            continue;
        }
        let points: Vec<Point> = ids.iter().map(|&k| acquisition[k]).collect();
        let tour = plan_tour(config.position(agent), &points);
        for (&local, &wp) in tour.order.iter().zip(&tour.waypoints) {
            let d = config.move_agent(agent, wp);
            outcome.record_leg(agent, wp, d);
            let y = sampler.sample(wp).map_err(|e| Error::Agent {
                agent,
                source: Box::new(e),
            })?;
            collected.push((ids[local], y));
        }
        outcome.actions.push(AgentAction::Tour {
            waypoints: tour.waypoints,
        });
    }

    collected.sort_by_key(|&(k, _)| k);
    let top = model.top();
    outcome.samples = collected
        .iter()
        .map(|&(k, y)| Sample {
            fidelity: top,
            location: acquisition[k],
            value: y,
        })
        .collect();
    let model = if outcome.samples.is_empty() {
        model
    } else {
        let batch: Vec<_> = outcome
            .samples
            .iter()
            .map(|s| (s.fidelity, s.location, s.value))
            .collect();
        model.add_observations(&batch)?
    };
    Ok((
        DmlcState {
            model,
            config,
            centroids: sites,
            m0,
            params,
            epoch,
        },
        outcome,
    ))
}

/// One Lloyd step on the clamped posterior mean, partitioned by the previous
/// estimated centroids.
pub fn dmlc_coverage_step(state: DmlcState, grid: &GridEnvironment) -> (DmlcState, StepOutcome) {
    let (estimate, _) = estimate_on_grid(&state.model, grid);
    let DmlcState {
        model,
        mut config,
        centroids: sites,
        m0,
        params,
        epoch,
    } = state;
    let partition = voronoi_partition(grid, &sites);
    let estimated = centroids(grid, &partition, &estimate, &sites);
    let mut outcome = StepOutcome::with_agents(config.len());
    for (agent, c) in estimated.iter().enumerate() {
        let d = config.move_agent(agent, *c);
        outcome.record_leg(agent, *c, d);
        outcome.actions.push(AgentAction::Cover { to: *c });
    }
    (
        DmlcState {
            model,
            config,
            centroids: estimated,
            m0,
            params,
            epoch,
        },
        outcome,
    )
}

/// A whole epoch: the learning phase followed by its coverage steps. The
/// first outcome is the learning phase.
pub fn dmlc_epoch<S: Sampler + ?Sized>(
    state: DmlcState,
    grid: &GridEnvironment,
    sampler: &mut S,
) -> Result<(DmlcState, Vec<StepOutcome>)> {
    let steps = coverage_length(&state.params, state.epoch);
    let (mut state, learning) = dmlc_learning_phase(state, grid, sampler)?;
    let mut outcomes = Vec::with_capacity(steps + 1);
    outcomes.push(learning);
    for _ in 0..steps {
        let (next, out) = dmlc_coverage_step(state, grid);
        state = next;
        outcomes.push(out);
    }
    state.epoch += 1;
    Ok((state, outcomes))
}
