use rand::Rng;

use super::{estimate_on_grid, global_argmax, AgentAction, Sample, Sampler, StepOutcome};
use crate::error::{Error, Result};
use crate::geometry::{
    argmax_in_cell, centroids, voronoi_partition, GridEnvironment, Point, TeamConfiguration,
};
use crate::mfgp::MfgpModel;

/// `F(u) = u^γ` on `u = cell_max / m0`, clamped to `[0, 1]`.
pub fn learning_probability(cell_max_variance: f64, m0: f64, gamma: f64) -> f64 {
    (cell_max_variance / m0).clamp(0.0, 1.0).powf(gamma)
}

#[derive(Clone, Debug)]
pub struct SmlcState {
    pub model: MfgpModel,
    pub config: TeamConfiguration,
    /// Estimated centroids from the previous iteration; they generate the
    /// next Voronoi partition. Initially the agents' starting positions.
    pub centroids: Vec<Point>,
    /// Maximum posterior variance over the grid before any agent moved.
    pub m0: f64,
    pub gamma: f64,
    pub iteration: usize,
}

impl SmlcState {
    pub fn new(
        model: MfgpModel,
        config: TeamConfiguration,
        gamma: f64,
        grid: &GridEnvironment,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!(
                "exploration exponent must be positive, got {gamma}"
            )));
        }
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
            gamma,
            iteration: 0,
        })
    }
}

/// One SMLC iteration.
///
/// Every agent decides from the model as it stood at the start of the
/// iteration; samples collected during the iteration are folded in at the end.
pub fn smlc_iteration<S: Sampler + ?Sized, R: Rng + ?Sized>(
    state: SmlcState,
    grid: &GridEnvironment,
    sampler: &mut S,
    rng: &mut R,
) -> Result<(SmlcState, StepOutcome)> {
    let SmlcState {
        model,
        mut config,
        centroids: sites,
        m0,
        gamma,
        iteration,
    } = state;
    let n = config.len();
    let (estimate, variances) = estimate_on_grid(&model, grid);
    let partition = voronoi_partition(grid, &sites);
    let estimated = centroids(grid, &partition, &estimate, &sites);
    let top = model.top();

    let mut outcome = StepOutcome::with_agents(n);
    for agent in 0..n {
        let target = argmax_in_cell(&partition, agent, &variances).ok();
        let cell_max = target.map_or(0.0, |j| variances[j]);
        let p = learning_probability(cell_max, m0, gamma);
        // one draw per agent keeps the stream aligned across policies
        let u: f64 = rng.random();
        match target {
            Some(j) if u < p => {
                let x = grid.point(j);
                let y = sampler.sample(x).map_err(|e| Error::Agent {
                    agent,
                    source: Box::new(e),
                })?;
                let d = config.move_agent(agent, x);
                outcome.record_leg(agent, x, d);
                outcome.actions.push(AgentAction::Learn { at: x });
                outcome.samples.push(Sample {
                    fidelity: top,
                    location: x,
                    value: y,
                });
            }
            _ => {
                let c = estimated[agent];
                let d = config.move_agent(agent, c);
                outcome.record_leg(agent, c, d);
                outcome.actions.push(AgentAction::Cover { to: c });
            }
        }
    }

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
        SmlcState {
            model,
            config,
            centroids: estimated,
            m0,
            gamma,
            iteration: iteration + 1,
        },
        outcome,
    ))
}
