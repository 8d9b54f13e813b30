use crate::geometry::{lloyd_step, DensityField, GridEnvironment, TeamConfiguration};

/// Lloyd iteration on the true density. Returns the configuration after
/// each of the `iterations` steps.
pub fn known_density_baseline(
    config: &TeamConfiguration,
    grid: &GridEnvironment,
    true_density: &DensityField,
    iterations: usize,
) -> Vec<TeamConfiguration> {
    let mut trajectory = Vec::with_capacity(iterations);
    let mut current = config.clone();
    for _ in 0..iterations {
        current = lloyd_step(grid, &current, true_density);
        trajectory.push(current.clone());
    }
    trajectory
}
