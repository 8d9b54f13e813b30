use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mfcov::algorithms::{
    dmlc_virtual_sampling, initial_model, smlc_iteration, DmlcState, NoisySampler, SmlcState,
};
use mfcov::geometry::{eval_test_density, lloyd_step};
use mfcov::harness::{initial_configuration, run_rng, seed_low_fidelity, Stream};
use mfcov::{ExperimentConfig, FidelityMode, GridEnvironment, MfgpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(mode: FidelityMode) -> (ExperimentConfig, GridEnvironment, MfgpModel) {
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid_environment().unwrap();
    let low = seed_low_fidelity(&cfg, &mut run_rng(cfg.seed, 0, Stream::LowNoise));
    let model = initial_model(
        mode,
        &low,
        &cfg.multi_hyper(),
        &cfg.single_hyper(),
        cfg.grid.bounds,
    )
    .unwrap();
    (cfg, grid, model)
}

fn posterior(c: &mut Criterion) {
    let (_, grid, model) = setup(FidelityMode::Multi);
    c.bench_function("posterior_on_grid", |b| {
        b.iter(|| model.posterior(black_box(grid.points())))
    });
}

fn virtual_sampling(c: &mut Criterion) {
    for mode in [FidelityMode::Multi, FidelityMode::Single] {
        let (cfg, grid, model) = setup(mode);
        let state = DmlcState::new(
            model,
            initial_configuration(&cfg, 0).unwrap(),
            cfg.dmlc,
            &grid,
        )
        .unwrap();
        let target = state.variance_target();
        c.bench_function(&format!("dmlc_virtual_sampling_{mode}"), |b| {
            b.iter(|| dmlc_virtual_sampling(&state.model, &grid, black_box(target)).unwrap())
        });
    }
}

fn lloyd(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid_environment().unwrap();
    let truth = eval_test_density(&cfg.density.high, &grid);
    let start = initial_configuration(&cfg, 0).unwrap();
    c.bench_function("lloyd_step", |b| {
        b.iter(|| lloyd_step(&grid, black_box(&start), &truth))
    });
}

fn smlc(c: &mut Criterion) {
    let (cfg, grid, model) = setup(FidelityMode::Multi);
    let state = SmlcState::new(
        model,
        initial_configuration(&cfg, 0).unwrap(),
        cfg.smlc.gamma,
        &grid,
    )
    .unwrap();
    c.bench_function("smlc_iteration", |b| {
        b.iter_batched(
            || {
                let sampler = NoisySampler::new(
                    cfg.density.high,
                    cfg.high_fidelity.noise_var,
                    cfg.grid.bounds,
                    ChaCha8Rng::seed_from_u64(1),
                )
                .unwrap();
                (state.clone(), sampler, ChaCha8Rng::seed_from_u64(2))
            },
            |(s, mut sampler, mut rng)| smlc_iteration(s, &grid, &mut sampler, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, posterior, virtual_sampling, lloyd, smlc);
criterion_main!(benches);
