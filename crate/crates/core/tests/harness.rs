use mfcov::algorithms::{initial_model, Algorithm, FidelityMode};
use mfcov::geometry::{coverage_loss, eval_test_density, lloyd_step, voronoi_partition};
use mfcov::harness::{
    aggregate, fit, initial_configuration, read_metrics, run_batch, run_experiment, run_rng,
    seed_low_fidelity, write_aggregate, write_metrics, ExperimentConfig, Stream, THREADS_ENV,
};
use mfcov::mfgp::{fit_hyperparameters, KernelParams};

fn small(algorithm: Algorithm, fidelity: FidelityMode) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.algorithm = algorithm;
    c.fidelity = fidelity;
    c.iterations = 20;
    c.runs = 4;
    c
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

#[test]
fn fit_reproduces_the_shipped_hyperparameters() {
    let shipped = ExperimentConfig::default();
    // neutral starting point: the test densities' own parameters, ρ = 1
    let mut cfg = shipped.clone();
    cfg.hyper.multi.low = KernelParams::new(5.0, 0.2).unwrap();
    cfg.hyper.multi.high = KernelParams::new(5.0, 0.05).unwrap();
    cfg.hyper.multi.rho = 1.0;
    cfg.hyper.single.kernel = KernelParams::new(10.0, 0.05).unwrap();
    let report = fit(&cfg).unwrap();
    assert!(report.multi.improved && report.single.improved);
    assert_eq!(report.training_locations.len(), 100);
    let multi = &report.multi.hyper;
    let pinned = &shipped.hyper.multi;
    assert!(close(multi.kernels[0].variance, pinned.low.variance));
    assert!(close(
        multi.kernels[0].lengthscale_sq,
        pinned.low.lengthscale_sq
    ));
    assert!(close(multi.kernels[1].variance, pinned.high.variance));
    assert!(close(
        multi.kernels[1].lengthscale_sq,
        pinned.high.lengthscale_sq
    ));
    assert!(close(multi.rho[0], pinned.rho));
    // the shipped single-fidelity learner shares the high-level kernel
    assert_eq!(shipped.hyper.single.kernel, pinned.high);
}

#[test]
fn refitting_at_the_optimum_gains_nothing_material() {
    let cfg = ExperimentConfig::default();
    let report = fit(&cfg).unwrap();
    let b = &cfg.hyper;
    let data_hyper = report.multi.hyper.clone();
    // rebuild the training data the fit used
    let locs = report.training_locations.clone();
    let low: Vec<f64> = locs.iter().map(|p| cfg.density.low.value_at(p)).collect();
    let high: Vec<f64> = locs.iter().map(|p| cfg.density.high.value_at(p)).collect();
    let data = vec![
        mfcov::mfgp::FidelityDataset::from_samples(0, locs.clone(), low),
        mfcov::mfgp::FidelityDataset::from_samples(1, locs, high),
    ];
    let again = fit_hyperparameters(&data, &data_hyper, &b.fit_bounds, b.fit_budget).unwrap();
    assert!(again.log_likelihood - report.multi.log_likelihood <= 1e-3);
    if !again.improved {
        assert_eq!(again.hyper, data_hyper);
    }
}

#[test]
fn low_fidelity_seed_is_shared_by_every_policy() {
    let cfg = ExperimentConfig::default();
    let a = seed_low_fidelity(&cfg, &mut run_rng(cfg.seed, 3, Stream::LowNoise));
    let model = initial_model(
        FidelityMode::Single,
        &a,
        &cfg.multi_hyper(),
        &cfg.single_hyper(),
        cfg.grid.bounds,
    )
    .unwrap();
    assert_eq!(model.observation_count(), 25);
    assert_eq!(
        initial_configuration(&cfg, 3).unwrap(),
        initial_configuration(&cfg, 3).unwrap()
    );
    assert_ne!(
        initial_configuration(&cfg, 3).unwrap(),
        initial_configuration(&cfg, 4).unwrap()
    );
}

#[test]
fn baseline_descends_on_loss() {
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid_environment().unwrap();
    let truth = eval_test_density(&cfg.density.high, &grid);
    for run in 0..10 {
        let mut config = initial_configuration(&cfg, run).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..60 {
            config = lloyd_step(&grid, &config, &truth);
            let part = voronoi_partition(&grid, config.positions());
            let loss = coverage_loss(&grid, config.positions(), &part, &truth);
            assert!(loss <= prev + 1e-9);
            prev = loss;
        }
        // regret is a difference of losses and may tick up; it must still vanish
        let mut c = cfg.clone();
        c.algorithm = Algorithm::Baseline;
        let rec = run_experiment(&c, run).unwrap();
        let (first, last) = (rec.rows[0].regret, rec.rows.last().unwrap().regret);
        assert!(last < 1e-3 * first, "run {run}: {last} vs {first}");
    }
}

#[test]
fn dmlc_variance_trace_steps_below_each_target() {
    let mut cfg = ExperimentConfig::default();
    cfg.algorithm = Algorithm::Dmlc;
    let grid = cfg.grid_environment().unwrap();
    for mode in [FidelityMode::Multi, FidelityMode::Single] {
        cfg.fidelity = mode;
        let low = seed_low_fidelity(&cfg, &mut run_rng(cfg.seed, 0, Stream::LowNoise));
        let m0 = initial_model(
            mode,
            &low,
            &cfg.multi_hyper(),
            &cfg.single_hyper(),
            cfg.grid.bounds,
        )
        .unwrap()
        .posterior(grid.points())
        .max_variance();
        let rec = run_experiment(&cfg, 0).unwrap();
        assert_eq!(rec.rows.len(), 60);
        let epoch_of = |t: usize| match t {
            1..=4 => 1,
            5..=12 => 2,
            13..=28 => 3,
            _ => 4,
        };
        for (k, row) in rec.rows.iter().enumerate() {
            assert!(row.max_var <= cfg.dmlc.alpha.powi(epoch_of(k + 1)) * m0);
            if k > 0 {
                assert!(row.max_var <= rec.rows[k - 1].max_var);
                if epoch_of(k + 1) == epoch_of(k) {
                    assert_eq!(row.max_var, rec.rows[k - 1].max_var);
                }
            }
        }
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let cfg = small(Algorithm::Smlc, FidelityMode::Multi);
    let parallel = run_batch(&cfg).unwrap();
    std::env::set_var(THREADS_ENV, "1");
    let serial = run_batch(&cfg).unwrap();
    std::env::remove_var(THREADS_ENV);
    assert_eq!(parallel.records, serial.records);
    assert_eq!(parallel.aggregate, serial.aggregate);
    for (k, rec) in parallel.records.iter().enumerate() {
        assert_eq!(rec.run_id, k as u64);
        assert_eq!(rec, &run_experiment(&cfg, k as u64).unwrap());
    }
}

#[test]
fn metric_files_round_trip() {
    let cfg = small(Algorithm::Dmlc, FidelityMode::Single);
    let batch = run_batch(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("dmlc_single.csv");
    let agg = dir.path().join("dmlc_single_aggregate.csv");
    write_metrics(&batch.records, cfg.seed, &runs).unwrap();
    write_aggregate(&batch.aggregate, cfg.seed, &agg).unwrap();

    let back = read_metrics(&runs).unwrap();
    assert_eq!(back.len(), batch.records.len());
    for (a, b) in back.iter().zip(&batch.records) {
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.series, b.series);
    }
    assert_eq!(aggregate(&back).unwrap(), batch.aggregate);

    let text = std::fs::read_to_string(&agg).unwrap();
    assert!(text.starts_with(&format!("# master_seed={}\n", cfg.seed)));
    assert_eq!(text.lines().count(), 2 + cfg.iterations);
}

#[test]
fn metrics_are_well_formed() {
    for (algorithm, fidelity) in [
        (Algorithm::Smlc, FidelityMode::Multi),
        (Algorithm::Smlc, FidelityMode::Single),
        (Algorithm::Dmlc, FidelityMode::Multi),
        (Algorithm::Baseline, FidelityMode::Multi),
    ] {
        let cfg = small(algorithm, fidelity);
        let rec = run_experiment(&cfg, 1).unwrap();
        assert_eq!(rec.rows.len(), cfg.iterations);
        let mut cum = 0.0;
        for (k, row) in rec.rows.iter().enumerate() {
            assert_eq!(row.iteration, k + 1);
            assert!(row.regret >= -1e-9 && row.mse >= 0.0 && row.max_var >= 0.0);
            cum += row.regret;
            assert!((row.cum_regret - cum).abs() < 1e-12);
        }
        for w in rec.rows.windows(2) {
            assert!(w[1].cum_regret >= w[0].cum_regret - 1e-9);
            assert!(w[1].mean_distance >= w[0].mean_distance);
        }
        let mean =
            rec.final_agent_distances.iter().sum::<f64>() / rec.final_agent_distances.len() as f64;
        assert!((mean - rec.rows.last().unwrap().mean_distance).abs() < 1e-12);
    }
}
