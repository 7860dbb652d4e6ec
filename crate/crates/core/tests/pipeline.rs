//! Small end-to-end run: BO sampling, offline training, online prediction
//! and UQ on a 16x16 plate.

use rom_core::bo::BoRunConfig;
use rom_core::hfm::{GridConfig, ParameterSpace, PlateModel, SourceConfig, TimeConfig};
use rom_core::nn::TrainConfig;
use rom_core::rom::{nrmse, train_offline, RomBundle, RomConfig};
use rom_core::uq::{self, BundleSurrogate, DesignMode, McOptions};

fn tiny_plate() -> PlateModel {
    let grid = GridConfig {
        nx: 16,
        ny: 16,
        ..GridConfig::default()
    };
    let source = SourceConfig::centered(&grid);
    PlateModel {
        grid,
        time: TimeConfig {
            steps: 200,
            keep_every: 10,
            ..TimeConfig::default()
        },
        source,
    }
}

fn stage(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        epochs,
        seed: 0,
    }
}

#[test]
fn offline_online_and_uq() {
    let model = tiny_plate();
    let space = ParameterSpace::plate();
    let mut bo = BoRunConfig {
        n_init: 3,
        n_test: 2,
        max_train: 5,
        eps_tol: 1e-12,
        seed: 17,
        ..BoRunConfig::default()
    };
    bo.acquisition.pool_size = 100;
    let rom = RomConfig {
        window: 4,
        cae: stage(3),
        ffnn: stage(3),
        lstm: stage(3),
        seed: 5,
        ..RomConfig::default()
    };
    let (bundle, report, outcome) = train_offline(&model, &space, &bo, &rom).unwrap();
    assert_eq!(outcome.train.len(), 5);
    assert!(!outcome.trace.converged);
    assert_eq!(report.rank, outcome.basis.rank());
    assert_eq!(bundle.n_h(), 256);

    let n_t = bundle.times.len();
    let theta = &outcome.test.thetas[0];
    let p = bundle.predict(theta, n_t).unwrap();
    assert_eq!(p.snapshot.values.shape(), (256, n_t));
    assert!(p.snapshot.values.iter().all(|v| v.is_finite()));
    assert!(!p.extrapolated);
    let truth = &outcome.test.snapshots[0];
    assert!(nrmse(&truth.values, &p.snapshot.values, n_t - 1).unwrap().is_finite());

    // persisted bundles predict bit-identically
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let loaded = RomBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.predict(theta, n_t).unwrap().snapshot.values, p.snapshot.values);

    let surrogate = BundleSurrogate { bundle: &bundle, n_t };
    let samples = uq::sample_gaussian(&space, 16, 3);
    let mc = uq::monte_carlo_uq(&surrogate, &samples, &McOptions { chunk: 5, track_rows: vec![0, 100] }).unwrap();
    assert_eq!(mc.r, 16);
    assert!(mc.std.iter().all(|&s| s >= 0.0));
    assert_eq!(mc.traces[1].len(), 16);

    let design = uq::saltelli_sample(&space, 8, 9, DesignMode::Sobol).unwrap();
    let outputs = uq::evaluate_design(&surrogate, &design, &|f| vec![f[(100, n_t - 1)]], 16).unwrap();
    let sobol = uq::analyze(&outputs, 10, 1).unwrap();
    assert_eq!(sobol.indices.len(), 4);
}
