//! Data, baseline and checkpoint plumbing on the synthetic task.

use etnode_core::checkpoint::Checkpoint;
use etnode_core::data::{make_windows, make_windows_resampled, resample_half};
use etnode_core::odenet::TimeGrid;
use etnode_core::synthetic::{gen_synthetic, SyntheticSpec};
use etnode_core::training::{evaluate, evaluation_windows, offset_metrics, persistence_baseline, predict, train};
use etnode_core::{ModelConfig, SolverConfig, SolverMethod, Variant};

#[test]
fn training_mean_does_not_beat_persistence() {
    let series = gen_synthetic(0, &SyntheticSpec::default()).unwrap();
    let data = make_windows(&series, 20, 3).unwrap();
    let grid = TimeGrid::integers(3).unwrap();
    let windows = evaluation_windows(&data, &grid).unwrap();
    let mean = data.stats.last().unwrap().mean;
    let base = persistence_baseline(&data, &grid).unwrap();
    for (k, &m) in grid.offsets().iter().enumerate() {
        let residuals: Vec<f64> = windows
            .iter()
            .map(|&i| mean - data.denormalize_target(data.truth(i, m).unwrap()))
            .collect();
        let flat = offset_metrics(m, &residuals);
        assert!(flat.rmse >= base[k].rmse, "offset {m}: {} < {}", flat.rmse, base[k].rmse);
    }
}

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        window: 6,
        horizon: 2,
        hidden: 3,
        latent: 4,
        epochs: 2,
        batch_size: 16,
        variant,
        solver: SolverConfig::fixed(SolverMethod::Rk4, 0.5),
        ..ModelConfig::default()
    }
}

#[test]
fn reloaded_checkpoint_predicts_identically() {
    let spec = SyntheticSpec {
        len: 240,
        ..SyntheticSpec::default()
    };
    let data = make_windows(&gen_synthetic(2, &spec).unwrap(), 6, 2).unwrap();
    let grid = TimeGrid::new(vec![0.5, 1.0, 1.7, 2.0]).unwrap();
    let windows: Vec<usize> = data.test.clone().collect();
    for v in [Variant::Full, Variant::NoAtt] {
        let ckpt = train(&tiny(v), &data).unwrap();
        let back = Checkpoint::parse(&ckpt.to_text()).unwrap();
        assert_eq!(
            predict(&ckpt, &data, &grid, &windows).unwrap(),
            predict(&back, &data, &grid, &windows).unwrap()
        );
    }
}

#[test]
fn half_offsets_are_scored_against_held_out_samples() {
    let spec = SyntheticSpec {
        len: 400,
        ..SyntheticSpec::default()
    };
    let series = gen_synthetic(6, &spec).unwrap();
    let data = make_windows_resampled(&resample_half(&series).unwrap(), 6, 2).unwrap();
    let ckpt = train(&tiny(Variant::Full), &data).unwrap();
    let grid = TimeGrid::new(vec![1.0, 1.5, 2.0]).unwrap();
    let metrics = evaluate(&ckpt, &data, &grid).unwrap();
    let windows = evaluation_windows(&data, &grid).unwrap();
    assert!(metrics.iter().all(|m| m.count == windows.len() && m.rmse.is_finite()));
    // offset 1.5 after kept row e is original row 2e + 3
    for &i in &windows {
        let e = data.window_end(i);
        let got = data.denormalize_target(data.truth(i, 1.5).unwrap());
        assert!((got - series.target()[2 * e + 3]).abs() < 1e-9);
    }
    // offsets past the horizon have no ground truth here
    let far = TimeGrid::new(vec![40.0]).unwrap();
    assert!(evaluate(&ckpt, &data, &far).is_err());
}
