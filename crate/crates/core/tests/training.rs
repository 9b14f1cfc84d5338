use gcad::data::make_windows;
use gcad::predictor::{mean_mse, train, Optimizer};
use gcad::{Dataset, GcadError, MixerConfig, SynthSpec, Tensor, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn windows_of(rows: &[Vec<f64>], tau: usize) -> Vec<Window> {
    make_windows(&Dataset::from_rows(rows, None).unwrap(), tau, 1)
        .unwrap()
        .windows
}

/// Noiseless `x_t = A x_{t-1}` trajectories from random starting points.
fn var1_trajectories(count: usize, len: usize, tau: usize, seed: u64) -> Vec<Window> {
    let a = [[0.9, 0.3, 0.0], [-0.3, 0.9, 0.0], [0.4, 0.0, 0.5]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rows = vec![x.clone()];
        for _ in 1..len {
            x = (0..3)
                .map(|j| (0..3).map(|i| a[j][i] * x[i]).sum())
                .collect();
            rows.push(x.clone());
        }
        out.extend(windows_of(&rows, tau));
    }
    out
}

fn noisy_series(len: usize, seed: u64) -> Vec<Window> {
    let spec = SynthSpec {
        train_length: len,
        test_length: 10,
        anomalies: vec![],
        seed,
        ..SynthSpec::default_benchmark()
    };
    let out = spec.generate().unwrap();
    let (norm, _, _) = gcad::data::minmax_normalize(&out.train, &[]).unwrap();
    make_windows(&norm, 4, 1).unwrap().windows
}

#[test]
fn constant_series_is_fit_exactly() {
    let rows = vec![vec![0.7, 0.7]; 400];
    let windows = windows_of(&rows, 3);
    let config = MixerConfig {
        epochs: 50,
        seed: 2,
        ..MixerConfig::new(2, 3)
    };
    let out = train(&windows, &[], &config).unwrap();
    let mse = mean_mse(&out.model, &windows).unwrap();
    assert!(mse <= 1e-6, "mse {}", mse);
}

#[test]
fn noiseless_var1_is_learned() {
    let tau = 2;
    let train_set = var1_trajectories(40, 60, tau, 1);
    let held_out = var1_trajectories(10, 60, tau, 2);
    let config = MixerConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 3e-3,
        seed: 4,
        ..MixerConfig::new(3, tau)
    };
    let out = train(&train_set, &[], &config).unwrap();
    let mse = mean_mse(&out.model, &held_out).unwrap();
    assert!(mse <= 1e-3, "held-out mse {}", mse);
}

#[test]
fn training_loss_is_non_increasing_at_default_rate() {
    let windows = noisy_series(2000, 3);
    let config = MixerConfig {
        epochs: 20,
        ..MixerConfig::new(5, 4)
    };
    let out = train(&windows, &[], &config).unwrap();
    let mses: Vec<f64> = out.log.iter().map(|l| l.train_mse).collect();
    for pair in mses.windows(2) {
        assert!(pair[1] <= pair[0], "{:?}", mses);
    }
}

#[test]
fn fixed_seed_gives_identical_weights() {
    let windows = noisy_series(600, 5);
    let config = MixerConfig {
        epochs: 3,
        seed: 11,
        ..MixerConfig::new(5, 4)
    };
    let a = train(&windows, &windows[..50], &config).unwrap();
    let b = train(&windows, &windows[..50], &config).unwrap();
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    assert_eq!(a.log, b.log);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let windows = noisy_series(600, 6);
    let (train_part, val) = windows.split_at(450);
    let config = MixerConfig {
        epochs: 40,
        patience: Some(2),
        optimizer: Optimizer::Adam,
        learning_rate: 5e-2,
        ..MixerConfig::new(5, 4)
    };
    let out = train(train_part, val, &config).unwrap();
    let best = out
        .log
        .iter()
        .filter_map(|l| l.val_mse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.log[out.best_epoch].val_mse, Some(best));
    assert!((mean_mse(&out.model, val).unwrap() - best).abs() <= 1e-12 * best);
}

#[test]
fn empty_training_set_is_a_data_error() {
    let config = MixerConfig::new(2, 3);
    assert!(matches!(train(&[], &[], &config), Err(GcadError::Data(_))));
}

#[test]
fn mismatched_windows_are_rejected() {
    let w = Window {
        x: Tensor::zeros(&[3, 3]),
        y: Tensor::zeros(&[3]),
        target: 3,
    };
    assert!(train(&[w], &[], &MixerConfig::new(2, 3)).is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let windows = noisy_series(300, 8);
    let config = MixerConfig {
        learning_rate: 1e6,
        epochs: 5,
        ..MixerConfig::new(5, 4)
    };
    match train(&windows, &[], &config) {
        Err(GcadError::Training { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}
