use gcad::data::{Anomaly, AnomalyKind, Nonlinearity};
use gcad::{Dataset, GcadError, SynthSpec};
use nalgebra::{DMatrix, DVector};

fn rows(d: &Dataset) -> Vec<Vec<f64>> {
    (0..d.len()).map(|t| d.row(t).to_vec()).collect()
}

fn replay_residual(spec: &SynthSpec) -> f64 {
    let out = spec.generate().unwrap();
    let mut x = rows(&out.train);
    x.extend(rows(&out.test));
    let p = spec.order();
    let mut worst: f64 = 0.0;
    for t in p..x.len() {
        for j in 0..spec.n_channels {
            let mut v = 0.0;
            for (k, lag) in spec.coefficients.iter().enumerate() {
                for (i, row) in lag.iter().enumerate() {
                    v += row[j] * x[t - 1 - k][i];
                }
            }
            if spec.nonlinearity == Nonlinearity::Tanh {
                v = v.tanh();
            }
            worst = worst.max((x[t][j] - v).abs());
        }
    }
    worst
}

/// Least-squares coefficients of `x_target` on both lags of every channel,
/// fitted on the targets in `steps`.
fn refit(x: &[Vec<f64>], target: usize, steps: impl Iterator<Item = usize>) -> DVector<f64> {
    let n = x[0].len();
    let steps: Vec<usize> = steps.collect();
    let design = DMatrix::from_fn(steps.len(), 2 * n, |r, c| x[steps[r] - 1 - c / n][c % n]);
    let y = DVector::from_iterator(steps.len(), steps.iter().map(|&t| x[t][target]));
    design.svd(true, true).solve(&y, 1e-12).unwrap()
}

#[test]
fn noiseless_series_follows_the_recurrence() {
    let spec = SynthSpec {
        noise_std: 0.0,
        anomalies: vec![],
        train_length: 800,
        test_length: 400,
        burn_in: 50,
        ..SynthSpec::default_benchmark()
    };
    assert!(replay_residual(&spec) < 1e-12);
    let tanh = SynthSpec {
        nonlinearity: Nonlinearity::Tanh,
        ..spec
    };
    assert!(replay_residual(&tanh) < 1e-12);
}

#[test]
fn severed_edge_vanishes_from_a_refit() {
    let spec = SynthSpec::default_benchmark();
    let out = spec.generate().unwrap();
    let x = rows(&out.test);
    // regressor 0 is x_0 at lag 1, whose true weight on x_1 is 1.5
    let inside = refit(&x, 1, 1000..1200);
    let outside = refit(&x, 1, 2..1000);
    assert!(inside[0].abs() < 0.1, "inside {}", inside[0]);
    assert!((outside[0] - 1.5).abs() < 0.05, "outside {}", outside[0]);
}

#[test]
fn rewire_moves_the_driver() {
    let spec = SynthSpec::default_benchmark();
    let x = rows(&spec.generate().unwrap().test);
    // channel 3 at lag 1 drives channel 2 with 1.5; inside the rewire it drives 1 instead
    let to2 = refit(&x, 2, 2500..2700);
    let to1 = refit(&x, 1, 2500..2700);
    assert!(to2[3].abs() < 0.1, "{}", to2[3]);
    assert!((to1[3] - 1.5).abs() < 0.1, "{}", to1[3]);
}

#[test]
fn labels_cover_the_intervals() {
    let mut spec = SynthSpec::default_benchmark();
    let out = spec.generate().unwrap();
    let labels = out.test.labels().unwrap();
    assert_eq!(labels.iter().filter(|&&l| l).count(), 600);
    assert!(labels[1000] && labels[1199] && !labels[1200] && !labels[999]);
    assert!(out.train.labels().is_none());

    spec.anomalies.push(Anomaly {
        start: 1100,
        end: 1300,
        kind: AnomalyKind::Spike {
            channel: 2,
            magnitude: 3.0,
        },
    });
    let labels = spec.generate().unwrap().test.labels().unwrap().to_vec();
    assert_eq!(labels.iter().filter(|&&l| l).count(), 700);
}

#[test]
fn spike_shifts_only_its_channel() {
    let base = SynthSpec {
        noise_std: 0.0,
        coefficients: vec![vec![vec![0.0; 2]; 2]],
        n_channels: 2,
        anomalies: vec![Anomaly {
            start: 3,
            end: 5,
            kind: AnomalyKind::Spike {
                channel: 1,
                magnitude: 2.5,
            },
        }],
        train_length: 10,
        test_length: 8,
        ..SynthSpec::default_benchmark()
    };
    let test = base.generate().unwrap().test;
    for t in 0..8 {
        assert_eq!(test.row(t)[0], 0.0);
        assert_eq!(test.row(t)[1], if (3..5).contains(&t) { 2.5 } else { 0.0 });
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = SynthSpec {
        train_length: 500,
        test_length: 300,
        anomalies: vec![],
        ..SynthSpec::default_benchmark()
    };
    let a = spec.generate().unwrap();
    let b = spec.generate().unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    let other = SynthSpec { seed: 8, ..spec }.generate().unwrap();
    assert_ne!(a.train, other.train);
}

#[test]
fn invalid_specs_are_config_errors() {
    let mut unstable = SynthSpec::default_benchmark();
    unstable.coefficients[0][1][1] = 1.1;
    assert!(matches!(unstable.generate(), Err(GcadError::Config(_))));

    let mut out_of_range = SynthSpec::default_benchmark();
    out_of_range.anomalies[2].end = 6000;
    assert!(matches!(out_of_range.validate(), Err(GcadError::Config(_))));

    let mut bad_channel = SynthSpec::default_benchmark();
    bad_channel.anomalies[0].kind = AnomalyKind::SeverEdge { from: 0, to: 9 };
    assert!(bad_channel.validate().is_err());

    let negative_noise = SynthSpec {
        noise_std: -0.1,
        ..SynthSpec::default_benchmark()
    };
    assert!(negative_noise.validate().is_err());
}

#[test]
fn adjacency_matches_coefficient_support() {
    let spec = SynthSpec::default_benchmark();
    let adj = spec.generate().unwrap().adjacency;
    for (i, row) in adj.iter().enumerate() {
        for (j, &edge) in row.iter().enumerate() {
            let support = spec.coefficients.iter().any(|lag| lag[i][j] != 0.0);
            assert_eq!(edge, support);
        }
    }
    assert!(adj[0][1] && adj[3][2] && !adj[1][0]);
}

#[test]
fn spec_json_roundtrip() {
    let spec = SynthSpec::default_benchmark();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<SynthSpec>(&text).unwrap(), spec);
}
