use approx::assert_relative_eq;
use gcad::predictor::mean_mse;
use gcad::{channel_loss, GcadError, MixerConfig, MixerModel, Tensor, Window};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(n: usize, tau: usize, layers: usize, seed: u64) -> MixerConfig {
    MixerConfig {
        n_layers: layers,
        temporal_hidden: 3,
        feature_hidden: 4,
        seed,
        ..MixerConfig::new(n, tau)
    }
}

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// `L · vec(X) · W + b`, evaluated with plain loops.
fn linear_oracle(layers: usize, w: &Tensor, b: &Tensor, x: &Tensor) -> Vec<f64> {
    let (n, tau) = (x.rows(), x.cols());
    (0..n)
        .map(|j| {
            let mut s = b.data()[j];
            for i in 0..n {
                for lag in 0..tau {
                    s += layers as f64 * x.at(i, lag) * w.at(i * tau + lag, j);
                }
            }
            s
        })
        .collect()
}

#[test]
fn zero_head_gives_zero_output_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = MixerModel::new(config(3, 4, 2, 5)).unwrap();
    model.zero_head();
    let x = random(&[3, 4], 1.0, &mut rng);
    assert!(model.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    let g = model
        .input_gradients(&x, &Tensor::vector(vec![0.3, -0.1, 2.0]))
        .unwrap();
    assert!(g.values().iter().all(|&v| v == 0.0));
}

#[test]
fn linear_model_forward_and_gradient_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for layers in 1..=2 {
        let (n, tau) = (3, 2);
        let w = random(&[n * tau, n], 1.0, &mut rng);
        let b = random(&[n], 1.0, &mut rng);
        let model = MixerModel::linear(config(n, tau, layers, 0), w.clone(), b.clone()).unwrap();
        let x = random(&[n, tau], 1.0, &mut rng);
        let y = random(&[n], 1.0, &mut rng);
        let yhat = model.forward(&x).unwrap();
        let oracle = linear_oracle(layers, &w, &b, &x);
        for (a, o) in yhat.data().iter().zip(&oracle) {
            assert_relative_eq!(*a, *o, max_relative = 1e-12);
        }
        let g = model.input_gradients(&x, &y).unwrap();
        for j in 0..n {
            let r = oracle[j] - y.data()[j];
            for i in 0..n {
                for lag in 0..tau {
                    let expected = 2.0 * r * layers as f64 * w.at(i * tau + lag, j);
                    assert_relative_eq!(g.get(i, j, lag), expected, max_relative = 1e-10, epsilon = 1e-14);
                }
            }
        }
    }
}

#[test]
fn forward_rejects_bad_input() {
    let model = MixerModel::new(config(2, 3, 1, 0)).unwrap();
    assert!(matches!(model.forward(&Tensor::zeros(&[3, 2])), Err(GcadError::Shape(_))));
    let mut bad = Tensor::zeros(&[2, 3]);
    bad.set(1, 1, f64::NAN);
    assert!(matches!(model.forward(&bad), Err(GcadError::Data(_))));
}

#[test]
fn channel_loss_examples() {
    let y = Tensor::vector(vec![0.5, -2.0]);
    assert!(channel_loss(&y, &y).unwrap().data().iter().all(|&v| v == 0.0));
    let l = channel_loss(&Tensor::vector(vec![1.0, 3.0]), &Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert_eq!(l.data(), &[1.0, 4.0]);
    assert!(channel_loss(&Tensor::vector(vec![1.0]), &y).is_err());
}

#[test]
fn gradients_are_reproducible_across_model_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = MixerModel::new(config(4, 3, 2, 17)).unwrap();
    let b = MixerModel::from_json(&a.to_json().unwrap()).unwrap();
    let x = random(&[4, 3], 1.0, &mut rng);
    let y = random(&[4], 1.0, &mut rng);
    assert_eq!(
        a.input_gradients(&x, &y).unwrap().values(),
        b.input_gradients(&x.clone(), &y.clone()).unwrap().values()
    );
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 40,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x6cad),
        ..ProptestConfig::default()
    })]

    #[test]
    fn input_gradients_match_finite_differences(
        n in 1usize..=5,
        tau in 1usize..=4,
        layers in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MixerModel::new(config(n, tau, layers, seed)).unwrap();
        let x = random(&[n, tau], 1.0, &mut rng);
        let y = random(&[n], 1.0, &mut rng);
        let g = model.input_gradients(&x, &y).unwrap();
        let loss = |x: &Tensor, j: usize| {
            channel_loss(&model.forward(x).unwrap(), &y).unwrap().data()[j]
        };
        let step = 1e-5;
        for j in 0..n {
            for i in 0..n {
                for lag in 0..tau {
                    let mut plus = x.clone();
                    plus.set(i, lag, x.at(i, lag) + step);
                    let mut minus = x.clone();
                    minus.set(i, lag, x.at(i, lag) - step);
                    let fd = (loss(&plus, j) - loss(&minus, j)) / (2.0 * step);
                    let a = g.get(i, j, lag);
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    prop_assert!(rel <= 1e-4, "({}, {}, {}): {} vs {}", i, j, lag, a, fd);
                }
            }
        }
    }

    #[test]
    fn channel_loss_matches_loop(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let l = channel_loss(&Tensor::vector(a.clone()), &Tensor::vector(b.clone())).unwrap();
        for k in 0..a.len() {
            let d = a[k] - b[k];
            prop_assert_eq!(l.data()[k], d * d);
        }
    }

    #[test]
    fn summed_channel_loss_is_n_times_mse(n in 1usize..=5, tau in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MixerModel::new(config(n, tau, 1, seed)).unwrap();
        let w = Window { x: random(&[n, tau], 1.0, &mut rng), y: random(&[n], 1.0, &mut rng), target: tau };
        let total = channel_loss(&model.forward(&w.x).unwrap(), &w.y).unwrap().sum();
        let mse = mean_mse(&model, std::slice::from_ref(&w)).unwrap();
        prop_assert!((total - n as f64 * mse).abs() <= 1e-12 * total.max(1.0));
    }
}
