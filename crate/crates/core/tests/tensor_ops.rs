use gcad::tensor::{BinaryOp, NodeId, Tape, Tensor, UnaryOp};
use gcad::GcadError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a.at(i, l) * b.at(l, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Compares the tape gradient of `f` at `x` with central differences.
fn check_fd(x: &Tensor, f: impl Fn(&mut Tape, NodeId) -> NodeId) {
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&mut tape, leaf);
    let grads = tape.backward(root).unwrap();
    let analytic = grads.get(leaf).clone();

    let eval = |x: &Tensor| {
        let mut t = Tape::new();
        let l = t.leaf(x.clone());
        let r = f(&mut t, l);
        t.value(r).data()[0]
    };
    let step = 1e-5;
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[k] += step;
        let mut minus = x.clone();
        minus.data_mut()[k] -= step;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
        let g = analytic.data()[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        assert!(rel <= 1e-4, "entry {}: tape {} vs fd {}", k, g, fd);
    }
}

#[test]
fn matmul_examples() {
    let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(Tensor::identity(2).matmul(&m).unwrap(), m);
    let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
    assert_eq!(p.matmul(&b).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    assert!(matches!(
        Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])),
        Err(GcadError::Shape(_))
    ));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let got = a.matmul(&b).unwrap();
        assert_eq!(got.shape(), &[3, 2]);
        for (g, o) in got.data().iter().zip(triple_loop(&a, &b)) {
            assert!((g - o).abs() <= 1e-12 * o.abs().max(1.0));
        }
    }
}

#[test]
fn elementwise_examples() {
    let v = Tensor::vector(vec![-1.0, 0.0, 2.0]);
    assert_eq!(v.relu().data(), &[0.0, 0.0, 2.0]);
    assert_eq!(Tensor::vector(vec![3.0]).square().data(), &[9.0]);
    let s = Tensor::vector(vec![1.0, 2.0])
        .add(&Tensor::vector(vec![3.0, 4.0]))
        .unwrap();
    assert_eq!(s.data(), &[4.0, 6.0]);
    assert!(Tensor::vector(vec![1.0, 2.0])
        .binary(BinaryOp::Mul, &Tensor::vector(vec![1.0, 2.0, 3.0]))
        .is_err());
}

#[test]
fn last_axis_broadcast() {
    let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::vector(vec![10.0, 20.0]);
    assert_eq!(m.add(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.square(x);
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    assert_eq!(g.get(s).data(), &[1.0]);

    // d sum(xW)/dx[r][c] = Σ_k W[c][k]
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![0.3, -0.2, 0.5], vec![1.0, 2.0, 3.0]]).unwrap());
    let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
    let wn = tape.leaf(w);
    let y = tape.matmul(x, wn).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).data(), &[3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
}

#[test]
fn backward_needs_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(GcadError::Contract(_))));
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let w1 = random(&[4, 6], &mut rng);
        let b1 = random(&[6], &mut rng);
        let w2 = random(&[6, 3], &mut rng);
        let b2 = random(&[3], &mut rng);
        let x = random(&[2, 4], &mut rng);
        check_fd(&x, |t, x| {
            let (w1, b1, w2, b2) = (
                t.leaf(w1.clone()),
                t.leaf(b1.clone()),
                t.leaf(w2.clone()),
                t.leaf(b2.clone()),
            );
            let h = t.matmul(x, w1).unwrap();
            let h = t.add(h, b1).unwrap();
            let h = t.relu(h);
            let o = t.matmul(h, w2).unwrap();
            let o = t.add(o, b2).unwrap();
            let o = t.square(o);
            t.mean(o)
        });
    }
}

#[test]
fn shape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 4], &mut rng);
    let other = random(&[4, 3], &mut rng);
    check_fd(&x, |t, x| {
        let xt = t.transpose(x).unwrap();
        let o = t.leaf(other.clone());
        let p = t.mul(xt, o).unwrap();
        let r = t.reshape(p, &[12]).unwrap();
        let e = t.select(r, 5).unwrap();
        let sq = t.unary(UnaryOp::Square, r);
        let s = t.sum(sq);
        let s = t.scale(s, 0.5);
        let d = t.sub(s, e).unwrap();
        t.add(d, e).unwrap()
    });
}

#[test]
fn fan_out_gradients_accumulate() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let z = tape.add(y, x).unwrap();
    let g = tape.backward(z).unwrap();
    assert_eq!(g.get(x).data(), &[7.0]);
}

#[test]
fn tape_replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = random(&[5, 5], &mut rng);
    let x = random(&[3, 5], &mut rng);
    let run = || {
        let mut t = Tape::new();
        let xn = t.leaf(x.clone());
        let wn = t.leaf(w.clone());
        let h = t.matmul(xn, wn).unwrap();
        let h = t.relu(h);
        let s = t.square(h);
        let s = t.sum(s);
        let g = t.backward(s).unwrap();
        (g.get(xn).clone(), g.get(wn).clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn relu_square_chain_matches_fd(values in prop::collection::vec(-2.0f64..2.0, 1..8)) {
        // keep away from the relu kink
        prop_assume!(values.iter().all(|v| v.abs() > 1e-3));
        let x = Tensor::vector(values);
        check_fd(&x, |t, x| {
            let r = t.relu(x);
            let s = t.square(r);
            let m = t.mul(s, x).unwrap();
            t.sum(m)
        });
    }

    #[test]
    fn transpose_is_an_involution(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[rows, cols], &mut rng);
        prop_assert_eq!(a.transpose().unwrap().transpose().unwrap(), a);
    }
}
