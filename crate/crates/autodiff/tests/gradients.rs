use std::sync::Arc;

use autodiff::gradcheck::{numerical_gradient, relative_error};
use autodiff::{concat_cols, Tape, Tensor, UnaryOp, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Weights the output with a fixed random tensor so every output element
/// contributes a distinct amount to the scalar loss.
fn probe<'t>(out: Var<'t>, weights: &Tensor) -> Var<'t> {
    let w = out.tape().constant(weights.clone().reshape(out.shape()).unwrap());
    out.mul(w).unwrap().sum()
}

/// Checks analytic against numerical gradients for every input of `build`.
fn check(build: impl for<'s, 't> Fn(&'s [Var<'t>]) -> Var<'t>, inputs: Vec<Tensor>, out_len: usize, seed: u64, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Tensor::vector((0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect());

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = probe(build(&vars), &weights);
    let grads = tape.backward(loss).unwrap();

    let eval = |ts: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        probe(build(&vars), &weights).value().item()
    };
    for (k, v) in vars.iter().enumerate() {
        let numeric = numerical_gradient(eval, &inputs, k, STEP);
        let analytic = grads.wrt(*v);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            // Below 1e-3 the finite-difference roundoff (~eps*|f|/h) dominates, so compare absolutely there.
            let err = relative_error(*a, *n, 1e-3);
            assert!(err < tol, "input {k}: analytic {a} numeric {n} rel err {err}");
        }
    }
}

const UNARY: [UnaryOp; 7] = [
    UnaryOp::Neg,
    UnaryOp::Sigmoid,
    UnaryOp::Tanh,
    UnaryOp::Silu,
    UnaryOp::Square,
    UnaryOp::Softplus,
    UnaryOp::Scale(-1.7),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unary_primitives_match_finite_differences(seed in 0u64..10_000, which in 0usize..UNARY.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4]);
        let kind = UNARY[which];
        check(move |v| v[0].unary(kind), vec![x], 12, seed, 1e-6);
    }

    #[test]
    fn binary_primitives_match_finite_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 3]);
        check(|v| v[0].add(v[1]).unwrap(), vec![a.clone(), b.clone()], 6, seed, 1e-6);
        check(|v| v[0].sub(v[1]).unwrap(), vec![a.clone(), b.clone()], 6, seed, 1e-6);
        check(|v| v[0].mul(v[1]).unwrap(), vec![a, b], 6, seed, 1e-6);
    }

    #[test]
    fn matmul_matches_finite_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        check(|v| v[0].matmul(v[1]).unwrap(), vec![a, b], 6, seed, 1e-6);
    }

    #[test]
    fn broadcasts_and_reductions_match_finite_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[4, 3]);
        let row = random(&mut rng, &[3]);
        let col = random(&mut rng, &[4, 1]);
        check(|v| v[0].add_row(v[1]).unwrap(), vec![a.clone(), row], 12, seed, 1e-6);
        check(|v| v[0].mul_col(v[1]).unwrap(), vec![a.clone(), col], 12, seed, 1e-6);
        let scale: Arc<[f64]> = Arc::from(vec![0.5, -1.0, 2.0, 0.0]);
        check(move |v| v[0].scale_rows(scale.clone()).unwrap(), vec![a.clone()], 12, seed, 1e-6);
        check(|v| v[0].sum_axis(0).unwrap(), vec![a.clone()], 3, seed, 1e-6);
        check(|v| v[0].sum_axis(1).unwrap(), vec![a.clone()], 4, seed, 1e-6);
        check(|v| v[0].row_sq_norm().unwrap(), vec![a.clone()], 4, seed, 1e-6);
        check(|v| v[0].mean(), vec![a.clone()], 1, seed, 1e-6);
        check(|v| v[0].sum(), vec![a], 1, seed, 1e-6);
    }

    #[test]
    fn indexing_ops_match_finite_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[4, 2]);
        let b = random(&mut rng, &[4, 3]);
        let idx: Arc<[usize]> = Arc::from(vec![3, 0, 0, 2, 1]);
        let i2 = idx.clone();
        check(move |v| v[0].gather(i2.clone()).unwrap(), vec![a.clone()], 10, seed, 1e-6);
        let dst: Arc<[usize]> = Arc::from(vec![1, 1, 0, 2]);
        check(move |v| v[0].scatter_add(dst.clone(), 3).unwrap(), vec![a.clone()], 6, seed, 1e-6);
        check(|v| concat_cols(&[v[0], v[1], v[0]]).unwrap(), vec![a, b], 28, seed, 1e-6);
    }
}

#[test]
fn tanh_gradient_at_point_three() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.3));
    let g = tape.backward(x.tanh()).unwrap().wrt(x).item();
    let fd = ((0.3f64 + STEP).tanh() - (0.3f64 - STEP).tanh()) / (2.0 * STEP);
    assert!(relative_error(g, fd, 1e-12) < 1e-8);
}

#[test]
fn matmul_random_3x4_by_4x2() {
    check(
        |v| v[0].matmul(v[1]).unwrap(),
        {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])]
        },
        6,
        7,
        1e-6,
    );
}

fn small_net_grads(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, &[3, 5]);
    let b = random(&mut rng, &[5]);
    let x = random(&mut rng, &[4, 3]);
    let tape = Tape::new();
    let (w, b) = (tape.param(w), tape.param(b));
    let x = tape.constant(x);
    let loss = x.matmul(w).unwrap().add_row(b).unwrap().silu().square().mean();
    let g = tape.backward(loss).unwrap();
    vec![g.wrt(w), g.wrt(b)]
}

#[test]
fn backward_is_deterministic() {
    let a = small_net_grads(11);
    let b = small_net_grads(11);
    for (x, y) in a.iter().zip(&b) {
        let bits_x: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let bits_y: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_x, bits_y);
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w0 = random(&mut rng, &[3, 3]);
    let x0 = random(&mut rng, &[2, 3]);

    let grad_of = |which: u8| {
        let tape = Tape::new();
        let w = tape.param(w0.clone());
        let x = tape.constant(x0.clone());
        let y = x.matmul(w).unwrap();
        let l1 = y.tanh().sum();
        let l2 = y.square().mean();
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => l1.add(l2).unwrap(),
        };
        tape.backward(loss).unwrap().wrt(w)
    };
    let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
    for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
        assert!((a + b - c).abs() < 1e-14);
    }
}
