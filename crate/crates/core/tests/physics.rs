use autodiff::Tensor;
use dusego::dynamics::{
    coulomb_forces, generate_split, leapfrog_step, momentum, sample_trajectory, simulate, total_energy, NBodyConfig,
};

fn abs_momentum(v: &Tensor) -> f64 {
    (0..v.rows()).map(|i| v.row(i).iter().map(|c| c * c).sum::<f64>().sqrt()).sum()
}

#[test]
fn momentum_is_conserved_per_trajectory() {
    let cfg = NBodyConfig::default();
    for seed in 0..200 {
        let t = sample_trajectory(&cfg, seed).unwrap();
        let (p0, p1) = (momentum(&t.v0), momentum(&t.v_end));
        let drift = p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-9 * abs_momentum(&t.v0), "seed {seed}: {drift}");
    }
}

#[test]
fn pairwise_forces_are_antisymmetric() {
    let x = Tensor::matrix(2, 3, vec![0.1, -0.3, 0.7, 1.2, 0.4, -0.5]).unwrap();
    for q in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0]] {
        let f = coulomb_forces(&x, &q, 0.01);
        for c in 0..3 {
            assert_eq!(f.get(0, c), -f.get(1, c));
        }
    }
}

#[test]
fn leapfrog_is_time_reversible() {
    let cfg = NBodyConfig::default();
    for seed in 0..20 {
        let t = sample_trajectory(&cfg, seed).unwrap();
        let (x1, v1) = leapfrog_step(&t.x0, &t.v0, &t.charges, cfg.dt_sim, cfg.softening);
        let (x2, v2) = leapfrog_step(&x1, &v1.map(|c| -c), &t.charges, cfg.dt_sim, cfg.softening);
        assert!(x2.max_abs_diff(&t.x0).unwrap() < 1e-12);
        assert!(v2.map(|c| -c).max_abs_diff(&t.v0).unwrap() < 1e-12);
    }
}

#[test]
fn two_body_energy_drift_over_long_horizon() {
    // Opposite charges on a slightly eccentric bound orbit.
    let x = Tensor::matrix(2, 3, vec![-0.5, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
    let v = Tensor::matrix(2, 3, vec![0.0, -0.6, 0.0, 0.0, 0.6, 0.0]).unwrap();
    let q = [1.0, -1.0];
    let e0 = total_energy(&x, &v, &q, 0.01);
    let (x1, v1) = simulate(&x, &v, &q, 200_000, 0.001, 0.01).unwrap();
    let e1 = total_energy(&x1, &v1, &q, 0.01);
    assert!(((e1 - e0) / e0).abs() < 0.01, "{e0} -> {e1}");
}

#[test]
fn opposite_charges_attract_with_softened_magnitude() {
    let x = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let f = coulomb_forces(&x, &[1.0, -1.0], 0.001);
    let expected = 1.0 / (1.0f64 + 1e-6).powf(1.5);
    assert!((f.get(0, 0) - expected).abs() < 1e-15);
}

#[test]
fn regeneration_is_bit_identical() {
    let cfg = NBodyConfig::default();
    let a = generate_split(&cfg, 42, 20).unwrap();
    let b = generate_split(&cfg, 42, 20).unwrap();
    assert_eq!(a.graphs, b.graphs);
    assert_eq!(a.seeds, b.seeds);
    assert_eq!(a.graphs.len(), 20);
}
