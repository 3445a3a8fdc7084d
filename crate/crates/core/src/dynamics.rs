//! Charged-particle simulator: softened Coulomb forces, unit masses,
//! kick-drift-kick leapfrog.

use autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::graph::{fully_connected, GraphInstance, Target};
use crate::rng::{derive_seed, gaussian};

pub const DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NBodyConfig {
    pub particles: usize,
    /// Standard deviation of each initial position component.
    pub position_std: f64,
    pub initial_speed: f64,
    pub dt_sim: f64,
    pub softening: f64,
    /// Leapfrog steps between the input snapshot and the target.
    pub steps: usize,
}

impl Default for NBodyConfig {
    fn default() -> Self {
        Self {
            particles: 5,
            position_std: 0.5,
            initial_speed: 0.5,
            dt_sim: 0.001,
            softening: 0.01,
            steps: 1000,
        }
    }
}

impl NBodyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(config_err("particles", "need at least 2"));
        }
        if !(self.dt_sim > 0.0) {
            return Err(config_err("dt_sim", "must be positive"));
        }
        if !(self.softening > 0.0) {
            return Err(config_err("softening", "must be positive"));
        }
        if self.steps == 0 {
            return Err(config_err("steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Simulated time covered by one sample.
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt_sim
    }
}

/// `F_i = Σ_j q_i q_j (x_i − x_j) / (‖x_i − x_j‖² + ε²)^{3/2}`, summed
/// pairwise so `F_ij = −F_ji` holds exactly.
pub fn coulomb_forces(pos: &Tensor, charges: &[f64], softening: f64) -> Tensor {
    let m = charges.len();
    let mut f = Tensor::zeros(&[m, DIM]);
    let eps2 = softening * softening;
    let x = pos.data();
    let fd = f.data_mut();
    for i in 0..m {
        for j in i + 1..m {
            let mut d = [0.0; DIM];
            let mut r2 = eps2;
            for k in 0..DIM {
                d[k] = x[i * DIM + k] - x[j * DIM + k];
                r2 += d[k] * d[k];
            }
            let s = charges[i] * charges[j] / (r2 * r2.sqrt());
            for k in 0..DIM {
                let fk = s * d[k];
                fd[i * DIM + k] += fk;
                fd[j * DIM + k] -= fk;
            }
        }
    }
    f
}

/// `½ Σ ‖v‖² + Σ_{i<j} q_i q_j / √(r² + ε²)`.
pub fn total_energy(pos: &Tensor, vel: &Tensor, charges: &[f64], softening: f64) -> f64 {
    let kinetic = 0.5 * vel.squared_norm();
    let m = charges.len();
    let x = pos.data();
    let mut potential = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let r2: f64 = (0..DIM).map(|k| (x[i * DIM + k] - x[j * DIM + k]).powi(2)).sum();
            potential += charges[i] * charges[j] / (r2 + softening * softening).sqrt();
        }
    }
    kinetic + potential
}

/// Sum of row vectors (total momentum at unit mass).
pub fn momentum(vel: &Tensor) -> [f64; DIM] {
    let mut p = [0.0; DIM];
    for row in vel.data().chunks_exact(DIM) {
        for k in 0..DIM {
            p[k] += row[k];
        }
    }
    p
}

fn axpy(y: &mut Tensor, a: f64, x: &Tensor) {
    for (yi, xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi += a * xi;
    }
}

/// One kick-drift-kick step.
pub fn leapfrog_step(pos: &Tensor, vel: &Tensor, charges: &[f64], dt: f64, softening: f64) -> (Tensor, Tensor) {
    let f0 = coulomb_forces(pos, charges, softening);
    let (p, v, _) = leapfrog_with_force(pos.clone(), vel.clone(), f0, charges, dt, softening);
    (p, v)
}

/// Leapfrog that reuses the force at the current position and returns the
/// force at the new one.
fn leapfrog_with_force(
    mut pos: Tensor,
    mut vel: Tensor,
    force: Tensor,
    charges: &[f64],
    dt: f64,
    softening: f64,
) -> (Tensor, Tensor, Tensor) {
    axpy(&mut vel, 0.5 * dt, &force);
    axpy(&mut pos, dt, &vel);
    let f1 = coulomb_forces(&pos, charges, softening);
    axpy(&mut vel, 0.5 * dt, &f1);
    (pos, vel, f1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub charges: Vec<f64>,
    pub x0: Tensor,
    pub v0: Tensor,
    pub x_end: Tensor,
    pub v_end: Tensor,
    pub seed: u64,
}

/// Runs `steps` leapfrog steps; `None` if the state leaves the finite range.
pub fn simulate(
    x0: &Tensor,
    v0: &Tensor,
    charges: &[f64],
    steps: usize,
    dt: f64,
    softening: f64,
) -> Option<(Tensor, Tensor)> {
    let mut pos = x0.clone();
    let mut vel = v0.clone();
    let mut f = coulomb_forces(&pos, charges, softening);
    for _ in 0..steps {
        (pos, vel, f) = leapfrog_with_force(pos, vel, f, charges, dt, softening);
        if !(pos.is_finite() && vel.is_finite()) {
            return None;
        }
    }
    Some((pos, vel))
}

/// Samples initial conditions from `seed` and integrates them.
pub fn sample_trajectory(cfg: &NBodyConfig, seed: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let m = cfg.particles;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let charges: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let x0 = Tensor::matrix(m, DIM, (0..m * DIM).map(|_| cfg.position_std * gaussian(&mut rng)).collect())?;
    let mut v = Vec::with_capacity(m * DIM);
    for _ in 0..m {
        let dir: [f64; DIM] = std::array::from_fn(|_| gaussian(&mut rng));
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        v.extend(dir.iter().map(|d| cfg.initial_speed * d / norm));
    }
    let v0 = Tensor::matrix(m, DIM, v)?;
    let (x_end, v_end) =
        simulate(&x0, &v0, &charges, cfg.steps, cfg.dt_sim, cfg.softening).ok_or(Error::Generation { seed, step: cfg.steps })?;
    Ok(Trajectory {
        charges,
        x0,
        v0,
        x_end,
        v_end,
        seed,
    })
}

/// Model input: features `(q, ‖v⁰‖)`, edge attribute `q_i q_j`, target `x_end`.
pub fn trajectory_graph(t: &Trajectory) -> Result<GraphInstance> {
    let m = t.charges.len();
    let mut feats = Vec::with_capacity(2 * m);
    for (q, v) in t.charges.iter().zip(t.v0.data().chunks_exact(DIM)) {
        feats.push(*q);
        feats.push(v.iter().map(|c| c * c).sum::<f64>().sqrt());
    }
    let edges = fully_connected(m)?;
    let attr: Vec<f64> = edges.iter().map(|&(i, j)| t.charges[i] * t.charges[j]).collect();
    let e = edges.len();
    GraphInstance::new(Tensor::matrix(m, 2, feats)?, t.x0.clone(), edges)?
        .with_velocities(t.v0.clone())?
        .with_edge_attr(Tensor::matrix(e, 1, attr)?)?
        .with_target(Target::Positions(t.x_end.clone()))
}

#[derive(Debug, Clone)]
pub struct GeneratedSplit {
    pub graphs: Vec<GraphInstance>,
    /// Seed actually used per sample.
    pub seeds: Vec<u64>,
    pub resampled: usize,
}

/// Samples `count` trajectories. Sample `k` uses seed `first_seed + k`; a
/// trajectory that goes non-finite is redrawn with a seed derived from the
/// failed one, and the redraw is counted.
pub fn generate_split(cfg: &NBodyConfig, first_seed: u64, count: usize) -> Result<GeneratedSplit> {
    let mut graphs = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    let mut resampled = 0;
    for k in 0..count {
        let mut seed = first_seed.wrapping_add(k as u64);
        let mut attempt = 0;
        let traj = loop {
            match sample_trajectory(cfg, seed) {
                Ok(t) => break t,
                Err(Error::Generation { .. }) if attempt < 100 => {
                    attempt += 1;
                    resampled += 1;
                    seed = derive_seed(seed, "resample", attempt);
                }
                Err(e) => return Err(e),
            }
        };
        seeds.push(seed);
        graphs.push(trajectory_graph(&traj)?);
    }
    Ok(GeneratedSplit {
        graphs,
        seeds,
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(q: [f64; 2], d: f64) -> (Tensor, Vec<f64>) {
        (Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, d, 0.0, 0.0]).unwrap(), q.to_vec())
    }

    #[test]
    fn equal_charges_repel_symmetrically() {
        let (x, q) = pair([1.0, 1.0], 2.0);
        let f = coulomb_forces(&x, &q, 0.01);
        assert!(f.get(0, 0) < 0.0 && f.get(1, 0) > 0.0);
        assert_eq!(f.get(0, 0), -f.get(1, 0));
    }

    #[test]
    fn opposite_unit_charges_at_unit_distance() {
        let (x, q) = pair([1.0, -1.0], 1.0);
        let f = coulomb_forces(&x, &q, 0.001);
        let want = 1.0 / (1.0f64 + 1e-6).powf(1.5);
        assert!((f.get(0, 0) - want).abs() < 1e-15, "{}", f.get(0, 0));
    }

    #[test]
    fn zero_charges_move_linearly() {
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]).unwrap();
        let v = Tensor::matrix(2, 3, vec![1.0, -1.0, 0.5, 0.0, 2.0, -3.0]).unwrap();
        let (x1, v1) = leapfrog_step(&x, &v, &[0.0, 0.0], 0.01, 0.01);
        assert_eq!(v1, v);
        for k in 0..6 {
            assert_eq!(x1.data()[k], x.data()[k] + 0.01 * v.data()[k]);
        }
    }

    #[test]
    fn static_neutral_system_stays_put() {
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]).unwrap();
        let v = Tensor::zeros(&[2, 3]);
        let (x1, v1) = simulate(&x, &v, &[0.0, 0.0], 50, 0.001, 0.01).unwrap();
        assert_eq!((x1, v1), (x, v));
    }

    #[test]
    fn trajectory_graph_layout() {
        let cfg = NBodyConfig {
            steps: 10,
            ..Default::default()
        };
        let g = trajectory_graph(&sample_trajectory(&cfg, 4).unwrap()).unwrap();
        assert_eq!(g.edges().len(), 20);
        assert_eq!(g.features().shape(), &[5, 2]);
        assert!((g.features().get(0, 1) - 0.5).abs() < 1e-15);
        assert!(g.edge_attr().unwrap().data().iter().all(|a| a.abs() == 1.0));
    }

    #[test]
    fn split_is_deterministic() {
        let cfg = NBodyConfig {
            steps: 20,
            ..Default::default()
        };
        let a = generate_split(&cfg, 100, 4).unwrap();
        let b = generate_split(&cfg, 100, 4).unwrap();
        assert_eq!(a.graphs, b.graphs);
        assert_eq!(a.seeds, vec![100, 101, 102, 103]);
    }
}
