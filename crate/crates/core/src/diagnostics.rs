use autodiff::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{fully_connected, GraphInstance, Topology};
use crate::model::{Batch, DataShape, Model, ModelConfig, ModelKind};
use crate::rng::{gaussian, stream};
use crate::train::Verdict;
use crate::transform::RigidTransform;

/// `(1/M) Σ_i Σ_{j∈N(i)} ‖z_i/√(1+d_i) − z_j/√(1+d_j)‖²`.
pub fn dirichlet_energy(z: &Tensor, topo: &Topology) -> f64 {
    let m = topo.num_nodes;
    if m == 0 {
        return 0.0;
    }
    let norm: Vec<f64> = topo.degree.iter().map(|&d| 1.0 / (1.0 + d as f64).sqrt()).collect();
    let mut e = 0.0;
    for (&i, &j) in topo.centers.iter().zip(topo.neighbors.iter()) {
        e += z
            .row(i)
            .iter()
            .zip(z.row(j))
            .map(|(a, b)| (a * norm[i] - b * norm[j]).powi(2))
            .sum::<f64>();
    }
    e / m as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub model: ModelKind,
    pub depth: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    /// `E(H^n)`, `n = 0..` (length `depth + 1` unless truncated).
    pub energy_h: Vec<f64>,
    pub energy_x: Vec<f64>,
    /// Step at which the state went non-finite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_at: Option<usize>,
}

impl EnergyProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,energy_h,energy_x\n");
        for (n, (h, x)) in self.energy_h.iter().zip(&self.energy_x).enumerate() {
            s.push_str(&format!("{n},{h:e},{x:e}\n"));
        }
        s
    }
}

/// Fully connected graph with Gaussian coordinates and Gaussian raw features.
pub fn random_graph(seed: u64, nodes: usize, raw_feature_dim: usize) -> Result<GraphInstance> {
    let mut rng = stream(seed, "graph", 0);
    let x = Tensor::matrix(nodes, 3, (0..nodes * 3).map(|_| gaussian(&mut rng)).collect())?;
    let f = Tensor::matrix(
        nodes,
        raw_feature_dim,
        (0..nodes * raw_feature_dim).map(|_| gaussian(&mut rng)).collect(),
    )?;
    GraphInstance::new(f, x, fully_connected(nodes)?)
}

/// Energies along an untrained forward pass. The stacked model has fresh
/// weights in every layer; the ODE model shares one coupling across steps.
pub fn energy_profile(base: &ModelConfig, graph: &GraphInstance, seed: u64) -> Result<EnergyProfile> {
    let model = Model::new(base.clone(), DataShape::of(graph), seed)?;
    let b = Batch::new(std::slice::from_ref(graph))?;
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let mut trace = Vec::new();
    let truncated_at = match model.forward(&p, &tape, &b, Some(&mut trace)) {
        Ok(_) => None,
        Err(Error::Instability { step, .. }) => Some(step),
        Err(e) => return Err(e),
    };
    Ok(EnergyProfile {
        model: base.kind,
        depth: base.depth,
        alpha: base.alpha,
        gamma: base.gamma_x,
        seed,
        energy_h: trace.iter().map(|(_, h)| dirichlet_energy(h, &b.topo)).collect(),
        energy_x: trace.iter().map(|(x, _)| dirichlet_energy(x, &b.topo)).collect(),
        truncated_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub det: f64,
    pub coord_error: f64,
    pub feature_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub coord_tolerance: f64,
    pub feature_tolerance: f64,
    pub trials: Vec<TrialError>,
    pub passed: bool,
}

impl EquivarianceReport {
    pub fn max_coord_error(&self) -> f64 {
        self.trials.iter().map(|t| t.coord_error).fold(0.0, f64::max)
    }

    pub fn max_feature_error(&self) -> f64 {
        self.trials.iter().map(|t| t.feature_error).fold(0.0, f64::max)
    }
}

fn transformed(graph: &GraphInstance, t: &RigidTransform) -> Result<GraphInstance> {
    let mut g = GraphInstance::new(graph.features().clone(), t.apply(graph.coords()), graph.edges().to_vec())?;
    if let Some(v) = graph.velocities() {
        g = g.with_velocities(t.rotate(v))?;
    }
    if let Some(a) = graph.edge_attr() {
        g = g.with_edge_attr(a.clone())?;
    }
    Ok(g)
}

fn outputs(model: &Model, graph: &GraphInstance) -> Result<(Tensor, Tensor)> {
    let b = Batch::new(std::slice::from_ref(graph))?;
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let (x, h) = model.forward(&p, &tape, &b, None)?;
    Ok((x.value(), h.value()))
}

/// `(max |f(T·G)_x − T·f(G)_x|, max |f(T·G)_h − f(G)_h|)`. Targets are ignored.
pub fn equivariance_error(model: &Model, graph: &GraphInstance, t: &RigidTransform) -> Result<(f64, f64)> {
    let plain = transformed(graph, &RigidTransform::identity(t.dim()))?;
    let (x, h) = outputs(model, &plain)?;
    let (xt, ht) = outputs(model, &transformed(graph, t)?)?;
    Ok((xt.max_abs_diff(&t.apply(&x))?, ht.max_abs_diff(&h)?))
}

/// Random rigid motions with translation scale 10; odd trials are reflections.
pub fn check_equivariance(
    model: &Model,
    graph: &GraphInstance,
    trials: usize,
    coord_tolerance: f64,
    feature_tolerance: f64,
    seed: u64,
) -> Result<EquivarianceReport> {
    let mut rng = stream(seed, "transform", 0);
    let mut out = Vec::with_capacity(trials);
    for k in 0..trials {
        let t = RigidTransform::random(&mut rng, graph.coord_dim(), k % 2 == 1, 10.0);
        let (coord_error, feature_error) = equivariance_error(model, graph, &t)?;
        out.push(TrialError {
            det: t.det(),
            coord_error,
            feature_error,
        });
    }
    let passed = out
        .iter()
        .all(|t| t.coord_error < coord_tolerance && t.feature_error < feature_tolerance);
    Ok(EquivarianceReport {
        coord_tolerance,
        feature_tolerance,
        trials: out,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub depth: usize,
    pub loss: Option<f64>,
    pub max_abs_grad: Option<f64>,
    pub verdict: Verdict,
}

/// One forward/backward per depth on a fresh model drawn from `seed`.
pub fn gradient_probe(base: &ModelConfig, depths: &[usize], graphs: &[GraphInstance], seed: u64) -> Result<Vec<GradientProbe>> {
    let b = Batch::new(graphs)?;
    let shape = DataShape::of(&graphs[0]);
    depths
        .iter()
        .map(|&depth| {
            let model = Model::new(ModelConfig { depth, ..base.clone() }, shape, seed)?;
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let loss = match model.loss(&p, &tape, &b) {
                Ok(l) => l,
                Err(Error::Instability { kind, .. }) => {
                    return Ok(GradientProbe {
                        depth,
                        loss: None,
                        max_abs_grad: None,
                        verdict: kind.into(),
                    })
                }
                Err(e) => return Err(e),
            };
            let lv = loss.value().item();
            let grads = tape.backward(loss)?;
            let all: Vec<f64> = p.iter().flat_map(|v| grads.wrt(*v).into_data()).chain([lv]).collect();
            let verdict = crate::NonFinite::classify(&all).map_or(Verdict::Ok, Verdict::from);
            let max = all[..all.len() - 1].iter().fold(0.0f64, |m, g| m.max(g.abs()));
            Ok(GradientProbe {
                depth,
                loss: Some(lv),
                max_abs_grad: Some(max),
                verdict,
            })
        })
        .collect()
}

/// Least-squares line `y = slope·x + intercept` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Slope of `ln E` against the step index; zeros are clamped to the
/// smallest positive double.
pub fn log_slope(energies: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..energies.len()).map(|k| k as f64).collect();
    let ys: Vec<f64> = energies.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    linear_fit(&xs, &ys).0
}
