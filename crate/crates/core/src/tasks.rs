use std::sync::Arc;

use autodiff::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::graph::{edges_from_adjacency, BatchLayout, GraphInstance, Target};
use crate::rng::gaussian;

/// Mean squared error over every element.
pub fn forecast_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    Ok(pred.sub(target)?.square().mean())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFamily {
    ErdosRenyi,
    /// Two planted blocks; cross-block pairs use `p / 4`.
    Community,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub family: GraphFamily,
    pub p: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub noise_std: f64,
    pub embedding_dim: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self::erdos_renyi()
    }
}

impl AutoencoderConfig {
    pub fn erdos_renyi() -> Self {
        Self {
            family: GraphFamily::ErdosRenyi,
            p: 0.1,
            min_nodes: 6,
            max_nodes: 10,
            noise_std: 0.5,
            embedding_dim: 8,
        }
    }

    pub fn community() -> Self {
        Self {
            family: GraphFamily::Community,
            p: 0.15,
            max_nodes: 11,
            ..Self::erdos_renyi()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(config_err("p", format!("must lie in [0, 1], got {}", self.p)));
        }
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(config_err("min_nodes", "node range is empty"));
        }
        if self.embedding_dim == 0 {
            return Err(config_err("embedding_dim", "must be at least 1"));
        }
        Ok(())
    }
}

/// Graph `k` draws from seed `seed + k`. Inputs are a constant node feature
/// and Gaussian noise coordinates; the adjacency is the target and also the
/// message-passing structure.
pub fn generate_graphs(cfg: &AutoencoderConfig, count: usize, seed: u64) -> Result<Vec<GraphInstance>> {
    cfg.validate()?;
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
            let mut adj = Tensor::zeros(&[n, n]);
            let block = |i: usize| usize::from(i >= n / 2);
            for i in 0..n {
                for j in i + 1..n {
                    let p = match cfg.family {
                        GraphFamily::Community if block(i) != block(j) => cfg.p / 4.0,
                        _ => cfg.p,
                    };
                    if rng.random_bool(p) {
                        adj.set(i, j, 1.0);
                        adj.set(j, i, 1.0);
                    }
                }
            }
            let d = cfg.embedding_dim;
            let noise = (0..n * d).map(|_| cfg.noise_std * gaussian(&mut rng)).collect();
            let edges = edges_from_adjacency(&adj);
            GraphInstance::new(Tensor::full(&[n, 1], 1.0), Tensor::matrix(n, d, noise)?, edges)?
                .with_target(Target::Adjacency(adj))
        })
        .collect()
}

/// Logits and probabilities `logistic(a − b‖z_i − z_j‖²)`; the diagonal is
/// zero and excluded from every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePrediction {
    pub logits: Tensor,
    pub probs: Tensor,
    pub threshold: f64,
}

pub fn decode_adjacency(z: &Tensor, a: f64, b: f64, threshold: f64) -> EdgePrediction {
    let m = z.rows();
    let mut logits = Tensor::zeros(&[m, m]);
    let mut probs = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
            let l = a - b * d2;
            logits.set(i, j, l);
            probs.set(i, j, logistic(l));
        }
    }
    EdgePrediction {
        logits,
        probs,
        threshold,
    }
}

fn logistic(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `−[y ln σ(l) + (1 − y) ln(1 − σ(l))]` without forming σ.
fn bce_from_logit(l: f64, y: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p() - y * l
}

/// Pooled confusion counts and BCE over unordered node pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeTally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub bce_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub bce: f64,
    pub f1: f64,
    pub percent_error: f64,
}

impl EdgeTally {
    pub fn pairs(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds one graph. The matrices are symmetric, so each unordered pair is
    /// counted once; averages equal those over ordered off-diagonal pairs.
    pub fn add(&mut self, pred: &EdgePrediction, truth: &Tensor) -> Result<()> {
        let m = pred.logits.rows();
        if truth.shape() != [m, m] {
            return Err(Error::Dimension(format!(
                "prediction for {m} nodes, truth {:?}",
                truth.shape()
            )));
        }
        for i in 0..m {
            for j in i + 1..m {
                let y = truth.get(i, j);
                self.bce_sum += bce_from_logit(pred.logits.get(i, j), y);
                let positive = pred.probs.get(i, j) > pred.threshold;
                match (positive, y > 0.5) {
                    (true, true) => self.tp += 1,
                    (true, false) => self.fp += 1,
                    (false, true) => self.fn_ += 1,
                    (false, false) => self.tn += 1,
                }
            }
        }
        Ok(())
    }

    /// F1 is 0 when there are no true or predicted positives.
    pub fn metrics(&self) -> EdgeMetrics {
        let pairs = self.pairs().max(1) as f64;
        let denom = 2 * self.tp + self.fp + self.fn_;
        EdgeMetrics {
            bce: self.bce_sum / pairs,
            f1: if denom == 0 {
                0.0
            } else {
                2.0 * self.tp as f64 / denom as f64
            },
            percent_error: 100.0 * (self.fp + self.fn_) as f64 / pairs,
        }
    }
}

pub fn edge_metrics(pred: &EdgePrediction, truth: &Tensor) -> Result<EdgeMetrics> {
    let mut t = EdgeTally::default();
    t.add(pred, truth)?;
    Ok(t.metrics())
}

/// Within-graph unordered pairs of a batch, as global node indices, with labels.
#[derive(Debug, Clone)]
pub struct PairIndex {
    pub first: Arc<[usize]>,
    pub second: Arc<[usize]>,
    /// `P x 1` 0/1 labels.
    pub labels: Tensor,
}

impl PairIndex {
    pub fn new(layout: &BatchLayout, adjacency: &Tensor) -> Self {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut labels = Vec::new();
        for g in 0..layout.num_graphs() {
            let nodes = layout.nodes(g);
            for i in nodes.clone() {
                for j in i + 1..nodes.end {
                    first.push(i);
                    second.push(j);
                    labels.push(adjacency.get(i, j));
                }
            }
        }
        let p = labels.len();
        Self {
            first: first.into(),
            second: second.into(),
            labels: Tensor::matrix(p, 1, labels).expect("one label per pair"),
        }
    }
}

/// Mean BCE of the distance decoder over `pairs`; `a` and `b` are `[1]` and `[1, 1]`.
pub fn autoencoder_loss<'t>(z: Var<'t>, a: Var<'t>, b: Var<'t>, pairs: &PairIndex) -> Result<Var<'t>> {
    let d2 = z
        .gather(pairs.first.clone())?
        .sub(z.gather(pairs.second.clone())?)?
        .row_sq_norm()?;
    let logits = d2.matmul(b)?.neg().add_row(a)?;
    let y = z.tape().constant(pairs.labels.clone());
    Ok(logits.softplus().sub(logits.mul(y)?)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_basics() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        assert!((mse(&t.map(|v| v + 0.3), &t).unwrap() - 0.09).abs() < 1e-15);
        assert!(mse(&t, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn extreme_edge_probabilities() {
        let empty = generate_graphs(&AutoencoderConfig { p: 0.0, ..AutoencoderConfig::erdos_renyi() }, 5, 1).unwrap();
        assert!(empty.iter().all(|g| g.edges().is_empty()));
        let full = AutoencoderConfig {
            p: 1.0,
            min_nodes: 6,
            max_nodes: 6,
            ..AutoencoderConfig::erdos_renyi()
        };
        let g = &generate_graphs(&full, 1, 2).unwrap()[0];
        assert_eq!(g.edges().len() / 2, 15);
    }

    #[test]
    fn decoder_properties() {
        let z = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let p = decode_adjacency(&z, 0.7, 1.3, 0.5);
        assert_eq!(p.probs.get(0, 1), logistic(0.7));
        assert_eq!(p.probs.get(0, 2), p.probs.get(2, 0));
        assert_eq!(p.probs.get(1, 1), 0.0);
        let flat = decode_adjacency(&z, 0.7, 0.0, 0.5);
        assert_eq!(flat.probs.get(0, 2), flat.probs.get(1, 2));
    }

    #[test]
    fn half_probabilities_give_ln2() {
        let z = Tensor::zeros(&[4, 2]);
        let p = decode_adjacency(&z, 0.0, 1.0, 0.5);
        let mut truth = Tensor::zeros(&[4, 4]);
        truth.set(0, 1, 1.0);
        truth.set(1, 0, 1.0);
        let m = edge_metrics(&p, &truth).unwrap();
        assert!((m.bce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn reference_confusion_matrix() {
        let t = EdgeTally {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 15,
            bce_sum: 0.0,
        };
        let m = t.metrics();
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.percent_error, 10.0);
    }

    #[test]
    fn perfect_prediction() {
        let mut truth = Tensor::zeros(&[3, 3]);
        truth.set(0, 2, 1.0);
        truth.set(2, 0, 1.0);
        let probs = truth.clone();
        let pred = EdgePrediction {
            logits: truth.map(|y| if y > 0.5 { 30.0 } else { -30.0 }),
            probs,
            threshold: 0.5,
        };
        let m = edge_metrics(&pred, &truth).unwrap();
        assert_eq!((m.f1, m.percent_error), (1.0, 0.0));
    }

    #[test]
    fn no_positives_gives_zero_f1() {
        let z = Tensor::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let m = edge_metrics(&decode_adjacency(&z, 0.0, 1.0, 0.5), &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.percent_error, 0.0);
    }
}
