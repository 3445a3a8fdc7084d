use autodiff::{Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, NonFinite, Result};
use crate::graph::{graph_rows, GraphInstance, Target};
use crate::model::{Batch, Model};
use crate::params::ParamStore;
use crate::rng::stream;
use crate::tasks::{decode_adjacency, EdgeTally};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
    /// Decision threshold for edge predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 100,
            max_epochs: 100,
            weight_decay: 1e-12,
            patience: 50,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(config_err("patience", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `θ ← θ − lr·wd·θ`, then the bias-corrected Adam update.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Dimension(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, theta) in store.tensors_mut().iter_mut().enumerate() {
            let g = &grads[k];
            if g.shape() != theta.shape() {
                return Err(Error::Dimension(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, th) in theta.data_mut().iter_mut().enumerate() {
                *th -= lr * weight_decay * *th;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data()[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data()[i] * g.data()[i];
                *th -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Ok,
    Nan,
    Inf,
}

impl From<NonFinite> for Verdict {
    fn from(k: NonFinite) -> Self {
        match k {
            NonFinite::Nan => Verdict::Nan,
            NonFinite::Inf => Verdict::Inf,
        }
    }
}

/// Loss is MSE for position targets and mean pair BCE for adjacency targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Largest global gradient L2 norm over the epoch's batches.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
}

fn chunks(graphs: &[GraphInstance], size: usize) -> Result<Vec<Batch>> {
    graphs.chunks(size).map(Batch::new).collect()
}

/// Task metrics with gradients off; never touches parameters.
pub fn evaluate(model: &Model, graphs: &[GraphInstance], batch_size: usize, threshold: f64) -> Result<Metrics> {
    evaluate_batches(model, &chunks(graphs, batch_size.max(1))?, threshold)
}

pub fn evaluate_batches(model: &Model, batches: &[Batch], threshold: f64) -> Result<Metrics> {
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut tally = EdgeTally::default();
    let mut adjacency = false;
    for b in batches {
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        let (x, _) = model.forward(&p, &tape, b, None)?;
        let x = x.value();
        match b.graph.target() {
            Target::Positions(t) => {
                sq += x.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                count += t.len();
            }
            Target::Adjacency(_) => {
                adjacency = true;
                let (a, s) = model
                    .decoder_scalars()
                    .ok_or_else(|| Error::Graph("adjacency target without a decoder".into()))?;
                for g in 0..b.layout.num_graphs() {
                    let z = graph_rows(&x, &b.layout, g);
                    let nodes = b.layout.nodes(g);
                    let Target::Adjacency(full) = b.graph.target() else { unreachable!() };
                    let m = nodes.len();
                    let mut truth = Tensor::zeros(&[m, m]);
                    for i in 0..m {
                        for j in 0..m {
                            truth.set(i, j, full.get(nodes.start + i, nodes.start + j));
                        }
                    }
                    tally.add(&decode_adjacency(&z, a, s, threshold), &truth)?;
                }
            }
            Target::None => return Err(Error::Graph("evaluation needs targets".into())),
        }
    }
    Ok(if adjacency {
        let m = tally.metrics();
        Metrics {
            loss: m.bce,
            f1: Some(m.f1),
            percent_error: Some(m.percent_error),
        }
    } else {
        Metrics {
            loss: sq / count.max(1) as f64,
            f1: None,
            percent_error: None,
        }
    })
}

fn nonfinite_of(err: &Error) -> Option<NonFinite> {
    match err {
        Error::Instability { kind, .. } => Some(*kind),
        _ => None,
    }
}

/// Epoch loop with seeded shuffling, per-epoch validation, best-parameter
/// retention and early stopping. A non-finite loss, gradient or state ends
/// the run with a `nan`/`inf` verdict instead of an error; the model keeps
/// the best parameters seen.
pub fn train(
    model: &mut Model,
    train_set: &[GraphInstance],
    val_set: &[GraphInstance],
    test_set: Option<&[GraphInstance]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunRecord> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(config_err("datasets", "train and validation sets must be nonempty"));
    }
    let val_batches = chunks(val_set, cfg.batch_size)?;
    let mut adam = Adam::new(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rec = RunRecord {
        seed,
        num_params: model.num_params(),
        epochs: Vec::new(),
        best_epoch: None,
        verdict: Verdict::Ok,
        failure: None,
        val: None,
        test: None,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;

    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut stream(seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut grad_norm: f64 = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let members: Vec<GraphInstance> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let b = Batch::new(&members)?;
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let loss = match model.loss(&p, &tape, &b) {
                Ok(l) => l,
                Err(e) => match nonfinite_of(&e) {
                    Some(k) => {
                        rec.verdict = k.into();
                        rec.failure = Some(format!("epoch {epoch}: {e}"));
                        break 'epochs;
                    }
                    None => return Err(e),
                },
            };
            let lv = loss.value().item();
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = p.iter().map(|v| grads.wrt(*v)).collect();
            let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
            if let Some(k) = NonFinite::classify(&[lv, norm]) {
                rec.verdict = k.into();
                rec.failure = Some(format!("epoch {epoch}: non-finite loss or gradient ({k})"));
                break 'epochs;
            }
            grad_norm = grad_norm.max(norm);
            loss_sum += lv * idx.len() as f64;
            adam.step(&mut model.store, &grads, cfg.learning_rate, cfg.weight_decay)?;
        }
        let val = match evaluate_batches(model, &val_batches, cfg.threshold) {
            Ok(m) => m,
            Err(e) => match nonfinite_of(&e) {
                Some(k) => {
                    rec.verdict = k.into();
                    rec.failure = Some(format!("epoch {epoch} validation: {e}"));
                    break 'epochs;
                }
                None => return Err(e),
            },
        };
        rec.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.loss,
            grad_norm,
        });
        if best.as_ref().is_none_or(|(b, _)| val.loss < *b) {
            best = Some((val.loss, model.store.clone()));
            rec.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    if let Some((_, store)) = best {
        model.store = store;
        rec.val = Some(evaluate_batches(model, &val_batches, cfg.threshold)?);
        if let Some(test) = test_set {
            rec.test = Some(evaluate(model, test, cfg.batch_size, cfg.threshold)?);
        }
    }
    Ok(rec)
}

/// MSE of predicting no motion, `X^N = X⁰`.
pub fn zero_motion_mse(graphs: &[GraphInstance]) -> Result<f64> {
    baseline_mse(graphs, 0.0)
}

/// MSE of `X⁰ + horizon · V⁰`.
pub fn linear_extrapolation_mse(graphs: &[GraphInstance], horizon: f64) -> Result<f64> {
    baseline_mse(graphs, horizon)
}

fn baseline_mse(graphs: &[GraphInstance], horizon: f64) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for g in graphs {
        let Target::Positions(t) = g.target() else {
            return Err(Error::Graph("baseline needs position targets".into()));
        };
        let x = g.coords().data();
        let zeros;
        let v = match g.velocities() {
            Some(v) => v.data(),
            None => {
                zeros = vec![0.0; x.len()];
                &zeros
            }
        };
        for k in 0..x.len() {
            sq += (x[k] + horizon * v[k] - t.data()[k]).powi(2);
        }
        n += x.len();
    }
    Ok(sq / n.max(1) as f64)
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(x));
        s
    }

    #[test]
    fn first_adam_step() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::scalar(1.0)], 1e-3, 0.0).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction at t = 1.
        let want = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((store.tensors()[0].item() - want).abs() < 1e-18);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = scalar_store(0.37);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::scalar(0.0)], 1e-3, 0.0).unwrap();
        assert_eq!(store.tensors()[0].item(), 0.37);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut store = scalar_store(2.0);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::scalar(0.0)], 0.1, 0.5).unwrap();
        assert_eq!(store.tensors()[0].item(), 2.0 - 0.1 * 0.5 * 2.0);
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }
}
