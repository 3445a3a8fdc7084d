use autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::egnn::{Egnn, EgnnConfig, GraphCtx};
use crate::error::{config_err, Error, Result};
use crate::graph::{batch, BatchLayout, GraphInstance, Target, Topology};
use crate::ode::{Dusego, DusegoConfig, FeatureActivation, OdeVars};
use crate::params::{Linear, ParamId, ParamStore};
use crate::rng::stream;
use crate::tasks::{autoencoder_loss, forecast_loss, PairIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dusego,
    StackedEgnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Dusego => "dusego",
            ModelKind::StackedEgnn => "stacked-egnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Solver steps, or layers for the stacked model.
    pub depth: usize,
    pub hidden_dim: usize,
    /// Width of the latent node features.
    pub feature_dim: usize,
    pub dt: Option<f64>,
    pub gamma_x: f64,
    pub gamma_h: f64,
    pub alpha: f64,
    pub feature_activation: FeatureActivation,
    pub share_weights: bool,
    /// Initial coordinate velocity is `velocity_scale · v`.
    pub velocity_scale: f64,
    /// Stacked model only: add `φ_v(h)·v` to every coordinate update.
    pub velocity_term: bool,
    pub coord_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Dusego,
            depth: 4,
            hidden_dim: 32,
            feature_dim: 16,
            dt: None,
            gamma_x: 1.0,
            gamma_h: 1.0,
            alpha: 1.0,
            feature_activation: FeatureActivation::Identity,
            share_weights: true,
            velocity_scale: 1.0,
            velocity_term: true,
            coord_gain: crate::egnn::COORD_HEAD_GAIN,
        }
    }
}

impl ModelConfig {
    pub fn dusego_config(&self) -> DusegoConfig {
        DusegoConfig {
            steps: self.depth,
            dt: self.dt,
            gamma_x: self.gamma_x,
            gamma_h: self.gamma_h,
            alpha: self.alpha,
            feature_activation: self.feature_activation,
            share_weights: self.share_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(config_err("depth", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(config_err("hidden_dim", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be at least 1"));
        }
        self.dusego_config().validate()
    }
}

/// Input widths fixed by the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataShape {
    pub raw_feature_dim: usize,
    pub coord_dim: usize,
    pub edge_attr_dim: usize,
    pub has_velocities: bool,
    /// Adjacency targets: adds the distance decoder scalars.
    pub adjacency: bool,
}

impl DataShape {
    pub fn of(g: &GraphInstance) -> Self {
        Self {
            raw_feature_dim: g.feature_dim(),
            coord_dim: g.coord_dim(),
            edge_attr_dim: g.edge_attr_dim(),
            has_velocities: g.velocities().is_some(),
            adjacency: matches!(g.target(), Target::Adjacency(_)),
        }
    }
}

#[derive(Debug, Clone)]
enum Backbone {
    Dusego(Dusego<Egnn>),
    Stacked(Vec<Egnn>),
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub offset: ParamId,
    pub scale: ParamId,
}

/// Encoder, backbone and optional decoder over one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: DataShape,
    pub store: ParamStore,
    encoder: Linear,
    backbone: Backbone,
    pub decoder: Option<Decoder>,
}

/// A batched graph with its message-passing indices, built once and reused.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graph: GraphInstance,
    pub layout: BatchLayout,
    pub topo: Topology,
    pub pairs: Option<PairIndex>,
}

impl Batch {
    pub fn new(graphs: &[GraphInstance]) -> Result<Self> {
        let (graph, layout) = batch(graphs)?;
        let topo = graph.topology();
        let pairs = match graph.target() {
            Target::Adjacency(a) => Some(PairIndex::new(&layout, a)),
            _ => None,
        };
        Ok(Self {
            graph,
            layout,
            topo,
            pairs,
        })
    }
}

impl Model {
    /// Parameters drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, shape: DataShape, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "init", 0);
        let mut store = ParamStore::new();
        let d = config.feature_dim;
        let encoder = Linear::init(&mut store, &mut rng, "encoder", shape.raw_feature_dim, d, true, 1.0);
        let egnn_cfg = |velocity| EgnnConfig {
            feature_dim: d,
            coord_dim: shape.coord_dim,
            hidden_dim: config.hidden_dim,
            edge_attr_dim: shape.edge_attr_dim,
            velocity,
        };
        let backbone = match config.kind {
            ModelKind::Dusego => {
                let ode = config.dusego_config();
                let couplings = (0..ode.couplings_needed())
                    .map(|k| {
                        Egnn::init_with_gain(&mut store, &mut rng, &format!("coupling{k}"), egnn_cfg(false), config.coord_gain)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Backbone::Dusego(Dusego::new(ode, couplings)?)
            }
            ModelKind::StackedEgnn => {
                let velocity = config.velocity_term && shape.has_velocities;
                Backbone::Stacked(
                    (0..config.depth)
                        .map(|k| {
                            Egnn::init_with_gain(&mut store, &mut rng, &format!("layer{k}"), egnn_cfg(velocity), config.coord_gain)
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };
        let decoder = shape.adjacency.then(|| Decoder {
            offset: store.add("decoder.offset", Tensor::vector(vec![1.0])),
            scale: store.add("decoder.scale", Tensor::matrix(1, 1, vec![1.0]).expect("1x1")),
        });
        Ok(Self {
            config,
            shape,
            store,
            encoder,
            backbone,
            decoder,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        let got = DataShape::of(&b.graph);
        if got != self.shape {
            return Err(Error::Dimension(format!("model built for {:?}, batch has {got:?}", self.shape)));
        }
        Ok(())
    }

    /// `X⁰` = coordinates, `Y⁰` = scaled velocities (zero if absent),
    /// `H⁰` = linear embedding of the raw features, `U⁰` = 0.
    pub fn init_state<'t>(&self, p: &[Var<'t>], tape: &'t Tape, b: &Batch) -> Result<OdeVars<'t>> {
        let g = &b.graph;
        let x = tape.constant(g.coords().clone());
        let y = match g.velocities() {
            Some(v) => tape.constant(v.map(|c| c * self.config.velocity_scale)),
            None => tape.constant(Tensor::zeros(g.coords().shape())),
        };
        let h = self.encoder.forward(p, tape.constant(g.features().clone()))?;
        let u = tape.constant(Tensor::zeros(&[g.num_nodes(), self.config.feature_dim]));
        Ok(OdeVars { x, y, h, u })
    }

    /// Final `(X, H)`. `trace` receives `(X^n, H^n)` for every step or layer, starting at 0.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        tape: &'t Tape,
        b: &Batch,
        mut trace: Option<&mut Vec<(Tensor, Tensor)>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        self.check_batch(b)?;
        let s0 = self.init_state(p, tape, b)?;
        let ctx = GraphCtx {
            topo: &b.topo,
            edge_attr: b.graph.edge_attr().map(|a| tape.constant(a.clone())),
        };
        match &self.backbone {
            Backbone::Dusego(ode) => {
                let s = ode.integrate_vars(p, &ctx, s0, trace)?;
                Ok((s.x, s.h))
            }
            Backbone::Stacked(layers) => {
                let (mut x, mut h) = (s0.x, s0.h);
                if let Some(t) = trace.as_deref_mut() {
                    t.push((x.value(), h.value()));
                }
                for (n, layer) in layers.iter().enumerate() {
                    (x, h) = if layer.velocity_mlp.is_some() {
                        layer.forward_with_velocity(p, &ctx, x, h, s0.y)?
                    } else {
                        layer.forward(p, &ctx, x, h)?
                    };
                    for v in [x, h] {
                        if let Some(kind) = crate::NonFinite::classify(v.value_ref().data()) {
                            return Err(Error::Instability { step: n + 1, kind });
                        }
                    }
                    if let Some(t) = trace.as_deref_mut() {
                        t.push((x.value(), h.value()));
                    }
                }
                Ok((x, h))
            }
        }
    }

    /// Task loss: MSE against target positions, or decoder BCE against adjacency.
    pub fn loss<'t>(&self, p: &[Var<'t>], tape: &'t Tape, b: &Batch) -> Result<Var<'t>> {
        let (x, _) = self.forward(p, tape, b, None)?;
        match (b.graph.target(), &self.decoder, &b.pairs) {
            (Target::Positions(t), _, _) => forecast_loss(x, tape.constant(t.clone())),
            (Target::Adjacency(_), Some(dec), Some(pairs)) => {
                autoencoder_loss(x, p[dec.offset.index()], p[dec.scale.index()], pairs)
            }
            _ => Err(Error::Graph("batch has no usable target".into())),
        }
    }

    /// Decoder scalars `(a, b)`.
    pub fn decoder_scalars(&self) -> Option<(f64, f64)> {
        self.decoder
            .as_ref()
            .map(|d| (self.store.get(d.offset).item(), self.store.get(d.scale).data()[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_split, NBodyConfig};

    #[test]
    fn builds_both_kinds_and_runs() {
        let cfg = NBodyConfig {
            steps: 5,
            ..Default::default()
        };
        let graphs = generate_split(&cfg, 0, 3).unwrap().graphs;
        let b = Batch::new(&graphs).unwrap();
        for kind in [ModelKind::Dusego, ModelKind::StackedEgnn] {
            let m = Model::new(
                ModelConfig {
                    kind,
                    hidden_dim: 8,
                    feature_dim: 4,
                    ..Default::default()
                },
                DataShape::of(&graphs[0]),
                1,
            )
            .unwrap();
            let tape = Tape::new();
            let p = m.store.bind(&tape);
            let mut trace = Vec::new();
            let (x, h) = m.forward(&p, &tape, &b, Some(&mut trace)).unwrap();
            assert_eq!(x.shape(), vec![15, 3]);
            assert_eq!(h.shape(), vec![15, 4]);
            assert_eq!(trace.len(), 5);
            assert!(m.loss(&p, &tape, &b).unwrap().value().item().is_finite());
        }
    }

    #[test]
    fn rejects_mismatched_batch() {
        let graphs = generate_split(&NBodyConfig { steps: 2, ..Default::default() }, 0, 1).unwrap().graphs;
        let mut shape = DataShape::of(&graphs[0]);
        shape.raw_feature_dim = 3;
        let m = Model::new(ModelConfig::default(), shape, 0).unwrap();
        let tape = Tape::new();
        let p = m.store.bind(&tape);
        assert!(m.forward(&p, &tape, &Batch::new(&graphs).unwrap(), None).is_err());
    }
}
