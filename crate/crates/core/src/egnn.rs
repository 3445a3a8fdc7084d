//! One round of E(n)-equivariant message passing.
//!
//! ```text
//! m_ij = φ_e(h_i, h_j, ‖x_i − x_j‖², a_ij)
//! x̃_i  = x_i + C_i Σ_j (x_i − x_j) φ_x(m_ij)      C_i = 1 / deg(i)
//! h̃_i  = φ_h(h_i, Σ_j m_ij)
//! ```

use autodiff::{concat_cols, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::graph::Topology;
use crate::params::{Mlp, MlpSpec, ParamStore};

/// Output-layer gain of the coordinate head at initialization.
pub const COORD_HEAD_GAIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgnnConfig {
    pub feature_dim: usize,
    pub coord_dim: usize,
    pub hidden_dim: usize,
    pub edge_attr_dim: usize,
    /// Adds `φ_v(h_i)·v_i` to the coordinate output when velocities are given.
    pub velocity: bool,
}

impl EgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(config_err("hidden_dim", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be at least 1"));
        }
        if self.coord_dim == 0 {
            return Err(config_err("coord_dim", "must be at least 1"));
        }
        Ok(())
    }

    fn message_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// Graph-side constants a coupling needs during a forward pass.
#[derive(Clone, Copy)]
pub struct GraphCtx<'a, 't> {
    pub topo: &'a Topology,
    /// `E x a`, one row per edge.
    pub edge_attr: Option<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct Egnn {
    pub config: EgnnConfig,
    pub edge_mlp: Mlp,
    pub coord_mlp: Mlp,
    pub node_mlp: Mlp,
    pub velocity_mlp: Option<Mlp>,
}

/// Per-edge quantities shared by both output heads.
pub struct Messages<'t> {
    /// `x_i − x_j`, `E x n`.
    pub diff: Var<'t>,
    /// `m_ij`, `E x hidden`.
    pub m: Var<'t>,
}

impl Egnn {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, config: EgnnConfig) -> Result<Self> {
        Self::init_with_gain(store, rng, name, config, COORD_HEAD_GAIN)
    }

    pub fn init_with_gain(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        config: EgnnConfig,
        coord_gain: f64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim;
        let hid = config.hidden_dim;
        let msg = config.message_dim();
        let edge_mlp = Mlp::init(
            store,
            rng,
            &format!("{name}.edge"),
            MlpSpec {
                in_dim: 2 * d + 1 + config.edge_attr_dim,
                hidden: hid,
                out_dim: msg,
                output_bias: true,
                output_activation: true,
                output_gain: 1.0,
            },
        );
        let coord_mlp = Mlp::init(
            store,
            rng,
            &format!("{name}.coord"),
            MlpSpec {
                in_dim: msg,
                hidden: hid,
                out_dim: 1,
                output_bias: false,
                output_activation: false,
                output_gain: coord_gain,
            },
        );
        let node_mlp = Mlp::init(
            store,
            rng,
            &format!("{name}.node"),
            MlpSpec {
                in_dim: d + msg,
                hidden: hid,
                out_dim: d,
                output_bias: true,
                output_activation: false,
                output_gain: 1.0,
            },
        );
        let velocity_mlp = config.velocity.then(|| {
            Mlp::init(
                store,
                rng,
                &format!("{name}.vel"),
                MlpSpec {
                    in_dim: d,
                    hidden: hid,
                    out_dim: 1,
                    output_bias: true,
                    output_activation: false,
                    output_gain: 1.0,
                },
            )
        });
        Ok(Self {
            config,
            edge_mlp,
            coord_mlp,
            node_mlp,
            velocity_mlp,
        })
    }

    fn check_inputs(&self, ctx: &GraphCtx<'_, '_>, x: Var<'_>, h: Var<'_>) -> Result<()> {
        let m = ctx.topo.num_nodes;
        if x.shape() != [m, self.config.coord_dim] {
            return Err(Error::Dimension(format!(
                "coordinates {:?}, expected [{m}, {}]",
                x.shape(),
                self.config.coord_dim
            )));
        }
        if h.shape() != [m, self.config.feature_dim] {
            return Err(Error::Dimension(format!(
                "features {:?}, expected [{m}, {}]",
                h.shape(),
                self.config.feature_dim
            )));
        }
        let attr_cols = ctx.edge_attr.map_or(0, |a| a.shape()[1]);
        if attr_cols != self.config.edge_attr_dim {
            return Err(Error::Dimension(format!(
                "edge attributes have width {attr_cols}, expected {}",
                self.config.edge_attr_dim
            )));
        }
        Ok(())
    }

    /// `[h_i, h_j, ‖x_i − x_j‖², a_ij]` per edge, and the difference vectors.
    pub fn edge_inputs<'t>(&self, ctx: &GraphCtx<'_, 't>, x: Var<'t>, h: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_inputs(ctx, x, h)?;
        let centers = ctx.topo.centers.clone();
        let neighbors = ctx.topo.neighbors.clone();
        let diff = x.gather(centers.clone())?.sub(x.gather(neighbors.clone())?)?;
        let mut parts = vec![h.gather(centers)?, h.gather(neighbors)?, diff.row_sq_norm()?];
        parts.extend(ctx.edge_attr);
        Ok((concat_cols(&parts)?, diff))
    }

    pub fn messages<'t>(&self, p: &[Var<'t>], ctx: &GraphCtx<'_, 't>, x: Var<'t>, h: Var<'t>) -> Result<Messages<'t>> {
        let (input, diff) = self.edge_inputs(ctx, x, h)?;
        Ok(Messages {
            diff,
            m: self.edge_mlp.forward(p, input)?,
        })
    }

    pub fn coord_output<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        x: Var<'t>,
        msgs: &Messages<'t>,
    ) -> Result<Var<'t>> {
        let w = self.coord_mlp.forward(p, msgs.m)?;
        let shift = msgs
            .diff
            .mul_col(w)?
            .scatter_add(ctx.topo.centers.clone(), ctx.topo.num_nodes)?
            .scale_rows(ctx.topo.inv_degree.clone())?;
        Ok(x.add(shift)?)
    }

    pub fn feature_output<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        h: Var<'t>,
        msgs: &Messages<'t>,
    ) -> Result<Var<'t>> {
        let agg = msgs.m.scatter_add(ctx.topo.centers.clone(), ctx.topo.num_nodes)?;
        self.node_mlp.forward(p, concat_cols(&[h, agg])?)
    }

    /// Both heads from one shared message computation.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let msgs = self.messages(p, ctx, x, h)?;
        Ok((self.coord_output(p, ctx, x, &msgs)?, self.feature_output(p, ctx, h, &msgs)?))
    }

    /// [`forward`](Self::forward) plus the velocity term `φ_v(h_i)·v_i`.
    pub fn forward_with_velocity<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        x: Var<'t>,
        h: Var<'t>,
        v: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (xt, ht) = self.forward(p, ctx, x, h)?;
        match &self.velocity_mlp {
            Some(mlp) => {
                let s = mlp.forward(p, h)?;
                Ok((xt.add(v.mul_col(s)?)?, ht))
            }
            None => Ok((xt, ht)),
        }
    }
}
