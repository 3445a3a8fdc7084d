//! Second-order graph ODE on coordinates and features, discretized with an
//! explicit velocity-then-position update:
//!
//! ```text
//! (X̃, H̃) = F(X, H)
//! Y' = Y + Δt (X̃ − γ_x X − α Y)        X' = X + Δt Y'
//! U' = U + Δt (σ(H̃) − γ_h H − α U)     H' = H + Δt U'
//! ```
//!
//! The coordinate channel has no nonlinearity: any elementwise map on
//! coordinates would break rotation equivariance.

use autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::egnn::{Egnn, GraphCtx};
use crate::error::{config_err, Error, NonFinite, Result};
use crate::graph::Topology;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureActivation {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DusegoConfig {
    pub steps: usize,
    /// Defaults to `1 / steps`, so the integration time is 1.
    pub dt: Option<f64>,
    pub gamma_x: f64,
    pub gamma_h: f64,
    pub alpha: f64,
    pub feature_activation: FeatureActivation,
    /// One coupling reused at every step; otherwise one per step.
    pub share_weights: bool,
}

impl Default for DusegoConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            dt: None,
            gamma_x: 1.0,
            gamma_h: 1.0,
            alpha: 1.0,
            feature_activation: FeatureActivation::Identity,
            share_weights: true,
        }
    }
}

impl DusegoConfig {
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1.0 / self.steps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(config_err("steps", "must be at least 1"));
        }
        let dt = self.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(config_err("dt", format!("must be positive and finite, got {dt}")));
        }
        if !(self.alpha >= 0.0) {
            return Err(config_err("alpha", format!("must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn couplings_needed(&self) -> usize {
        if self.share_weights {
            1
        } else {
            self.steps
        }
    }
}

/// The learnable force term `F`.
pub trait Coupling {
    fn couple<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)>;
}

impl Coupling for Egnn {
    fn couple<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        self.forward(p, ctx, x, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeState {
    pub x: Tensor,
    pub y: Tensor,
    pub h: Tensor,
    pub u: Tensor,
    pub step: usize,
}

impl OdeState {
    /// Zero velocities.
    pub fn at_rest(x: Tensor, h: Tensor) -> Self {
        let y = Tensor::zeros(x.shape());
        let u = Tensor::zeros(h.shape());
        Self { x, y, h, u, step: 0 }
    }

    fn bind<'t>(&self, tape: &'t Tape) -> OdeVars<'t> {
        OdeVars {
            x: tape.constant(self.x.clone()),
            y: tape.constant(self.y.clone()),
            h: tape.constant(self.h.clone()),
            u: tape.constant(self.u.clone()),
        }
    }
}

/// The same state as tape variables.
#[derive(Clone, Copy)]
pub struct OdeVars<'t> {
    pub x: Var<'t>,
    pub y: Var<'t>,
    pub h: Var<'t>,
    pub u: Var<'t>,
}

impl<'t> OdeVars<'t> {
    fn to_state(self, step: usize) -> OdeState {
        OdeState {
            x: self.x.value(),
            y: self.y.value(),
            h: self.h.value(),
            u: self.u.value(),
            step,
        }
    }

    fn check_finite(&self, step: usize) -> Result<()> {
        for v in [self.x, self.y, self.h, self.u] {
            if let Some(kind) = NonFinite::classify(v.value_ref().data()) {
                return Err(Error::Instability { step, kind });
            }
        }
        Ok(())
    }
}

/// Graph inputs for the plain-tensor entry points.
#[derive(Clone, Copy)]
pub struct GraphData<'a> {
    pub topo: &'a Topology,
    pub edge_attr: Option<&'a Tensor>,
}

impl<'a> GraphData<'a> {
    fn ctx<'t>(&self, tape: &'t Tape) -> GraphCtx<'a, 't> {
        GraphCtx {
            topo: self.topo,
            edge_attr: self.edge_attr.map(|a| tape.constant(a.clone())),
        }
    }
}

/// Integrator plus its couplings (one, or one per step).
#[derive(Debug, Clone)]
pub struct Dusego<C> {
    pub config: DusegoConfig,
    pub couplings: Vec<C>,
}

impl<C: Coupling> Dusego<C> {
    pub fn new(config: DusegoConfig, couplings: Vec<C>) -> Result<Self> {
        config.validate()?;
        if couplings.len() != config.couplings_needed() {
            return Err(config_err(
                "share_weights",
                format!("{} couplings supplied, {} needed", couplings.len(), config.couplings_needed()),
            ));
        }
        Ok(Self { config, couplings })
    }

    /// Coupling used at step `n` (1-based).
    pub fn coupling(&self, n: usize) -> &C {
        if self.config.share_weights {
            &self.couplings[0]
        } else {
            &self.couplings[n - 1]
        }
    }

    /// Step `n` (1-based) on tape variables.
    pub fn step_vars<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        s: &OdeVars<'t>,
        n: usize,
    ) -> Result<OdeVars<'t>> {
        let cfg = &self.config;
        let dt = cfg.dt();
        let (xt, ht) = self.coupling(n).couple(p, ctx, s.x, s.h)?;
        let ht = match cfg.feature_activation {
            FeatureActivation::Identity => ht,
            FeatureActivation::Tanh => ht.tanh(),
        };
        let fx = xt.sub(s.x.scale(cfg.gamma_x))?;
        let y = s.y.add(fx.sub(s.y.scale(cfg.alpha))?.scale(dt))?;
        let x = s.x.add(y.scale(dt))?;
        let fh = ht.sub(s.h.scale(cfg.gamma_h))?;
        let u = s.u.add(fh.sub(s.u.scale(cfg.alpha))?.scale(dt))?;
        let h = s.h.add(u.scale(dt))?;
        let next = OdeVars { x, y, h, u };
        next.check_finite(n)?;
        Ok(next)
    }

    /// All steps. `trace`, when given, receives `(X^n, H^n)` for `n = 0..=N`.
    pub fn integrate_vars<'t>(
        &self,
        p: &[Var<'t>],
        ctx: &GraphCtx<'_, 't>,
        s0: OdeVars<'t>,
        mut trace: Option<&mut Vec<(Tensor, Tensor)>>,
    ) -> Result<OdeVars<'t>> {
        let mut s = s0;
        if let Some(t) = trace.as_deref_mut() {
            t.push((s.x.value(), s.h.value()));
        }
        for n in 1..=self.config.steps {
            s = self.step_vars(p, ctx, &s, n)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push((s.x.value(), s.h.value()));
            }
        }
        Ok(s)
    }

    /// One step on plain tensors, without recording gradients.
    pub fn imex_step(&self, store: &ParamStore, graph: GraphData<'_>, state: &OdeState) -> Result<OdeState> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let n = state.step + 1;
        let s = self.step_vars(&p, &graph.ctx(&tape), &state.bind(&tape), n)?;
        Ok(s.to_state(n))
    }

    /// Full integration on plain tensors; returns the final state and the `(X, H)` trace.
    pub fn integrate(
        &self,
        store: &ParamStore,
        graph: GraphData<'_>,
        initial: &OdeState,
    ) -> Result<(OdeState, Vec<(Tensor, Tensor)>)> {
        let mut trace = Vec::with_capacity(self.config.steps + 1);
        let mut state = initial.clone();
        trace.push((state.x.clone(), state.h.clone()));
        for _ in 0..self.config.steps {
            state = self.imex_step(store, graph, &state)?;
            trace.push((state.x.clone(), state.h.clone()));
        }
        Ok((state, trace))
    }

    /// Sup-norm force residuals `(‖X̃ − γ_x X‖, ‖σ(H̃) − γ_h H‖)` of the
    /// first-step coupling. A state with zero velocities is stationary
    /// exactly when both vanish.
    pub fn steady_state_residual(
        &self,
        store: &ParamStore,
        graph: GraphData<'_>,
        x: &Tensor,
        h: &Tensor,
    ) -> Result<(f64, f64)> {
        let cfg = &self.config;
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let (xt, ht) =
            self.coupling(1)
                .couple(&p, &graph.ctx(&tape), tape.constant(x.clone()), tape.constant(h.clone()))?;
        let xt = xt.value();
        let ht = match cfg.feature_activation {
            FeatureActivation::Identity => ht.value(),
            FeatureActivation::Tanh => ht.value().map(f64::tanh),
        };
        let rx = xt
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - cfg.gamma_x * b).abs())
            .fold(0.0, f64::max);
        let rh = ht
            .data()
            .iter()
            .zip(h.data())
            .map(|(a, b)| (a - cfg.gamma_h * b).abs())
            .fold(0.0, f64::max);
        Ok((rx, rh))
    }
}
