use autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays. Layers hold [`ParamId`]s into a store; a forward
/// pass binds the whole store onto a tape once and indexes the bound vars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Binds every array as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Binds every array as a constant; nothing is recorded for backward.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Flat view of parameter `k` of the concatenation of all arrays.
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if k < t.len() {
                return Some((ParamId(i), k));
            }
            k -= t.len();
        }
        None
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights and bias uniform in `±gain/√in_dim`.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
    ) -> Self {
        let bound = gain / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[in_dim, out_dim], bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, &[out_dim], bound)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p[self.weight.0])?;
        Ok(match self.bias {
            Some(b) => y.add_row(p[b.0])?,
            None => y,
        })
    }
}

/// Two linear layers with SiLU in between and optionally after.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub output_activation: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub output_bias: bool,
    pub output_activation: bool,
    /// Multiplies the output layer's init range.
    pub output_gain: f64,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: MlpSpec) -> Self {
        let first = Linear::init(store, rng, &format!("{name}.0"), spec.in_dim, spec.hidden, true, 1.0);
        let second = Linear::init(
            store,
            rng,
            &format!("{name}.1"),
            spec.hidden,
            spec.out_dim,
            spec.output_bias,
            spec.output_gain,
        );
        Self {
            first,
            second,
            output_activation: spec.output_activation,
        }
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let h = self.first.forward(p, x)?.silu();
        let y = self.second.forward(p, h)?;
        Ok(if self.output_activation { y.silu() } else { y })
    }
}
