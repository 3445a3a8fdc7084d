#![allow(dead_code)]

use autodiff::{Tape, Tensor};
use dusego::dynamics::{generate_split, NBodyConfig};
use dusego::graph::{GraphInstance, Target};
use dusego::model::{Batch, Model, ModelConfig, ModelKind};

pub fn nbody(count: usize, seed: u64) -> Vec<GraphInstance> {
    generate_split(&NBodyConfig::default(), seed, count).unwrap().graphs
}

pub fn short_nbody(count: usize, seed: u64) -> Vec<GraphInstance> {
    let cfg = NBodyConfig {
        steps: 100,
        ..NBodyConfig::default()
    };
    generate_split(&cfg, seed, count).unwrap().graphs
}

pub fn small(kind: ModelKind, depth: usize) -> ModelConfig {
    ModelConfig {
        kind,
        depth,
        hidden_dim: 8,
        feature_dim: 6,
        ..ModelConfig::default()
    }
}

pub fn outputs(model: &Model, graphs: &[GraphInstance]) -> (Tensor, Tensor) {
    let b = Batch::new(graphs).unwrap();
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let (x, h) = model.forward(&p, &tape, &b, None).unwrap();
    (x.value(), h.value())
}

pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let c = t.cols();
    Tensor::matrix(
        perm.len(),
        c,
        perm.iter().flat_map(|&k| t.row(k).iter().copied()).collect(),
    )
    .unwrap()
}

/// Node `k` of the result is node `perm[k]` of `g`.
pub fn relabel(g: &GraphInstance, perm: &[usize]) -> GraphInstance {
    let mut inv = vec![0; perm.len()];
    for (k, &old) in perm.iter().enumerate() {
        inv[old] = k;
    }
    let edges = g.edges().iter().map(|&(i, j)| (inv[i], inv[j])).collect();
    let mut out = GraphInstance::new(permute_rows(g.features(), perm), permute_rows(g.coords(), perm), edges).unwrap();
    if let Some(v) = g.velocities() {
        out = out.with_velocities(permute_rows(v, perm)).unwrap();
    }
    if let Some(a) = g.edge_attr() {
        out = out.with_edge_attr(a.clone()).unwrap();
    }
    let target = match g.target() {
        Target::Positions(t) => Target::Positions(permute_rows(t, perm)),
        Target::Adjacency(a) => {
            let m = perm.len();
            let mut p = Tensor::zeros(&[m, m]);
            for i in 0..m {
                for j in 0..m {
                    p.set(i, j, a.get(perm[i], perm[j]));
                }
            }
            Target::Adjacency(p)
        }
        Target::None => Target::None,
    };
    out.with_target(target).unwrap()
}
