use std::sync::Arc;

use autodiff::Tensor;

use crate::error::{Error, Result};

/// Directed edge `(center, neighbor)`: the message from `neighbor` is
/// aggregated into `center`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    None,
    /// Future coordinates, `M x n`.
    Positions(Tensor),
    /// Dense 0/1 adjacency, `M x M`.
    Adjacency(Tensor),
}

/// One graph sample. Immutable once built; every constructor validates the
/// row counts and edge indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    num_nodes: usize,
    edges: Vec<Edge>,
    features: Tensor,
    coords: Tensor,
    velocities: Option<Tensor>,
    edge_attr: Option<Tensor>,
    target: Target,
}

fn check_rows(what: &str, t: &Tensor, m: usize) -> Result<()> {
    if t.rank() != 2 || t.rows() != m {
        return Err(Error::Graph(format!(
            "{what} has shape {:?}, expected {m} rows",
            t.shape()
        )));
    }
    Ok(())
}

impl GraphInstance {
    pub fn new(features: Tensor, coords: Tensor, edges: Vec<Edge>) -> Result<Self> {
        let m = coords.rows();
        check_rows("coordinates", &coords, m)?;
        check_rows("features", &features, m)?;
        for &(i, j) in &edges {
            if i >= m || j >= m {
                return Err(Error::Graph(format!("edge ({i}, {j}) out of range for {m} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {i}")));
            }
        }
        Ok(Self {
            num_nodes: m,
            edges,
            features,
            coords,
            velocities: None,
            edge_attr: None,
            target: Target::None,
        })
    }

    pub fn with_velocities(mut self, v: Tensor) -> Result<Self> {
        check_rows("velocities", &v, self.num_nodes)?;
        if v.cols() != self.coords.cols() {
            return Err(Error::Graph(format!(
                "velocities have {} columns, coordinates {}",
                v.cols(),
                self.coords.cols()
            )));
        }
        self.velocities = Some(v);
        Ok(self)
    }

    /// One row per edge, in edge-list order.
    pub fn with_edge_attr(mut self, a: Tensor) -> Result<Self> {
        check_rows("edge attributes", &a, self.edges.len())?;
        self.edge_attr = Some(a);
        Ok(self)
    }

    pub fn with_target(mut self, target: Target) -> Result<Self> {
        match &target {
            Target::None => {}
            Target::Positions(p) => {
                check_rows("target positions", p, self.num_nodes)?;
                if p.cols() != self.coords.cols() {
                    return Err(Error::Graph("target positions width differs from coordinates".into()));
                }
            }
            Target::Adjacency(a) => {
                if a.shape() != [self.num_nodes, self.num_nodes] {
                    return Err(Error::Graph(format!(
                        "adjacency has shape {:?} for {} nodes",
                        a.shape(),
                        self.num_nodes
                    )));
                }
            }
        }
        self.target = target;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn velocities(&self) -> Option<&Tensor> {
        self.velocities.as_ref()
    }

    pub fn edge_attr(&self) -> Option<&Tensor> {
        self.edge_attr.as_ref()
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn edge_attr_dim(&self) -> usize {
        self.edge_attr.as_ref().map_or(0, Tensor::cols)
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.num_nodes, &self.edges)
    }
}

/// All ordered pairs `(i, j)`, `i != j`, row-major in `i`.
pub fn fully_connected(m: usize) -> Result<Vec<Edge>> {
    if m < 2 {
        return Err(Error::Graph(format!("fully connected graph needs at least 2 nodes, got {m}")));
    }
    Ok((0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect())
}

/// Undirected edge list (both directions) read off a symmetric 0/1 matrix.
pub fn edges_from_adjacency(adj: &Tensor) -> Vec<Edge> {
    let m = adj.rows();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && adj.get(i, j) != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Index arrays used by message passing.
#[derive(Debug, Clone)]
pub struct Topology {
    pub num_nodes: usize,
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
    /// Out-degree of each center (edges whose center is the node).
    pub degree: Vec<usize>,
    /// `1 / degree`, or 0 for isolated nodes.
    pub inv_degree: Arc<[f64]>,
}

impl Topology {
    pub fn new(num_nodes: usize, edges: &[Edge]) -> Self {
        let mut degree = vec![0usize; num_nodes];
        for &(i, _) in edges {
            degree[i] += 1;
        }
        let inv_degree: Vec<f64> = degree
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect();
        Self {
            num_nodes,
            centers: edges.iter().map(|e| e.0).collect(),
            neighbors: edges.iter().map(|e| e.1).collect(),
            degree,
            inv_degree: inv_degree.into(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.centers.len()
    }
}

/// Where each member graph sits inside a batched graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLayout {
    /// `len = graphs + 1`; graph `g` owns nodes `node_offsets[g]..node_offsets[g + 1]`.
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
}

impl BatchLayout {
    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn nodes(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    pub fn edges(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }
}

fn stack_rows(parts: &[&Tensor]) -> Tensor {
    let cols = parts[0].cols();
    let rows: usize = parts.iter().map(|t| t.rows()).sum();
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::matrix(rows, cols, data).expect("row counts add up")
}

fn slice_rows(t: &Tensor, range: std::ops::Range<usize>) -> Tensor {
    let c = t.cols();
    Tensor::matrix(range.len(), c, t.data()[range.start * c..range.end * c].to_vec())
        .expect("range within tensor")
}

fn mismatch(what: &str, g: usize) -> Error {
    Error::Dimension(format!("graph {g} differs from graph 0 in {what}"))
}

/// Disjoint union. Edge indices of graph `g` are shifted by its node
/// offset; adjacency targets become one block-diagonal matrix.
pub fn batch(graphs: &[GraphInstance]) -> Result<(GraphInstance, BatchLayout)> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Graph("cannot batch an empty list".into()))?;
    let mut node_offsets = vec![0];
    let mut edge_offsets = vec![0];
    let mut edges = Vec::new();
    for (g, gr) in graphs.iter().enumerate() {
        if gr.feature_dim() != first.feature_dim() {
            return Err(mismatch("feature width", g));
        }
        if gr.coord_dim() != first.coord_dim() {
            return Err(mismatch("coordinate width", g));
        }
        if gr.velocities.is_some() != first.velocities.is_some() {
            return Err(mismatch("presence of velocities", g));
        }
        if gr.edge_attr.is_some() != first.edge_attr.is_some() || gr.edge_attr_dim() != first.edge_attr_dim() {
            return Err(mismatch("edge attributes", g));
        }
        if std::mem::discriminant(&gr.target) != std::mem::discriminant(&first.target) {
            return Err(mismatch("target kind", g));
        }
        let off = *node_offsets.last().unwrap();
        edges.extend(gr.edges.iter().map(|&(i, j)| (i + off, j + off)));
        node_offsets.push(off + gr.num_nodes);
        edge_offsets.push(edges.len());
    }
    let total = *node_offsets.last().unwrap();

    let features = stack_rows(&graphs.iter().map(|g| &g.features).collect::<Vec<_>>());
    let coords = stack_rows(&graphs.iter().map(|g| &g.coords).collect::<Vec<_>>());
    let mut out = GraphInstance::new(features, coords, edges)?;
    if first.velocities.is_some() {
        let vs: Vec<&Tensor> = graphs.iter().map(|g| g.velocities.as_ref().unwrap()).collect();
        out = out.with_velocities(stack_rows(&vs))?;
    }
    if first.edge_attr.is_some() {
        let dim = first.edge_attr_dim();
        let data: Vec<f64> = graphs
            .iter()
            .flat_map(|g| g.edge_attr.as_ref().unwrap().data().iter().copied())
            .collect();
        let e = out.edges.len();
        out = out.with_edge_attr(Tensor::matrix(e, dim, data)?)?;
    }
    let target = match &first.target {
        Target::None => Target::None,
        Target::Positions(_) => {
            let ps: Vec<&Tensor> = graphs
                .iter()
                .map(|g| match &g.target {
                    Target::Positions(p) => p,
                    _ => unreachable!("target kinds checked above"),
                })
                .collect();
            Target::Positions(stack_rows(&ps))
        }
        Target::Adjacency(_) => {
            let mut big = Tensor::zeros(&[total, total]);
            for (g, gr) in graphs.iter().enumerate() {
                let Target::Adjacency(a) = &gr.target else {
                    unreachable!("target kinds checked above")
                };
                let off = node_offsets[g];
                for i in 0..gr.num_nodes {
                    for j in 0..gr.num_nodes {
                        big.set(off + i, off + j, a.get(i, j));
                    }
                }
            }
            Target::Adjacency(big)
        }
    };
    out = out.with_target(target)?;
    Ok((out, BatchLayout { node_offsets, edge_offsets }))
}

/// Inverse of [`batch`].
pub fn unbatch(batched: &GraphInstance, layout: &BatchLayout) -> Result<Vec<GraphInstance>> {
    let mut out = Vec::with_capacity(layout.num_graphs());
    for g in 0..layout.num_graphs() {
        let nodes = layout.nodes(g);
        let erange = layout.edges(g);
        let off = nodes.start;
        let edges = batched.edges[erange.clone()]
            .iter()
            .map(|&(i, j)| (i - off, j - off))
            .collect();
        let mut gr = GraphInstance::new(
            slice_rows(&batched.features, nodes.clone()),
            slice_rows(&batched.coords, nodes.clone()),
            edges,
        )?;
        if let Some(v) = &batched.velocities {
            gr = gr.with_velocities(slice_rows(v, nodes.clone()))?;
        }
        if let Some(a) = &batched.edge_attr {
            gr = gr.with_edge_attr(slice_rows(a, erange))?;
        }
        let target = match &batched.target {
            Target::None => Target::None,
            Target::Positions(p) => Target::Positions(slice_rows(p, nodes.clone())),
            Target::Adjacency(a) => {
                let m = nodes.len();
                let mut t = Tensor::zeros(&[m, m]);
                for i in 0..m {
                    for j in 0..m {
                        t.set(i, j, a.get(off + i, off + j));
                    }
                }
                Target::Adjacency(t)
            }
        };
        out.push(gr.with_target(target)?);
    }
    Ok(out)
}

/// Row-slices a per-node tensor for graph `g` of a batch.
pub fn graph_rows(t: &Tensor, layout: &BatchLayout, g: usize) -> Tensor {
    slice_rows(t, layout.nodes(g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(m: usize, shift: f64) -> GraphInstance {
        let f = Tensor::matrix(m, 2, (0..2 * m).map(|k| k as f64 + shift).collect()).unwrap();
        let x = Tensor::matrix(m, 3, (0..3 * m).map(|k| (k as f64 + shift).sin()).collect()).unwrap();
        let edges = fully_connected(m).unwrap();
        let a = Tensor::matrix(edges.len(), 1, edges.iter().map(|&(i, j)| (i * j) as f64).collect()).unwrap();
        GraphInstance::new(f, x.clone(), edges)
            .unwrap()
            .with_velocities(x.map(|v| -v))
            .unwrap()
            .with_edge_attr(a)
            .unwrap()
            .with_target(Target::Positions(x.map(|v| 2.0 * v)))
            .unwrap()
    }

    #[test]
    fn fully_connected_counts() {
        assert_eq!(fully_connected(2).unwrap(), vec![(0, 1), (1, 0)]);
        assert_eq!(fully_connected(5).unwrap().len(), 20);
        let e3 = fully_connected(3).unwrap();
        assert_eq!(e3.len(), 6);
        assert!(e3.iter().all(|&(i, j)| i < 3 && j < 3 && i != j));
        assert!(fully_connected(1).is_err());
    }

    #[test]
    fn rejects_bad_edges_and_rows() {
        let f = Tensor::zeros(&[3, 1]);
        let x = Tensor::zeros(&[3, 3]);
        assert!(GraphInstance::new(f.clone(), x.clone(), vec![(0, 3)]).is_err());
        assert!(GraphInstance::new(f.clone(), x.clone(), vec![(1, 1)]).is_err());
        assert!(GraphInstance::new(Tensor::zeros(&[2, 1]), x.clone(), vec![]).is_err());
        let g = GraphInstance::new(f, x, vec![]).unwrap();
        assert!(g.with_velocities(Tensor::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn batch_of_one_is_identity() {
        let g = tiny(4, 0.0);
        let (b, layout) = batch(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b, g);
        assert_eq!(layout.node_offsets, vec![0, 4]);
    }

    #[test]
    fn second_graph_edges_shift() {
        let (b, layout) = batch(&[tiny(5, 0.0), tiny(5, 1.0)]).unwrap();
        assert_eq!(b.num_nodes(), 10);
        assert_eq!(b.edges()[20], (5, 6));
        assert!(b.edges()[20..].iter().all(|&(i, j)| i >= 5 && j >= 5));
        assert_eq!(layout.edge_offsets, vec![0, 20, 40]);
    }

    #[test]
    fn batch_roundtrip_with_adjacency() {
        let mk = |m: usize| {
            let mut adj = Tensor::zeros(&[m, m]);
            adj.set(0, 1, 1.0);
            adj.set(1, 0, 1.0);
            let edges = edges_from_adjacency(&adj);
            GraphInstance::new(Tensor::full(&[m, 1], 1.0), Tensor::zeros(&[m, 2]), edges)
                .unwrap()
                .with_target(Target::Adjacency(adj))
                .unwrap()
        };
        let gs = vec![mk(3), mk(5)];
        let (b, layout) = batch(&gs).unwrap();
        let Target::Adjacency(a) = b.target() else { panic!() };
        assert_eq!(a.get(3, 4), 1.0);
        assert_eq!(a.get(0, 4), 0.0);
        assert_eq!(unbatch(&b, &layout).unwrap(), gs);
    }

    #[test]
    fn batch_rejects_mixed_widths() {
        let a = tiny(3, 0.0);
        let b = GraphInstance::new(Tensor::zeros(&[3, 5]), Tensor::zeros(&[3, 3]), vec![]).unwrap();
        assert!(matches!(batch(&[a, b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn isolated_node_has_zero_inverse_degree() {
        let t = Topology::new(3, &[(0, 1), (1, 0)]);
        assert_eq!(&*t.inv_degree, &[1.0, 1.0, 0.0]);
        let full = Topology::new(5, &fully_connected(5).unwrap());
        assert!(full.inv_degree.iter().all(|&c| c == 0.25));
    }
}
