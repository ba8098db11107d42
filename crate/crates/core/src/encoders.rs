//! Dual-view GNN encoders.
//!
//! The local view aggregates uniformly sampled one-hop neighborhoods of the
//! original graph with a mean, concatenates the node's own previous
//! representation, and applies a linear map and ReLU at each depth. The
//! global view takes a diffusion-weighted sum over the sparsified diffusion
//! row, then a linear map and ReLU, with no skip connection. The final node
//! embedding concatenates both views.
//!
//! Weights are stored input-major (`in x out`), so a layer is `H · W`.

use std::collections::HashMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::diffusion::DiffusionMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{CsrMatrix, Matrix};

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("glorot shape")
}

/// Weights of both encoders. The same tensors serve the source and target
/// graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub local: Vec<Matrix>,
    pub global: Vec<Matrix>,
}

impl EncoderParams {
    /// Layer `k` of the local encoder is `(2·in_k) x out_k`; of the global
    /// encoder `in_k x out_k`, with `in_1 = input_dim` and `in_k = out_{k-1}`.
    pub fn init(input_dim: usize, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) || input_dim == 0 {
            return Err(Error::invalid(format!(
                "encoder needs K >= 1 nonzero layer widths, got input {input_dim}, layers {dims:?}"
            )));
        }
        let mut local = Vec::with_capacity(dims.len());
        let mut global = Vec::with_capacity(dims.len());
        let mut fan_in = input_dim;
        for &out in dims {
            local.push(glorot_uniform(2 * fan_in, out, rng));
            global.push(glorot_uniform(fan_in, out, rng));
            fan_in = out;
        }
        Ok(Self { local, global })
    }

    pub fn depth(&self) -> usize {
        self.local.len()
    }

    pub fn input_dim(&self) -> usize {
        self.global[0].rows()
    }

    /// Width of each view's output.
    pub fn view_dim(&self) -> usize {
        self.global.last().map_or(0, Matrix::cols)
    }
}

/// Attribute rows as seen by an encoder: the original matrix, or a
/// row-permuted (corrupted) view of it.
#[derive(Clone, Copy, Debug)]
pub struct NodeFeatures<'a> {
    attrs: &'a Matrix,
    perm: Option<&'a [usize]>,
}

impl<'a> NodeFeatures<'a> {
    pub fn original(attrs: &'a Matrix) -> Self {
        Self { attrs, perm: None }
    }

    /// Node `v` sees row `perm[v]`.
    pub fn permuted(attrs: &'a Matrix, perm: &'a [usize]) -> Self {
        Self {
            attrs,
            perm: Some(perm),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.attrs.rows()
    }

    pub fn dim(&self) -> usize {
        self.attrs.cols()
    }

    pub fn gather(&self, nodes: &[usize]) -> Matrix {
        match self.perm {
            None => self.attrs.select_rows(nodes),
            Some(p) => {
                let idx: Vec<usize> = nodes.iter().map(|&v| p[v]).collect();
                self.attrs.select_rows(&idx)
            }
        }
    }
}

/// Ordered, duplicate-free node list that remembers positions.
#[derive(Clone, Debug, Default)]
struct NodeIndex {
    nodes: Vec<usize>,
    pos: HashMap<usize, usize>,
}

impl NodeIndex {
    fn insert(&mut self, v: usize) -> usize {
        if let Some(&p) = self.pos.get(&v) {
            return p;
        }
        self.nodes.push(v);
        self.pos.insert(v, self.nodes.len() - 1);
        self.nodes.len() - 1
    }
}

/// Recursively sampled neighborhoods of a batch for the local encoder.
///
/// `levels[0]` holds the distinct batch nodes; `levels[j]` extends
/// `levels[j-1]` with the hop-`j` samples of every node in `levels[j-1]`.
/// `samples[j-1][i]` lists the `s_j` neighbors sampled for `levels[j-1][i]`,
/// as positions into `levels[j]`.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    batch_rows: Vec<usize>,
    sizes: Vec<usize>,
    levels: Vec<Vec<usize>>,
    samples: Vec<Vec<Vec<usize>>>,
}

impl SamplePlan {
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Distinct batch nodes in first-appearance order.
    pub fn batch_nodes(&self) -> &[usize] {
        &self.levels[0]
    }

    /// Every node whose attributes the plan reads.
    pub fn closure(&self) -> &[usize] {
        self.levels.last().expect("at least one level")
    }

    pub fn level(&self, j: usize) -> &[usize] {
        &self.levels[j]
    }

    /// Node ids sampled at hop `j` (1-based) for `level(j-1)[i]`.
    pub fn sampled(&self, j: usize, i: usize) -> Vec<usize> {
        self.samples[j - 1][i]
            .iter()
            .map(|&p| self.levels[j][p])
            .collect()
    }

    /// Mean-aggregation operator for hop `j`: `|level(j-1)| x |level(j)|`
    /// with weight `1/s_j` per sampled entry.
    fn aggregator(&self, j: usize) -> CsrMatrix {
        let w = 1.0 / self.sizes[j - 1] as f64;
        let rows: Vec<Vec<(usize, f64)>> = self.samples[j - 1]
            .iter()
            .map(|list| list.iter().map(|&p| (p, w)).collect())
            .collect();
        CsrMatrix::from_row_lists(self.levels[j].len(), &rows).expect("plan positions in range")
    }
}

/// Samples `sizes[j-1]` neighbors at hop `j` for every node reached at hop
/// `j-1`. Uniform without replacement when the degree allows it, uniform with
/// replacement otherwise; an isolated node samples itself.
pub fn sample_neighborhoods(graph: &Graph, batch: &[usize], sizes: &[usize], seed: u64) -> SamplePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = NodeIndex::default();
    let batch_rows: Vec<usize> = batch.iter().map(|&v| first.insert(v)).collect();
    let mut levels = vec![first.nodes.clone()];
    let mut samples = Vec::with_capacity(sizes.len());
    let mut index = first;
    for &s in sizes {
        let prev = levels.last().unwrap().clone();
        let mut hop = Vec::with_capacity(prev.len());
        for &v in &prev {
            let nbrs = graph.neighbors(v);
            let picked: Vec<usize> = if nbrs.is_empty() {
                vec![v; s]
            } else if nbrs.len() >= s {
                nbrs.choose_multiple(&mut rng, s).copied().collect()
            } else {
                (0..s).map(|_| nbrs[rng.gen_range(0..nbrs.len())]).collect()
            };
            hop.push(picked.into_iter().map(|u| index.insert(u)).collect());
        }
        samples.push(hop);
        levels.push(index.nodes.clone());
    }
    SamplePlan {
        batch_rows,
        sizes: sizes.to_vec(),
        levels,
        samples,
    }
}

fn expand_batch(plan_rows: &[usize], out: Var) -> Result<Var> {
    let identity = plan_rows.iter().enumerate().all(|(i, &r)| i == r);
    if identity {
        Ok(out)
    } else {
        out.gather_rows(plan_rows)
    }
}

/// Local-view embeddings of the plan's batch, one row per batch entry.
pub fn encode_local(
    tape: &Tape,
    features: NodeFeatures<'_>,
    plan: &SamplePlan,
    weights: &[Var],
) -> Result<Var> {
    let depth = plan.depth();
    if weights.len() != depth {
        return Err(Error::shape(
            "encode_local",
            format!("{} weight matrices for depth {depth}", weights.len()),
        ));
    }
    let w0 = weights[0].shape();
    if w0.0 != 2 * features.dim() {
        return Err(Error::shape(
            "encode_local",
            format!("first weight {w0:?} does not fit attribute width {}", features.dim()),
        ));
    }
    let mut h = tape.constant(features.gather(plan.closure()));
    for (k, w) in weights.iter().enumerate() {
        let hop = depth - k;
        let agg = h.spmm(Rc::new(plan.aggregator(hop)))?;
        let own_idx: Vec<usize> = (0..plan.level(hop - 1).len()).collect();
        let own = h.gather_rows(&own_idx)?;
        h = own.concat_cols(&agg)?.matmul(w)?.relu();
    }
    expand_batch(&plan.batch_rows, h)
}

/// Diffusion neighborhoods of a batch for the global encoder, up to depth K.
#[derive(Clone, Debug)]
pub struct DiffusionPlan {
    batch_rows: Vec<usize>,
    levels: Vec<Vec<usize>>,
    mixers: Vec<Vec<Vec<(usize, f64)>>>,
}

impl DiffusionPlan {
    pub fn build(diffusion: &DiffusionMatrix, batch: &[usize], depth: usize) -> Result<Self> {
        let n = diffusion.num_nodes();
        if let Some(&v) = batch.iter().find(|&&v| v >= n) {
            return Err(Error::invalid(format!("batch node {v} outside diffusion of {n} nodes")));
        }
        let mut index = NodeIndex::default();
        let batch_rows: Vec<usize> = batch.iter().map(|&v| index.insert(v)).collect();
        let mut levels = vec![index.nodes.clone()];
        let mut mixers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let prev = levels.last().unwrap().clone();
            let rows: Vec<Vec<(usize, f64)>> = prev
                .iter()
                .map(|&v| {
                    diffusion
                        .row(v)
                        .iter()
                        .map(|&(u, w)| (index.insert(u), w))
                        .collect()
                })
                .collect();
            mixers.push(rows);
            levels.push(index.nodes.clone());
        }
        Ok(Self {
            batch_rows,
            levels,
            mixers,
        })
    }

    pub fn depth(&self) -> usize {
        self.mixers.len()
    }

    pub fn closure(&self) -> &[usize] {
        self.levels.last().expect("at least one level")
    }

    fn mixer(&self, j: usize) -> CsrMatrix {
        CsrMatrix::from_row_lists(self.levels[j].len(), &self.mixers[j - 1])
            .expect("plan positions in range")
    }
}

/// Global-view embeddings of the plan's batch, one row per batch entry.
pub fn encode_global(
    tape: &Tape,
    features: NodeFeatures<'_>,
    diffusion: &DiffusionMatrix,
    plan: &DiffusionPlan,
    weights: &[Var],
) -> Result<Var> {
    if diffusion.num_nodes() != features.num_nodes() {
        return Err(Error::shape(
            "encode_global",
            format!(
                "diffusion over {} nodes, attributes for {}",
                diffusion.num_nodes(),
                features.num_nodes()
            ),
        ));
    }
    let depth = plan.depth();
    if weights.len() != depth {
        return Err(Error::shape(
            "encode_global",
            format!("{} weight matrices for depth {depth}", weights.len()),
        ));
    }
    let w0 = weights[0].shape();
    if w0.0 != features.dim() {
        return Err(Error::shape(
            "encode_global",
            format!("first weight {w0:?} does not fit attribute width {}", features.dim()),
        ));
    }
    let mut h = tape.constant(features.gather(plan.closure()));
    for (k, w) in weights.iter().enumerate() {
        let hop = depth - k;
        h = h.spmm(Rc::new(plan.mixer(hop)))?.matmul(w)?.relu();
    }
    expand_batch(&plan.batch_rows, h)
}

/// Row-wise concatenation of the two views.
pub fn embed(local: &Var, global: &Var) -> Result<Var> {
    local.concat_cols(global).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape("embed", format!("batch order mismatch: {detail}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion;
    use crate::graph::Side;
    use approx::assert_abs_diff_eq;

    fn graph(attrs: Matrix, edges: &[(usize, usize)]) -> Graph {
        let n = attrs.rows();
        Graph::new(edges, attrs, vec![None; n], 1, Side::Source).unwrap()
    }

    fn star(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (0, v)).collect();
        graph(Matrix::zeros(n, 2), &edges)
    }

    #[test]
    fn high_degree_samples_distinct() {
        let g = star(10);
        let plan = sample_neighborhoods(&g, &[0], &[5], 3);
        let mut s = plan.sampled(1, 0);
        assert_eq!(s.len(), 5);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|&u| g.has_edge(0, u)));
    }

    #[test]
    fn low_degree_samples_with_replacement() {
        let g = star(3);
        let plan = sample_neighborhoods(&g, &[1], &[4], 3);
        assert_eq!(plan.sampled(1, 0), vec![0; 4]);
    }

    #[test]
    fn isolated_node_samples_itself() {
        let g = graph(Matrix::zeros(3, 1), &[(0, 1)]);
        let plan = sample_neighborhoods(&g, &[2], &[3, 2], 0);
        assert_eq!(plan.sampled(1, 0), vec![2, 2, 2]);
        assert_eq!(plan.closure(), &[2]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = star(30);
        let a = sample_neighborhoods(&g, &[0, 3, 7], &[4, 3], 11);
        let b = sample_neighborhoods(&g, &[0, 3, 7], &[4, 3], 11);
        assert_eq!(a.levels, b.levels);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn local_mean_before_concat() {
        // node 0 with neighbors 1, 2; K = 1, s = 2 draws both neighbors.
        let attrs = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        let g = graph(attrs.clone(), &[(0, 1), (0, 2)]);
        let plan = sample_neighborhoods(&g, &[0], &[2], 0);
        let t = Tape::new();
        // W picks out the neighbor half: [h_v; h_S] · W = h_S
        let mut w = Matrix::zeros(4, 2);
        w.set(2, 0, 1.0);
        w.set(3, 1, 1.0);
        let w = t.constant(w);
        let e = encode_local(&t, NodeFeatures::original(&attrs), &plan, &[w]).unwrap();
        assert_eq!(e.value().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = star(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attrs = glorot_uniform(6, 2, &mut rng).map(f64::abs);
        let plan = sample_neighborhoods(&g, &[0, 1, 2], &[2, 2], 0);
        let t = Tape::new();
        let ws = [t.constant(Matrix::zeros(4, 3)), t.constant(Matrix::zeros(6, 3))];
        let e = encode_local(&t, NodeFeatures::original(&attrs), &plan, &ws).unwrap();
        assert!(e.value().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_attributes_give_identical_embeddings() {
        let g = star(8);
        let attrs = Matrix::filled(8, 3, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = EncoderParams::init(3, &[4, 2], &mut rng).unwrap();
        let batch: Vec<usize> = (0..8).collect();
        let plan = sample_neighborhoods(&g, &batch, &[3, 3], 1);
        let t = Tape::new();
        let ws: Vec<Var> = params.local.iter().map(|w| t.constant(w.clone())).collect();
        let e = encode_local(&t, NodeFeatures::original(&attrs), &plan, &ws).unwrap().value();
        for r in 1..8 {
            assert_eq!(e.row(r), e.row(0));
        }
    }

    #[test]
    fn local_weight_width_is_checked() {
        let g = star(4);
        let attrs = Matrix::zeros(4, 2);
        let plan = sample_neighborhoods(&g, &[0], &[2], 0);
        let t = Tape::new();
        let w = t.constant(Matrix::zeros(3, 2));
        assert!(matches!(
            encode_local(&t, NodeFeatures::original(&attrs), &plan, &[w]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn self_loop_diffusion_is_per_node_mlp() {
        let attrs = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap();
        let d = DiffusionMatrix::from_rows(0.1, 1, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let plan = DiffusionPlan::build(&d, &[0, 1], 1).unwrap();
        let t = Tape::new();
        let wm = Matrix::from_rows(&[vec![1.0, 0.5], vec![-1.0, 2.0]]).unwrap();
        let w = t.constant(wm.clone());
        let e = encode_global(&t, NodeFeatures::original(&attrs), &d, &plan, &[w]).unwrap();
        let mlp = attrs.matmul(&wm).unwrap().map(|x| x.max(0.0));
        assert_eq!(e.value(), mlp);
    }

    #[test]
    fn zero_diffusion_row_gives_zero() {
        let attrs = Matrix::filled(2, 2, 1.0);
        let d = DiffusionMatrix::from_rows(0.1, 2, vec![vec![(0, 0.0), (1, 0.0)], vec![(1, 1.0)]])
            .unwrap();
        let plan = DiffusionPlan::build(&d, &[0], 1).unwrap();
        let t = Tape::new();
        let w = t.constant(Matrix::identity(2));
        let e = encode_global(&t, NodeFeatures::original(&attrs), &d, &plan, &[w]).unwrap();
        assert_eq!(e.value().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn two_node_global_hand_values() {
        // P = [[0.55, 0.45], [0.45, 0.55]], x = [1, 2], W = [2]:
        // h_0 = relu(2·(0.55·1 + 0.45·2)) = 2.9, h_1 = relu(2·(0.45 + 1.1)) = 3.1
        let attrs = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let g = graph(attrs.clone(), &[(0, 1)]);
        let d = diffusion::compute(&g, 0.1, 2).unwrap();
        let plan = DiffusionPlan::build(&d, &[0, 1], 1).unwrap();
        let t = Tape::new();
        let w = t.constant(Matrix::scalar(2.0));
        let e = encode_global(&t, NodeFeatures::original(&attrs), &d, &plan, &[w]).unwrap().value();
        assert_abs_diff_eq!(e.get(0, 0), 2.9, epsilon = 1e-12);
        assert_abs_diff_eq!(e.get(1, 0), 3.1, epsilon = 1e-12);
    }

    #[test]
    fn diffusion_size_mismatch_rejected() {
        let attrs = Matrix::zeros(3, 1);
        let d = DiffusionMatrix::from_rows(0.1, 1, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let plan = DiffusionPlan::build(&d, &[0], 1).unwrap();
        let t = Tape::new();
        let w = t.constant(Matrix::scalar(1.0));
        assert!(encode_global(&t, NodeFeatures::original(&attrs), &d, &plan, &[w]).is_err());
    }

    #[test]
    fn embed_concatenates() {
        let t = Tape::new();
        let a = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let b = t.constant(Matrix::row_vector(&[3.0]));
        assert_eq!(embed(&a, &b).unwrap().value().as_slice(), &[1.0, 2.0, 3.0]);
        let c = t.constant(Matrix::zeros(2, 1));
        assert!(matches!(embed(&a, &c), Err(Error::Shape { op: "embed", .. })));
    }

    #[test]
    fn default_layer_widths_give_128_dim_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = EncoderParams::init(10, &[1024, 64], &mut rng).unwrap();
        assert_eq!(p.local[0].shape(), (20, 1024));
        assert_eq!(p.local[1].shape(), (2048, 64));
        assert_eq!(p.global[1].shape(), (1024, 64));
        assert_eq!(2 * p.view_dim(), 128);
    }

    #[test]
    fn duplicate_batch_entries_are_expanded() {
        let g = star(5);
        let attrs = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]]).unwrap();
        let plan = sample_neighborhoods(&g, &[2, 0, 2], &[1], 0);
        let t = Tape::new();
        let w = t.constant(Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap());
        let e = encode_local(&t, NodeFeatures::original(&attrs), &plan, &[w]).unwrap().value();
        assert_eq!(e.as_slice(), &[3.0, 1.0, 3.0]);
    }
}
