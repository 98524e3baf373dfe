use std::sync::Arc;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::graphbuild::NodeKey;
use crate::numkit::{ParamId, Rng, Tape, Var};

/// Directed message lists derived from undirected edges: entry `e` carries a message
/// from `sources[e]` to `targets[e]`. Sorted by `(target, source)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub targets: Arc<[usize]>,
    pub sources: Arc<[usize]>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(2 * edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid("edge", format!("({a}, {b}) with {n} nodes")));
            }
            directed.push((a, b));
            if a != b {
                directed.push((b, a));
            }
        }
        directed.sort_unstable();
        directed.dedup();
        let mut has_edge = vec![false; n];
        for &(t, _) in &directed {
            has_edge[t] = true;
        }
        if let Some(i) = has_edge.iter().position(|&h| !h) {
            return Err(Error::invalid(
                "graph",
                format!("node {i} has no incident edge (missing self-loop)"),
            ));
        }
        Ok(Adjacency {
            n,
            targets: directed.iter().map(|&(t, _)| t).collect(),
            sources: directed.iter().map(|&(_, s)| s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Single-head GATv2 convolution:
///
/// ```text
/// e_ij  = aᵀ · LeakyReLU(W_src·h_i + W_dst·h_j + bias)     j ∈ N(i)
/// α_ij  = softmax_j(e_ij)
/// out_i = Σ_j α_ij · W_dst·h_j
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GatV2Layer {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    /// `d_out × 1`.
    pub att: ParamId,
    /// `1 × d_out`.
    pub bias: ParamId,
    pub leaky_slope: f64,
    pub d_in: usize,
    pub d_out: usize,
}

pub struct GatV2Output {
    pub out: Var,
    /// `E × 1` attention coefficients aligned with the adjacency entries.
    pub alpha: Var,
}

impl GatV2Layer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        leaky_slope: f64,
        rng: &mut Rng,
    ) -> Self {
        GatV2Layer {
            w_src: store.add_weight(format!("{prefix}.w_src"), d_in, d_out, rng),
            w_dst: store.add_weight(format!("{prefix}.w_dst"), d_in, d_out, rng),
            att: store.add_weight(format!("{prefix}.att"), d_out, 1, rng),
            bias: store.add_bias(format!("{prefix}.bias"), d_out),
            leaky_slope,
            d_in,
            d_out,
        }
    }

    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        adj: &Adjacency,
    ) -> Result<GatV2Output> {
        if tape.value(x).rows() != adj.n {
            return Err(Error::shape(
                "gatv2",
                format!("{} feature rows for {} nodes", tape.value(x).rows(), adj.n),
            ));
        }
        let src = tape.matmul(x, params[self.w_src.0])?;
        let dst = tape.matmul(x, params[self.w_dst.0])?;
        let src_e = tape.gather_rows(src, adj.targets.clone())?;
        let dst_e = tape.gather_rows(dst, adj.sources.clone())?;
        let z = tape.add(src_e, dst_e)?;
        let z = tape.add_row(z, params[self.bias.0])?;
        let z = tape.leaky_relu(z, self.leaky_slope);
        let scores = tape.matmul(z, params[self.att.0])?;
        let alpha = tape.segment_softmax(scores, adj.targets.clone())?;
        let messages = tape.mul_col(dst_e, alpha)?;
        let out = tape.segment_sum(messages, adj.targets.clone(), adj.n)?;
        Ok(GatV2Output { out, alpha })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, adj: &Adjacency) -> Result<Var> {
        Ok(self.forward_with_attention(tape, params, x, adj)?.out)
    }
}

/// Node set flowing between graph blocks.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub x: Var,
    pub keys: Vec<NodeKey>,
    /// Undirected pairs including self-loops.
    pub edges: Vec<(usize, usize)>,
}

/// Self-attention graph pooling with a GATv2 scorer of output width 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SagPoolLayer {
    pub score: GatV2Layer,
    pub ratio: f64,
}

pub struct SagPoolOutput {
    pub state: GraphState,
    /// Indices (into the input nodes, ascending) of the kept nodes.
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
}

/// `ceil(ratio · n)`, at least 1 and at most `n`.
pub fn pooled_size(ratio: f64, n: usize) -> usize {
    // the small offset stops products like 0.6·5 = 3.0000000000000004 rounding up
    let k = (ratio * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n.max(1))
}

/// Indices of the `k` highest scores; ties go to the smaller node key.
pub fn top_k(scores: &[f64], keys: &[NodeKey], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

impl SagPoolLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, ratio: f64, leaky_slope: f64, rng: &mut Rng) -> Self {
        SagPoolLayer {
            score: GatV2Layer::new(store, prefix, d, 1, leaky_slope, rng),
            ratio,
        }
    }

    /// Keeps the top `ceil(ratio·N)` nodes by score and gates them by `tanh(score)`. The
    /// selection itself is not differentiated.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], state: &GraphState) -> Result<SagPoolOutput> {
        let n = state.keys.len();
        if n == 0 {
            return Err(Error::EmptySlide("pooling an empty graph".into()));
        }
        let adj = Adjacency::from_edges(n, &state.edges)?;
        let s = self.score.forward(tape, params, state.x, &adj)?;
        let scores = tape.value(s).data().to_vec();
        let kept = top_k(&scores, &state.keys, pooled_size(self.ratio, n));

        let rows: Arc<[usize]> = kept.clone().into();
        let x_kept = tape.gather_rows(state.x, rows.clone())?;
        let s_kept = tape.gather_rows(s, rows)?;
        let gate = tape.tanh(s_kept);
        let x = tape.mul_col(x_kept, gate)?;

        let mut remap = vec![usize::MAX; n];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let edges = state
            .edges
            .iter()
            .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
            .map(|&(a, b)| (remap[a], remap[b]))
            .collect();
        Ok(SagPoolOutput {
            state: GraphState {
                x,
                keys: kept.iter().map(|&i| state.keys[i]).collect(),
                edges,
            },
            kept,
            scores,
        })
    }
}

/// Message-passing layers (each followed by ReLU) and one pooling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBlock {
    pub message_layers: Vec<GatV2Layer>,
    pub pool: SagPoolLayer,
}

impl GraphBlock {
    /// Returns the pooled state and the `1 × 2d` readout `[mean ‖ max]` over kept nodes.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], state: GraphState) -> Result<(GraphState, Var)> {
        let adj = Adjacency::from_edges(state.keys.len(), &state.edges)?;
        let mut x = state.x;
        for layer in &self.message_layers {
            let h = layer.forward(tape, params, x, &adj)?;
            x = tape.relu(h);
        }
        let pooled = self.pool.forward(tape, params, &GraphState { x, ..state })?;
        let mean = tape.mean_rows(pooled.state.x)?;
        let max = tape.max_rows(pooled.state.x)?;
        let readout = tape.concat_cols(&[mean, max])?;
        Ok((pooled.state, readout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;
    use crate::slideio::Magnification;

    fn keys(n: usize) -> Vec<NodeKey> {
        let mag = Magnification::new(10.0).unwrap();
        (0..n as u32).map(|c| NodeKey { mag, row: 0, col: c }).collect()
    }

    #[test]
    fn pooled_sizes() {
        assert_eq!(pooled_size(0.6, 5), 3);
        assert_eq!(pooled_size(1.0, 7), 7);
        assert_eq!(pooled_size(0.1, 3), 1);
        assert_eq!(pooled_size(0.9, 10), 9);
        assert_eq!(pooled_size(0.45, 11), 5);
    }

    #[test]
    fn top_k_breaks_ties_by_key() {
        let k = keys(4);
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 2.0], &k, 2), vec![1, 2]);
        assert_eq!(top_k(&[1.0, 1.0, 1.0, 1.0], &k, 2), vec![0, 1]);
        let reversed: Vec<NodeKey> = k.iter().rev().copied().collect();
        assert_eq!(top_k(&[1.0, 1.0, 1.0, 1.0], &reversed, 2), vec![2, 3]);
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let mut rng = Rng::substream(5, "t");
        let mut store = ParamStore::new();
        let layer = GatV2Layer::new(&mut store, "g", 3, 2, 0.2, &mut rng);
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let h = vec![0.3, -1.2, 0.8];
        let x = tape.constant(Tensor::row(h.clone()));
        let adj = Adjacency::from_edges(1, &[(0, 0)]).unwrap();
        let out = layer.forward_with_attention(&mut tape, &params, x, &adj).unwrap();
        assert_eq!(tape.value(out.alpha).data(), &[1.0]);
        let w = store.get(layer.w_dst);
        for c in 0..2 {
            let expected: f64 = (0..3).map(|k| h[k] * w.get(k, c)).sum();
            assert!((tape.value(out.out).data()[c] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_neighbors_split_attention() {
        let mut rng = Rng::substream(6, "t");
        let mut store = ParamStore::new();
        let layer = GatV2Layer::new(&mut store, "g", 2, 2, 0.2, &mut rng);
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        // node 0 is linked to nodes 1 and 2 only (no self-loop on 0 for this check)
        let x = tape.constant(Tensor::matrix(3, 2, vec![5.0, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap());
        let adj = Adjacency::from_edges(3, &[(0, 1), (0, 2), (1, 1), (2, 2)]).unwrap();
        let out = layer.forward_with_attention(&mut tape, &params, x, &adj).unwrap();
        let alpha = tape.value(out.alpha).data();
        let to_zero: Vec<f64> = adj.targets.iter().zip(alpha).filter(|(t, _)| **t == 0).map(|(_, a)| *a).collect();
        assert_eq!(to_zero.len(), 2);
        assert!((to_zero[0] - 0.5).abs() < 1e-15 && (to_zero[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_self_loop_is_an_error() {
        assert!(Adjacency::from_edges(2, &[(0, 0)]).is_err());
        assert!(Adjacency::from_edges(2, &[(0, 5)]).is_err());
    }

    #[test]
    fn sagpool_ratio_one_keeps_and_gates_everything() {
        let mut rng = Rng::substream(8, "t");
        let mut store = ParamStore::new();
        let pool = SagPoolLayer::new(&mut store, "p", 2, 1.0, 0.2, &mut rng);
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let xs = vec![1.0, 2.0, -1.0, 0.5, 0.3, 0.3];
        let x = tape.constant(Tensor::matrix(3, 2, xs.clone()).unwrap());
        let state = GraphState { x, keys: keys(3), edges: vec![(0, 0), (1, 1), (2, 2), (0, 1), (1, 2)] };
        let out = pool.forward(&mut tape, &params, &state).unwrap();
        assert_eq!(out.kept, vec![0, 1, 2]);
        let got = tape.value(out.state.x).data();
        for i in 0..3 {
            for c in 0..2 {
                assert!((got[i * 2 + c] - xs[i * 2 + c] * out.scores[i].tanh()).abs() < 1e-15);
            }
        }
        assert_eq!(out.state.edges.len(), 5);
    }

    #[test]
    fn sagpool_keeps_three_of_five_and_induces_edges() {
        let mut rng = Rng::substream(9, "t");
        let mut store = ParamStore::new();
        let pool = SagPoolLayer::new(&mut store, "p", 2, 0.6, 0.2, &mut rng);
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let data: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = tape.constant(Tensor::matrix(5, 2, data).unwrap());
        let mut edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).collect();
        edges.extend([(0, 1), (1, 2), (2, 3), (3, 4)]);
        let out = pool.forward(&mut tape, &params, &GraphState { x, keys: keys(5), edges: edges.clone() }).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert_eq!(out.kept, top_k(&out.scores, &keys(5), 3));
        for &(a, b) in &out.state.edges {
            let (oa, ob) = (out.kept[a], out.kept[b]);
            assert!(edges.contains(&(oa.min(ob), oa.max(ob))));
        }
        // each kept node keeps its self-loop
        for i in 0..3 {
            assert!(out.state.edges.contains(&(i, i)));
        }
    }
}
