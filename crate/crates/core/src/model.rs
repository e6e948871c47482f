//! The signed directed graph encoder.
//!
//! Layer l+1 embeddings are built per node from five pieces: the node's own
//! layer-l embedding plus one aggregated message per signed directed
//! relation. The four messages and the self embedding are concatenated to a
//! 5d vector and passed through a two-layer MLP. Aggregation is either a
//! mean over the relation neighborhood (including the node itself) followed
//! by a linear map and activation, or a single-head softmax attention over
//! transformed neighbor embeddings.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, Relation, SignedDigraph};
use crate::numeric::{Tape, Tensor, ValueRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    Attention,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Attention => "attention",
        })
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "attention" => Ok(Aggregator::Attention),
            other => Err(format!("unknown aggregator {other:?}")),
        }
    }
}

/// Activation applied inside the mean aggregator and the combiner MLP.
/// Identity exists for diagnostics and hand-computed tests; the CLI only
/// exposes tanh and relu.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: ValueRef) -> ValueRef {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.leaky_relu(x, 0.0),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding width d.
    pub dim: usize,
    /// Encoder depth L.
    pub layers: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    /// Negative-side slope of the attention logit nonlinearity.
    pub leaky_slope: f64,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 20,
            layers: 2,
            aggregator: Aggregator::Attention,
            activation: Activation::Tanh,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("embedding dimension must be at least 1".into());
        }
        if self.layers == 0 {
            return Err("layer count must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-layer weights: one d x d map per relation, optional attention
/// vectors, and the 5d -> d -> d combiner.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub relation_weights: [Tensor; 4],
    /// (2d, 1) vector per relation; attention mode only.
    pub attention: Option<[Tensor; 4]>,
    pub combine_w1: Tensor,
    pub combine_b1: Tensor,
    pub combine_w2: Tensor,
    pub combine_b2: Tensor,
}

/// Everything the optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    /// (|V|, d) learnable id embeddings; row u is node u's layer-0 state.
    pub embeddings: Tensor,
    pub layers: Vec<LayerParams>,
    /// (d, 1) status projection scoring a node as an edge source.
    pub status_src_weight: Tensor,
    /// (1, 1) offset of the source-role score.
    pub status_src_bias: Tensor,
    /// (d, 1) status projection scoring a node as an edge target.
    pub status_dst_weight: Tensor,
    /// (1, 1) offset of the target-role score.
    pub status_dst_bias: Tensor,
}

impl ParameterSet {
    /// Weights drawn uniformly from [-sqrt(1/d), sqrt(1/d)), biases zero.
    /// The same config and node count always produce identical values.
    pub fn init(cfg: &ModelConfig, node_count: usize) -> ParameterSet {
        cfg.validate().expect("invalid model config");
        let d = cfg.dim;
        let bound = (1.0 / d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut uniform = |rows: usize, cols: usize| Tensor::uniform(rows, cols, bound, &mut rng);

        let embeddings = uniform(node_count, d);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let relation_weights = std::array::from_fn(|_| uniform(d, d));
            let attention = match cfg.aggregator {
                Aggregator::Attention => Some(std::array::from_fn(|_| uniform(2 * d, 1))),
                Aggregator::Mean => None,
            };
            layers.push(LayerParams {
                relation_weights,
                attention,
                combine_w1: uniform(d, 5 * d),
                combine_b1: Tensor::zeros(d, 1),
                combine_w2: uniform(d, d),
                combine_b2: Tensor::zeros(d, 1),
            });
        }
        ParameterSet {
            embeddings,
            layers,
            status_src_weight: uniform(d, 1),
            status_src_bias: Tensor::zeros(1, 1),
            status_dst_weight: uniform(d, 1),
            status_dst_bias: Tensor::zeros(1, 1),
        }
    }

    pub fn node_count(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Flattened view in a stable order (matched by [`tensors_mut`] and
    /// [`tensor_names`]); the optimizer and checkpoints rely on it.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![&self.embeddings];
        for layer in &self.layers {
            out.extend(layer.relation_weights.iter());
            if let Some(a) = &layer.attention {
                out.extend(a.iter());
            }
            out.push(&layer.combine_w1);
            out.push(&layer.combine_b1);
            out.push(&layer.combine_w2);
            out.push(&layer.combine_b2);
        }
        out.push(&self.status_src_weight);
        out.push(&self.status_src_bias);
        out.push(&self.status_dst_weight);
        out.push(&self.status_dst_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embeddings];
        for layer in &mut self.layers {
            out.extend(layer.relation_weights.iter_mut());
            if let Some(a) = &mut layer.attention {
                out.extend(a.iter_mut());
            }
            out.push(&mut layer.combine_w1);
            out.push(&mut layer.combine_b1);
            out.push(&mut layer.combine_w2);
            out.push(&mut layer.combine_b2);
        }
        out.push(&mut self.status_src_weight);
        out.push(&mut self.status_src_bias);
        out.push(&mut self.status_dst_weight);
        out.push(&mut self.status_dst_bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embeddings".to_string()];
        for (l, layer) in self.layers.iter().enumerate() {
            for r in 0..4 {
                out.push(format!("layer{l}.relation{r}.weight"));
            }
            if layer.attention.is_some() {
                for r in 0..4 {
                    out.push(format!("layer{l}.relation{r}.attention"));
                }
            }
            out.push(format!("layer{l}.combine.w1"));
            out.push(format!("layer{l}.combine.b1"));
            out.push(format!("layer{l}.combine.w2"));
            out.push(format!("layer{l}.combine.b2"));
        }
        out.push("status.src.weight".to_string());
        out.push("status.src.bias".to_string());
        out.push("status.dst.weight".to_string());
        out.push("status.dst.bias".to_string());
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Attention vector staged on a tape, with its two halves pre-sliced: the
/// logit a . [W z_u || W z_v] is evaluated as left . (W z_u) + right . (W z_v)
/// so per-node dot products can be shared across edges.
#[derive(Clone, Copy, Debug)]
pub struct StagedAttention {
    pub full: ValueRef,
    pub left: ValueRef,
    pub right: ValueRef,
}

#[derive(Clone, Debug)]
pub struct StagedLayer {
    pub relation_weights: [ValueRef; 4],
    pub attention: Option<[StagedAttention; 4]>,
    pub combine_w1: ValueRef,
    pub combine_b1: ValueRef,
    pub combine_w2: ValueRef,
    pub combine_b2: ValueRef,
}

/// Parameter leaves recorded on a tape, in [`ParameterSet::tensors`] order.
#[derive(Clone, Debug)]
pub struct StagedParams {
    pub embeddings: ValueRef,
    pub layers: Vec<StagedLayer>,
    pub status_src_weight: ValueRef,
    pub status_src_bias: ValueRef,
    pub status_dst_weight: ValueRef,
    pub status_dst_bias: ValueRef,
    leaves: Vec<ValueRef>,
}

impl StagedParams {
    pub fn stage(tape: &mut Tape, params: &ParameterSet) -> StagedParams {
        let d = params.dim();
        let mut leaves = Vec::new();
        let embeddings = tape.leaf(&params.embeddings);
        leaves.push(embeddings);
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            let relation_weights = std::array::from_fn(|r| {
                let w = tape.leaf(&layer.relation_weights[r]);
                leaves.push(w);
                w
            });
            let attention = layer.attention.as_ref().map(|vectors| {
                std::array::from_fn(|r| {
                    let full = tape.leaf(&vectors[r]);
                    leaves.push(full);
                    StagedAttention {
                        full,
                        left: tape.slice(full, 0, d),
                        right: tape.slice(full, d, d),
                    }
                })
            });
            let combine_w1 = tape.leaf(&layer.combine_w1);
            let combine_b1 = tape.leaf(&layer.combine_b1);
            let combine_w2 = tape.leaf(&layer.combine_w2);
            let combine_b2 = tape.leaf(&layer.combine_b2);
            leaves.extend([combine_w1, combine_b1, combine_w2, combine_b2]);
            layers.push(StagedLayer {
                relation_weights,
                attention,
                combine_w1,
                combine_b1,
                combine_w2,
                combine_b2,
            });
        }
        let status_src_weight = tape.leaf(&params.status_src_weight);
        let status_src_bias = tape.leaf(&params.status_src_bias);
        let status_dst_weight = tape.leaf(&params.status_dst_weight);
        let status_dst_bias = tape.leaf(&params.status_dst_bias);
        leaves.push(status_src_weight);
        leaves.push(status_src_bias);
        leaves.push(status_dst_weight);
        leaves.push(status_dst_bias);
        StagedParams {
            embeddings,
            layers,
            status_src_weight,
            status_src_bias,
            status_dst_weight,
            status_dst_bias,
            leaves,
        }
    }

    /// Leaf refs aligned with [`ParameterSet::tensors`].
    pub fn leaves(&self) -> &[ValueRef] {
        &self.leaves
    }
}

/// Mean-mode message: activation(W . mean({center} U neighbors)).
pub fn mean_aggregate(
    tape: &mut Tape,
    weight: ValueRef,
    activation: Activation,
    center: ValueRef,
    neighbors: &[ValueRef],
) -> ValueRef {
    let mut members = Vec::with_capacity(neighbors.len() + 1);
    members.push(center);
    members.extend_from_slice(neighbors);
    let mean = tape.mean_rows(&members);
    let mapped = tape.matmul(weight, mean);
    activation.apply(tape, mapped)
}

/// Softmax attention weights of `center` over its neighbors.
pub fn attention_coefficients(
    tape: &mut Tape,
    attention: ValueRef,
    weight: ValueRef,
    leaky_slope: f64,
    center: ValueRef,
    neighbors: &[ValueRef],
) -> ValueRef {
    assert!(!neighbors.is_empty(), "attention over an empty neighborhood");
    let (two_d, _) = tape.shape(attention);
    let d = two_d / 2;
    let left = tape.slice(attention, 0, d);
    let right = tape.slice(attention, d, d);
    let t_center = tape.matmul(weight, center);
    let c_left = tape.dot(left, t_center);
    let mut logits = Vec::with_capacity(neighbors.len());
    for &v in neighbors {
        let t_v = tape.matmul(weight, v);
        let c_right = tape.dot(right, t_v);
        logits.push(tape.add(c_left, c_right));
    }
    let stacked = tape.concat(&logits);
    let bent = tape.leaky_relu(stacked, leaky_slope);
    tape.softmax(bent)
}

/// Attention-mode message: sum_v alpha_v . W z_v, or zeros when the
/// neighborhood is empty.
pub fn attention_aggregate(
    tape: &mut Tape,
    attention: ValueRef,
    weight: ValueRef,
    leaky_slope: f64,
    dim: usize,
    center: ValueRef,
    neighbors: &[ValueRef],
) -> ValueRef {
    if neighbors.is_empty() {
        return tape.zeros(dim);
    }
    let alpha = attention_coefficients(tape, attention, weight, leaky_slope, center, neighbors);
    let transformed: Vec<ValueRef> = neighbors.iter().map(|&v| tape.matmul(weight, v)).collect();
    tape.weighted_sum(alpha, &transformed)
}

/// Concatenates the self embedding with the four relation messages and runs
/// the 5d -> d -> d combiner.
pub fn combine(
    tape: &mut Tape,
    layer: &StagedLayer,
    activation: Activation,
    center: ValueRef,
    messages: &[ValueRef; 4],
) -> ValueRef {
    let cat = tape.concat(&[center, messages[0], messages[1], messages[2], messages[3]]);
    let pre = tape.matmul(layer.combine_w1, cat);
    let pre_b = tape.add(pre, layer.combine_b1);
    let hidden = activation.apply(tape, pre_b);
    let out = tape.matmul(layer.combine_w2, hidden);
    tape.add(out, layer.combine_b2)
}

/// Layer-L embeddings for `targets`, computed on `tape`.
///
/// Expands the L-hop receptive field of the targets, then walks the layers
/// bottom-up so each node's message pass sees the previous layer only. The
/// result maps each target to its final embedding node.
pub fn encode(
    tape: &mut Tape,
    g: &SignedDigraph,
    staged: &StagedParams,
    cfg: &ModelConfig,
    targets: &[NodeId],
) -> HashMap<NodeId, ValueRef> {
    let n = g.node_count();
    let depth = cfg.layers;
    for &u in targets {
        assert!(u < n, "target {u} out of range");
    }

    // needed[l] = nodes whose layer-l embedding must exist; needed[depth] is
    // the target set and each level below adds the 1-hop neighborhoods.
    let mut needed: Vec<Vec<NodeId>> = vec![Vec::new(); depth + 1];
    let mut mark = vec![false; n];
    let mut level: Vec<NodeId> = Vec::new();
    for &u in targets {
        if !mark[u] {
            mark[u] = true;
            level.push(u);
        }
    }
    level.sort_unstable();
    needed[depth] = level;
    for l in (0..depth).rev() {
        mark.fill(false);
        let mut next: Vec<NodeId> = Vec::new();
        for &u in &needed[l + 1] {
            if !mark[u] {
                mark[u] = true;
                next.push(u);
            }
            for r in Relation::ALL {
                for &v in g.relation_neighbors(u, r) {
                    if !mark[v] {
                        mark[v] = true;
                        next.push(v);
                    }
                }
            }
        }
        next.sort_unstable();
        needed[l] = next;
    }

    // Layer 0: rows of the embedding table.
    let mut prev: Vec<Option<ValueRef>> = vec![None; n];
    for &u in &needed[0] {
        prev[u] = Some(tape.row(staged.embeddings, u));
    }

    let mut scratch_neighbors: Vec<ValueRef> = Vec::new();
    let mut scratch_logits: Vec<ValueRef> = Vec::new();
    for l in 0..depth {
        let layer = staged.layers[l].clone();
        let mut cur: Vec<Option<ValueRef>> = vec![None; n];
        match cfg.aggregator {
            Aggregator::Mean => {
                for &u in &needed[l + 1] {
                    let center = prev[u].expect("missing lower-layer embedding");
                    let mut messages = [center; 4];
                    for r in Relation::ALL {
                        scratch_neighbors.clear();
                        for &v in g.relation_neighbors(u, r) {
                            scratch_neighbors
                                .push(prev[v].expect("missing lower-layer embedding"));
                        }
                        messages[r.index()] = mean_aggregate(
                            tape,
                            layer.relation_weights[r.index()],
                            cfg.activation,
                            center,
                            &scratch_neighbors,
                        );
                    }
                    cur[u] = Some(combine(tape, &layer, cfg.activation, center, &messages));
                }
            }
            Aggregator::Attention => {
                // Per relation, cache W z_v and the two halves of the logit
                // for every node this layer touches.
                let attn = layer.attention.as_ref().expect("attention parameters");
                let mut messages: Vec<[ValueRef; 4]> = Vec::with_capacity(needed[l + 1].len());
                for r in Relation::ALL {
                    let ri = r.index();
                    let weight = layer.relation_weights[ri];
                    let mut transformed: Vec<Option<ValueRef>> = vec![None; n];
                    let mut center_term: Vec<Option<ValueRef>> = vec![None; n];
                    let mut neighbor_term: Vec<Option<ValueRef>> = vec![None; n];
                    let transform = |tape: &mut Tape, v: NodeId,
                                     transformed: &mut Vec<Option<ValueRef>>| {
                        if transformed[v].is_none() {
                            let z = prev[v].expect("missing lower-layer embedding");
                            transformed[v] = Some(tape.matmul(weight, z));
                        }
                        transformed[v].unwrap()
                    };
                    for (idx, &u) in needed[l + 1].iter().enumerate() {
                        if r.index() == 0 {
                            messages.push([staged.embeddings; 4]); // placeholder
                            debug_assert_eq!(messages.len(), idx + 1);
                        }
                        let hood = g.relation_neighbors(u, r);
                        if hood.is_empty() {
                            messages[idx][ri] = tape.zeros(cfg.dim);
                            continue;
                        }
                        let t_u = transform(tape, u, &mut transformed);
                        if center_term[u].is_none() {
                            center_term[u] = Some(tape.dot(attn[ri].left, t_u));
                        }
                        let c_left = center_term[u].unwrap();
                        scratch_logits.clear();
                        scratch_neighbors.clear();
                        for &v in hood {
                            let t_v = transform(tape, v, &mut transformed);
                            if neighbor_term[v].is_none() {
                                neighbor_term[v] = Some(tape.dot(attn[ri].right, t_v));
                            }
                            let c_right = neighbor_term[v].unwrap();
                            scratch_logits.push(tape.add(c_left, c_right));
                            scratch_neighbors.push(t_v);
                        }
                        let stacked = tape.concat(&scratch_logits);
                        let bent = tape.leaky_relu(stacked, cfg.leaky_slope);
                        let alpha = tape.softmax(bent);
                        messages[idx][ri] = tape.weighted_sum(alpha, &scratch_neighbors);
                    }
                }
                for (idx, &u) in needed[l + 1].iter().enumerate() {
                    let center = prev[u].expect("missing lower-layer embedding");
                    cur[u] = Some(combine(
                        tape,
                        &layer,
                        cfg.activation,
                        center,
                        &messages[idx],
                    ));
                }
            }
        }
        prev = cur;
    }

    targets
        .iter()
        .map(|&u| (u, prev[u].expect("target not encoded")))
        .collect()
}

/// Final-layer embeddings for every node, as a (|V|, d) tensor.
pub fn encode_all(g: &SignedDigraph, params: &ParameterSet, cfg: &ModelConfig) -> Tensor {
    let n = g.node_count();
    let targets: Vec<NodeId> = (0..n).collect();
    let mut tape = Tape::new();
    let staged = StagedParams::stage(&mut tape, params);
    let map = encode(&mut tape, g, &staged, cfg, &targets);
    let d = cfg.dim;
    let mut out = Tensor::zeros(n, d);
    for u in 0..n {
        let z = tape.value(map[&u]);
        for j in 0..d {
            out.set(u, j, z[j]);
        }
    }
    out
}
