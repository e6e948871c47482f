//! Synthetic inputs shared by the benchmarks.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sdgnn::graph::{NodeId, Sign, SignedDigraph};

/// Random signed digraph: each node draws `out_degree` distinct targets,
/// 85% of edges positive, no self-loops. Dense enough that the triad
/// census and the encoder both have real work to do.
pub fn synthetic_graph(n: usize, out_degree: usize, seed: u64) -> SignedDigraph {
    assert!(n > out_degree, "need more nodes than edges per node");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<(NodeId, NodeId, Sign)> = Vec::with_capacity(n * out_degree);
    for src in 0..n {
        let mut picked = Vec::with_capacity(out_degree);
        while picked.len() < out_degree {
            let dst = rng.gen_range(0..n);
            if dst != src && !picked.contains(&dst) {
                picked.push(dst);
            }
        }
        for dst in picked {
            let sign = if rng.gen_bool(0.85) {
                Sign::Positive
            } else {
                Sign::Negative
            };
            records.push((src, dst, sign));
        }
    }
    SignedDigraph::from_edge_list(n, &records)
}
