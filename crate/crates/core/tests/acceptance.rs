//! Acceptance gate for the embedding pipeline. Every test prints one
//! `criterion N: PASS` (or `FAIL`) line, visible under `--nocapture`, and
//! asserts the same condition. Tolerances are pinned next to each check.
//!
//! The heavy link-sign-prediction experiments are shared through lazy
//! statics so each training configuration runs exactly once per suite
//! invocation. Expect the full suite to take on the order of twenty
//! minutes on one desktop core.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::LazyLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use sdgnn::eval::{run_experiment, EmbeddingSource, EvalConfig, MetricsReport};
use sdgnn::graph::{load_edge_list, EdgeListFormat, NodeId, Sign, SignedDigraph};
use sdgnn::losses::{total_loss, LossWeights};
use sdgnn::model::{
    attention_aggregate, attention_coefficients, encode, encode_all, mean_aggregate, Activation,
    Aggregator, ModelConfig, ParameterSet, StagedParams,
};
use sdgnn::numeric::{finite_diff_check, Tape, Tensor, ValueRef};
use sdgnn::trainer::{train, TrainConfig};
use sdgnn::triads::{census, training_triangle_set, Triad, TrianglePolicy};

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {}  [{detail}]",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion}: {detail}");
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

static ALPHA: LazyLock<SignedDigraph> =
    LazyLock::new(|| load_edge_list(data("bitcoin_alpha.csv"), EdgeListFormat::CsvRating).unwrap());

static OTC: LazyLock<SignedDigraph> =
    LazyLock::new(|| load_edge_list(data("bitcoin_otc.csv"), EdgeListFormat::CsvRating).unwrap());

/// Default experiment (d = 20, two layers, 100 epochs, five runs averaged,
/// seeds 0..5) with the aggregator and loss weights under test. Using one
/// base seed everywhere gives every configuration the same five splits.
fn experiment(aggregator: Aggregator, lambda1: f64, lambda2: f64) -> EvalConfig {
    let mut cfg = EvalConfig::default();
    cfg.train.model.aggregator = aggregator;
    cfg.train.weights.lambda1 = lambda1;
    cfg.train.weights.lambda2 = lambda2;
    cfg
}

static FULL_ATTENTION: LazyLock<MetricsReport> = LazyLock::new(|| {
    run_experiment(&ALPHA, &experiment(Aggregator::Attention, 1.0, 1.0)).unwrap()
});

static SIGN_ONLY: LazyLock<MetricsReport> = LazyLock::new(|| {
    run_experiment(&ALPHA, &experiment(Aggregator::Attention, 0.0, 0.0)).unwrap()
});

static MEAN_AGGREGATOR: LazyLock<MetricsReport> =
    LazyLock::new(|| run_experiment(&ALPHA, &experiment(Aggregator::Mean, 1.0, 1.0)).unwrap());

/// Random signed digraph with exactly `edge_count` distinct directed edges.
fn random_graph(nodes: usize, edge_count: usize, seed: u64) -> SignedDigraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(edge_count);
    while records.len() < edge_count {
        let src = rng.gen_range(0..nodes);
        let dst = rng.gen_range(0..nodes);
        if src == dst || !seen.insert((src, dst)) {
            continue;
        }
        let sign = if rng.gen_bool(0.75) {
            Sign::Positive
        } else {
            Sign::Negative
        };
        records.push((src, dst, sign));
    }
    SignedDigraph::from_edge_list(nodes, &records)
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let started = Instant::now();
    let g = random_graph(20, 60, 7);
    let cfg = ModelConfig {
        dim: 8,
        seed: 11,
        ..ModelConfig::default()
    };
    let weights = LossWeights::default();
    let triangles = training_triangle_set(&g, TrianglePolicy::Both);
    assert!(!triangles.is_empty(), "test graph must close some triangles");
    let targets: Vec<NodeId> = (0..g.node_count()).collect();

    let forward = |params: &ParameterSet, tape: &mut Tape| {
        let staged = StagedParams::stage(tape, params);
        let z = encode(tape, &g, &staged, &cfg, &targets);
        let batch = total_loss(
            tape,
            staged.status_src_weight,
            staged.status_src_bias,
            staged.status_dst_weight,
            staged.status_dst_bias,
            &weights,
            &z,
            g.edges(),
            &triangles,
        );
        (staged, batch)
    };

    // Check at a generic point drawn slightly wider than the training
    // initialization: at the init scale the attention softmax sits on a
    // near-uniform plateau whose gradients (~1e-6) fall below what central
    // differences on a loss of this magnitude can resolve in f64.
    let mut params = ParameterSet::init(&cfg, g.node_count());
    for tensor in params.tensors_mut() {
        for v in tensor.data_mut() {
            *v *= 1.5;
        }
    }
    let mut tape = Tape::new();
    let (staged, batch) = forward(&params, &mut tape);
    let grads = tape.backward(batch.total);
    let analytic: Vec<Vec<f64>> = staged
        .leaves()
        .iter()
        .map(|&leaf| grads.wrt(leaf).to_vec())
        .collect();

    let mut tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let mut scratch = params.clone();
    let mut f = |perturbed: &[Tensor]| {
        for (dst, src) in scratch.tensors_mut().into_iter().zip(perturbed) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let mut tape = Tape::new();
        let (_, batch) = forward(&scratch, &mut tape);
        tape.scalar(batch.total)
    };
    // Every coordinate of every tensor is compared.
    let check = finite_diff_check(&mut f, &mut tensors, &analytic, 1e-5, usize::MAX, 3);

    let elapsed = started.elapsed().as_secs_f64();
    let pass = check.max_rel_error < 1e-4 && elapsed < 60.0;
    report(
        1,
        pass,
        &format!(
            "max relative error {:.3e} over {} coordinates, {elapsed:.1}s",
            check.max_rel_error, check.samples
        ),
    );
}

/// Plain-f64 recomputation of the three loss terms, written directly from
/// their definitions and sharing no code with the tape implementation.
mod oracle {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn bce(p: f64, y: f64) -> f64 {
        -(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln())
    }

    fn edge_bce(z: &[Vec<f64>], src: NodeId, dst: NodeId, sign: Sign) -> f64 {
        let dot: f64 = z[src].iter().zip(&z[dst]).map(|(a, b)| a * b).sum();
        bce(sigmoid(dot), sign.label())
    }

    pub fn sign_term(z: &[Vec<f64>], g: &SignedDigraph) -> f64 {
        g.edges()
            .iter()
            .map(|e| edge_bce(z, e.src, e.dst, e.sign))
            .sum()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn direction_term(
        z: &[Vec<f64>],
        g: &SignedDigraph,
        sw_src: &[f64],
        sb_src: f64,
        sw_dst: &[f64],
        sb_dst: f64,
        gamma: f64,
    ) -> f64 {
        let score = |u: NodeId, w: &[f64], b: f64| {
            let lin: f64 = w.iter().zip(&z[u]).map(|(a, b)| a * b).sum();
            sigmoid(lin + b)
        };
        g.edges()
            .iter()
            .map(|e| {
                let delta = score(e.src, sw_src, sb_src) - score(e.dst, sw_dst, sb_dst);
                let miss = match e.sign {
                    Sign::Positive => (delta + gamma).max(0.0),
                    Sign::Negative => (gamma - delta).max(0.0),
                };
                miss * miss
            })
            .sum()
    }

    pub fn triangle_term(z: &[Vec<f64>], triangles: &[Triad]) -> f64 {
        triangles
            .iter()
            .flat_map(|t| t.edges.iter())
            .map(|e| edge_bce(z, e.src, e.dst, e.sign))
            .sum()
    }
}

#[test]
fn criterion_02_loss_matches_scalar_recomputation() {
    let dim = 4;
    let lambda_choices = [0.0, 0.5, 1.0, 2.0];
    let mut worst: f64 = 0.0;
    let mut graphs_with_triangles = 0;

    for i in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let nodes = rng.gen_range(3..=8);
        let mut records = Vec::new();
        for src in 0..nodes {
            for dst in 0..nodes {
                if src != dst && rng.gen_bool(0.35) {
                    let sign = if rng.gen_bool(0.75) {
                        Sign::Positive
                    } else {
                        Sign::Negative
                    };
                    records.push((src, dst, sign));
                }
            }
        }
        if records.is_empty() {
            records.push((0, 1, Sign::Positive));
        }
        let g = SignedDigraph::from_edge_list(nodes, &records);
        let triangles = training_triangle_set(&g, TrianglePolicy::Both);
        if !triangles.is_empty() {
            graphs_with_triangles += 1;
        }

        let z_values: Vec<Vec<f64>> = (0..nodes)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let sw_src: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sb_src: f64 = rng.gen_range(-1.0..1.0);
        let sw_dst: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sb_dst: f64 = rng.gen_range(-1.0..1.0);
        let weights = LossWeights {
            lambda1: lambda_choices[rng.gen_range(0..4)],
            lambda2: lambda_choices[rng.gen_range(0..4)],
            gamma: 0.5,
        };

        let mut tape = Tape::new();
        let z: HashMap<NodeId, ValueRef> = z_values
            .iter()
            .enumerate()
            .map(|(u, v)| (u, tape.leaf(&Tensor::column(v.clone()))))
            .collect();
        let src_weight = tape.leaf(&Tensor::column(sw_src.clone()));
        let src_bias = tape.leaf(&Tensor::from_vec(1, 1, vec![sb_src]));
        let dst_weight = tape.leaf(&Tensor::column(sw_dst.clone()));
        let dst_bias = tape.leaf(&Tensor::from_vec(1, 1, vec![sb_dst]));
        let batch = total_loss(
            &mut tape,
            src_weight,
            src_bias,
            dst_weight,
            dst_bias,
            &weights,
            &z,
            g.edges(),
            &triangles,
        );

        let want_sign = oracle::sign_term(&z_values, &g);
        let want_dir =
            oracle::direction_term(&z_values, &g, &sw_src, sb_src, &sw_dst, sb_dst, weights.gamma);
        let want_tri = oracle::triangle_term(&z_values, &triangles);
        let want_total = want_sign + weights.lambda1 * want_dir + weights.lambda2 * want_tri;

        worst = worst.max((tape.scalar(batch.total) - want_total).abs());
        worst = worst.max((tape.scalar(batch.sign) - want_sign).abs());
        // Disabled terms are reported as constant zero, so the unweighted
        // components are only comparable when their weight is live.
        if weights.lambda1 > 0.0 {
            worst = worst.max((tape.scalar(batch.direction) - want_dir).abs());
        }
        if weights.lambda2 > 0.0 {
            worst = worst.max((tape.scalar(batch.triangle) - want_tri).abs());
        }
    }

    assert!(
        graphs_with_triangles >= 3,
        "triangle coverage too thin to trust the comparison"
    );
    let pass = worst < 1e-10;
    report(
        2,
        pass,
        &format!("worst absolute deviation {worst:.3e} across 10 graphs"),
    );
}

#[test]
fn criterion_03_triad_census_matches_published_shares() {
    let started = Instant::now();
    let r = census(&ALPHA);
    let deviation = (r.both - 0.673)
        .abs()
        .max((r.only_balance - 0.208).abs())
        .max((r.only_status - 0.094).abs())
        .max((r.neither - 0.025).abs());
    let elapsed = started.elapsed().as_secs_f64();
    let pass = deviation <= 0.03 && elapsed < 60.0;
    report(
        3,
        pass,
        &format!(
            "shares ({:.3}, {:.3}, {:.3}, {:.3}), max deviation {deviation:.4}, {elapsed:.1}s",
            r.both, r.only_balance, r.only_status, r.neither
        ),
    );
}

#[test]
fn criterion_04_alpha_link_sign_prediction() {
    let started = Instant::now();
    let m = FULL_ATTENTION.mean;
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let pass = m.auc >= 0.87 && m.macro_f1 >= 0.70;
    report(
        4,
        pass,
        &format!(
            "AUC {:.4} (>= 0.87), Macro-F1 {:.4} (>= 0.70), {minutes:.1} min",
            m.auc, m.macro_f1
        ),
    );
}

#[test]
fn criterion_05_otc_link_sign_prediction() {
    let started = Instant::now();
    let result = run_experiment(&OTC, &experiment(Aggregator::Attention, 1.0, 1.0)).unwrap();
    let m = result.mean;
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let pass = m.auc >= 0.88 && m.macro_f1 >= 0.76;
    report(
        5,
        pass,
        &format!(
            "AUC {:.4} (>= 0.88), Macro-F1 {:.4} (>= 0.76), {minutes:.1} min",
            m.auc, m.macro_f1
        ),
    );
}

#[test]
fn criterion_06_random_embedding_baseline() {
    let mut cfg = experiment(Aggregator::Attention, 1.0, 1.0);
    cfg.source = EmbeddingSource::Random;
    let m = run_experiment(&ALPHA, &cfg).unwrap().mean;
    let pass = (m.macro_f1 - 0.484).abs() <= 0.03 && (m.auc - 0.615).abs() <= 0.05;
    report(
        6,
        pass,
        &format!(
            "Macro-F1 {:.4} (0.484 +- 0.03), AUC {:.4} (0.615 +- 0.05)",
            m.macro_f1, m.auc
        ),
    );
}

#[test]
fn criterion_07_auxiliary_losses_help() {
    let full = FULL_ATTENTION.mean.macro_f1;
    let sign_only = SIGN_ONLY.mean.macro_f1;
    let gap = full - sign_only;
    let pass = gap >= 0.03;
    report(
        7,
        pass,
        &format!("Macro-F1 full {full:.4} vs sign-only {sign_only:.4}, gap {gap:.4} (>= 0.03)"),
    );
}

#[test]
fn criterion_08_attention_at_least_matches_mean() {
    let attention = FULL_ATTENTION.mean.auc;
    let mean = MEAN_AGGREGATOR.mean.auc;
    let pass = attention >= mean - 0.005;
    report(
        8,
        pass,
        &format!("AUC attention {attention:.4} vs mean {mean:.4} (tie margin 0.005)"),
    );
}

#[test]
fn criterion_09_model_invariants() {
    let d = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut leaf = |tape: &mut Tape, rows: usize, cols: usize| {
        let t = Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        tape.leaf(&t)
    };

    // Attention coefficients form a distribution over the neighborhood.
    let mut coefficient_error: f64 = 0.0;
    for k in 1..=6 {
        let mut tape = Tape::new();
        let attention = leaf(&mut tape, 2 * d, 1);
        let weight = leaf(&mut tape, d, d);
        let center = leaf(&mut tape, d, 1);
        let neighbors: Vec<ValueRef> = (0..k).map(|_| leaf(&mut tape, d, 1)).collect();
        let alpha = attention_coefficients(&mut tape, attention, weight, 0.2, center, &neighbors);
        let sum: f64 = tape.value(alpha).iter().sum();
        coefficient_error = coefficient_error.max((sum - 1.0).abs());
        assert!(tape.value(alpha).iter().all(|a| *a >= 0.0));
    }

    // Shuffling the neighbor list must not move either aggregate.
    let mut permutation_error: f64 = 0.0;
    {
        let mut tape = Tape::new();
        let attention = leaf(&mut tape, 2 * d, 1);
        let weight = leaf(&mut tape, d, d);
        let center = leaf(&mut tape, d, 1);
        let neighbors: Vec<ValueRef> = (0..5).map(|_| leaf(&mut tape, d, 1)).collect();
        let mut shuffled = neighbors.clone();
        shuffled.swap(0, 4);
        shuffled.swap(1, 3);
        for (a, b) in [
            (
                mean_aggregate(&mut tape, weight, Activation::Tanh, center, &neighbors),
                mean_aggregate(&mut tape, weight, Activation::Tanh, center, &shuffled),
            ),
            (
                attention_aggregate(&mut tape, attention, weight, 0.2, d, center, &neighbors),
                attention_aggregate(&mut tape, attention, weight, 0.2, d, center, &shuffled),
            ),
        ] {
            let diff = tape
                .value(a)
                .iter()
                .zip(tape.value(b))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            permutation_error = permutation_error.max(diff);
        }
    }

    // Encoding a handful of targets must reproduce the full-graph rows.
    let g = random_graph(40, 160, 13);
    let cfg = ModelConfig {
        dim: 6,
        seed: 5,
        ..ModelConfig::default()
    };
    let params = ParameterSet::init(&cfg, g.node_count());
    let full = encode_all(&g, &params, &cfg);
    let mut batch_error: f64 = 0.0;
    for targets in [vec![0], vec![7, 31], vec![3, 12, 19, 26, 38]] {
        let mut tape = Tape::new();
        let staged = StagedParams::stage(&mut tape, &params);
        let z = encode(&mut tape, &g, &staged, &cfg, &targets);
        for &u in &targets {
            let diff = tape
                .value(z[&u])
                .iter()
                .zip(full.row(u))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            batch_error = batch_error.max(diff);
        }
    }

    // A node beyond L hops (either edge direction) cannot influence a
    // target's embedding; a node at exactly L hops generically does.
    let chain = SignedDigraph::from_edge_list(
        6,
        &[
            (0, 1, Sign::Positive),
            (1, 2, Sign::Negative),
            (2, 3, Sign::Positive),
            (3, 4, Sign::Negative),
            (4, 5, Sign::Positive),
        ],
    );
    let chain_params = ParameterSet::init(&cfg, 6);
    let base = encode_all(&chain, &chain_params, &cfg);
    let perturb = |node: usize| {
        let mut p = chain_params.clone();
        for j in 0..cfg.dim {
            let v = p.embeddings.get(node, j);
            p.embeddings.set(node, j, v + 0.731);
        }
        encode_all(&chain, &p, &cfg)
    };
    let far = perturb(3); // distance 3 from node 0 with L = 2
    let locality_holds = base.row(0) == far.row(0);
    let near = perturb(2); // distance 2: inside the receptive field
    let field_has_reach = base
        .row(0)
        .iter()
        .zip(near.row(0))
        .any(|(a, b)| (a - b).abs() > 1e-12);

    let pass = coefficient_error < 1e-12
        && permutation_error < 1e-12
        && batch_error < 1e-10
        && locality_holds
        && field_has_reach;
    report(
        9,
        pass,
        &format!(
            "coefficient sum error {coefficient_error:.2e}, permutation error \
             {permutation_error:.2e}, batch-vs-full error {batch_error:.2e}, locality {}",
            if locality_holds && field_has_reach {
                "exact"
            } else {
                "violated"
            }
        ),
    );
}

#[test]
fn criterion_10_lambda_sweep_stays_finite() {
    let started = Instant::now();
    let mut failures = Vec::new();
    for lambda1 in [0.0, 1.0, 5.0, 10.0] {
        for lambda2 in [0.0, 1.0, 5.0, 10.0] {
            let cfg = TrainConfig {
                epochs: 20,
                weights: LossWeights {
                    lambda1,
                    lambda2,
                    gamma: 0.5,
                },
                ..TrainConfig::default()
            };
            match train(&ALPHA, &cfg) {
                Ok(outcome) => {
                    let finite = outcome.trace.iter().all(|e| {
                        e.sign.is_finite()
                            && e.direction.is_finite()
                            && e.triangle.is_finite()
                            && e.total.is_finite()
                    }) && outcome.params.all_finite();
                    if !finite {
                        failures.push(format!("({lambda1}, {lambda2}): non-finite trace"));
                    }
                }
                Err(err) => failures.push(format!("({lambda1}, {lambda2}): {err}")),
            }
        }
    }
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let pass = failures.is_empty();
    report(
        10,
        pass,
        &format!(
            "16/16 cells finite over 20 epochs, {minutes:.1} min{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join("; "))
            }
        ),
    );
}
