//! Downstream link sign prediction.
//!
//! Embeddings are scored by how well a plain logistic regression, fit on
//! concatenated endpoint embeddings of training edges, recovers the signs
//! of held-out edges. Each run draws its own 80/20 edge split, trains
//! embeddings on the train graph only, fits the classifier, and reports
//! accuracy-style F1 metrics plus a rank-based AUC; runs are averaged.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Edge, SignedDigraph};
use crate::model::encode_all;
use crate::numeric::Tensor;
use crate::trainer::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("feature matrix contains non-finite values")]
    NonFiniteInput,
    #[error("cannot fit a classifier on an empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// [z_i || z_j]: source embedding first, then destination.
pub fn edge_features(z_i: &[f64], z_j: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z_i.len() + z_j.len());
    out.extend_from_slice(z_i);
    out.extend_from_slice(z_j);
    out
}

/// Feature matrix and 0/1 labels for a list of edges.
pub fn edge_dataset(edges: &[Edge], z: &Tensor) -> (Tensor, Vec<f64>) {
    let d = z.cols();
    let mut x = Tensor::zeros(edges.len(), 2 * d);
    let mut y = Vec::with_capacity(edges.len());
    for (row, e) in edges.iter().enumerate() {
        for (j, v) in z.row(e.src).iter().enumerate() {
            x.set(row, j, *v);
        }
        for (j, v) in z.row(e.dst).iter().enumerate() {
            x.set(row, d + j, *v);
        }
        y.push(e.sign.label());
    }
    (x, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn predict_proba(&self, features: &[f64]) -> f64 {
        assert_eq!(features.len(), self.weights.len(), "feature width mismatch");
        let t: f64 = self
            .weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        1.0 / (1.0 + (-t).exp())
    }
}

/// ln(1 + e^-t) for y = 1 and ln(1 + e^t) for y = 0, evaluated stably.
fn bce_from_logit(t: f64, y: f64) -> f64 {
    t.max(0.0) - t * y + (-t.abs()).exp().ln_1p()
}

/// Fits w, b minimizing mean cross-entropy plus an L2 penalty on w of
/// reg/(2n)·‖w‖² (the bias is not penalized), matching the objective of
/// standard library classifiers at their default strength when reg = 1.
///
/// Solver: full-batch gradient descent with backtracking line search from a
/// doubling warm start; stops when the gradient norm falls below 1e-8 or
/// after 5,000 iterations. The objective is strictly convex, so the
/// minimizer is unique and the starting point is immaterial.
pub fn fit_logistic_regression(
    x: &Tensor,
    y: &[f64],
    reg: f64,
) -> Result<LogisticModel, EvalError> {
    let n = x.rows();
    let p = x.cols();
    assert_eq!(n, y.len(), "one label per row");
    if n == 0 {
        return Err(EvalError::EmptyTrainingSet);
    }
    if !x.all_finite() {
        return Err(EvalError::NonFiniteInput);
    }
    let inv_n = 1.0 / n as f64;

    let objective = |w: &[f64], b: f64, logits: &mut Vec<f64>| -> f64 {
        logits.clear();
        let mut loss = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let t: f64 = row.iter().zip(w).map(|(xj, wj)| xj * wj).sum::<f64>() + b;
            logits.push(t);
            loss += bce_from_logit(t, y[i]);
        }
        loss *= inv_n;
        loss + 0.5 * reg * inv_n * w.iter().map(|v| v * v).sum::<f64>()
    };

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut logits = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    let mut loss = objective(&w, b, &mut logits);
    let mut grad_w = vec![0.0; p];
    let mut step = 1.0;

    for _ in 0..5000 {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let residual = 1.0 / (1.0 + (-logits[i]).exp()) - y[i];
            for (g, xj) in grad_w.iter_mut().zip(x.row(i)) {
                *g += residual * xj;
            }
            grad_b += residual;
        }
        let mut grad_norm_sq = 0.0;
        for (g, wj) in grad_w.iter_mut().zip(&w) {
            *g = *g * inv_n + reg * inv_n * wj;
            grad_norm_sq += *g * *g;
        }
        grad_b *= inv_n;
        grad_norm_sq += grad_b * grad_b;
        if grad_norm_sq.sqrt() <= 1e-8 {
            break;
        }

        // Armijo backtracking, warm-started at twice the last accepted step.
        step *= 2.0;
        loop {
            let trial_w: Vec<f64> = w
                .iter()
                .zip(&grad_w)
                .map(|(wj, gj)| wj - step * gj)
                .collect();
            let trial_b = b - step * grad_b;
            let trial_loss = objective(&trial_w, trial_b, &mut scratch);
            if trial_loss <= loss - 1e-4 * step * grad_norm_sq {
                w = trial_w;
                b = trial_b;
                loss = trial_loss;
                std::mem::swap(&mut logits, &mut scratch);
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // No descent direction at machine precision; we are at the
                // optimum for all practical purposes.
                return Ok(LogisticModel { weights: w, bias: b });
            }
        }
    }
    Ok(LogisticModel { weights: w, bias: b })
}

/// Metrics of one evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunMetrics {
    /// Accuracy (equals micro-averaged F1 for a binary task).
    pub micro_f1: f64,
    /// F1 of the positive class.
    pub binary_f1: f64,
    /// Unweighted mean of positive-class and negative-class F1.
    pub macro_f1: f64,
    /// P(positive edge outscores negative edge), average-rank tie handling.
    pub auc: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // Class absent from labels and predictions alike.
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Scores are probabilities of the positive class; labels are 0/1.
/// Decisions use a 0.5 threshold. Single-class label sets have no defined
/// AUC; it is reported as NaN with a warning on standard error.
pub fn compute_metrics(scores: &[f64], labels: &[f64]) -> RunMetrics {
    assert!(!scores.is_empty(), "metrics need at least one example");
    assert_eq!(scores.len(), labels.len(), "one label per score");

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (s, y) in scores.iter().zip(labels) {
        let predicted_positive = *s >= 0.5;
        let actual_positive = *y == 1.0;
        match (predicted_positive, actual_positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len();
    let micro_f1 = (tp + tn) as f64 / n as f64;
    let binary_f1 = f1(tp, fp, fn_);
    let negative_f1 = f1(tn, fn_, fp);
    let macro_f1 = 0.5 * (binary_f1 + negative_f1);

    let positives = tp + fn_;
    let negatives = fp + tn;
    let auc = if positives == 0 || negatives == 0 {
        eprintln!("warning: AUC undefined for single-class labels; reporting NaN");
        f64::NAN
    } else {
        // Mann-Whitney U from average ranks.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut rank = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
                j += 1;
            }
            let average = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                rank[idx] = average;
            }
            i = j + 1;
        }
        let positive_rank_sum: f64 = labels
            .iter()
            .zip(&rank)
            .filter(|(y, _)| **y == 1.0)
            .map(|(_, r)| r)
            .sum();
        let u = positive_rank_sum - (positives * (positives + 1)) as f64 / 2.0;
        u / (positives as f64 * negatives as f64)
    };

    RunMetrics {
        micro_f1,
        binary_f1,
        macro_f1,
        auc,
    }
}

/// Where the evaluated embeddings come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Train the encoder on each split's train graph.
    Trained,
    /// Per-run uniform [0, 1) noise of the configured dimension; the
    /// no-structure baseline.
    Random,
}

impl std::str::FromStr for EmbeddingSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained" => Ok(EmbeddingSource::Trained),
            "random" => Ok(EmbeddingSource::Random),
            other => Err(format!("unknown embedding source {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Template for per-run training; its seeds are replaced by the run
    /// seed so every run differs in split, initialization and batching.
    pub train: TrainConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub train_ratio: f64,
    pub source: EmbeddingSource,
    /// L2 strength for the downstream classifier.
    pub reg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train: TrainConfig::default(),
            runs: 5,
            base_seed: 0,
            train_ratio: 0.8,
            source: EmbeddingSource::Trained,
            reg: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    pub mean: RunMetrics,
}

pub fn mean_metrics(runs: &[RunMetrics]) -> RunMetrics {
    assert!(!runs.is_empty(), "cannot average zero runs");
    let k = runs.len() as f64;
    RunMetrics {
        micro_f1: runs.iter().map(|r| r.micro_f1).sum::<f64>() / k,
        binary_f1: runs.iter().map(|r| r.binary_f1).sum::<f64>() / k,
        macro_f1: runs.iter().map(|r| r.macro_f1).sum::<f64>() / k,
        auc: runs.iter().map(|r| r.auc).sum::<f64>() / k,
    }
}

/// One full evaluation run for a given seed: split, embed, fit, score.
pub fn evaluate_split(
    g: &SignedDigraph,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<RunMetrics, EvalError> {
    let split = g.split_edges(cfg.train_ratio, seed);
    let g_train = g.with_edges(&split.train);

    let z = match cfg.source {
        EmbeddingSource::Trained => {
            let mut tc = cfg.train;
            tc.seed = seed;
            tc.model.seed = seed;
            let outcome = train(&g_train, &tc)?;
            encode_all(&g_train, &outcome.params, &tc.model)
        }
        EmbeddingSource::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::from_fn(g.node_count(), cfg.train.model.dim, |_, _| {
                rng.gen_range(0.0..1.0)
            })
        }
    };

    let (x_train, y_train) = edge_dataset(&split.train, &z);
    let classifier = fit_logistic_regression(&x_train, &y_train, cfg.reg)?;

    let (x_test, y_test) = edge_dataset(&split.test, &z);
    let scores: Vec<f64> = (0..x_test.rows())
        .map(|i| classifier.predict_proba(x_test.row(i)))
        .collect();
    Ok(compute_metrics(&scores, &y_test))
}

/// Runs `cfg.runs` independent splits with seeds base, base+1, ... and
/// averages their metrics.
pub fn run_experiment(g: &SignedDigraph, cfg: &EvalConfig) -> Result<MetricsReport, EvalError> {
    assert!(cfg.runs >= 1, "need at least one run");
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        runs.push(evaluate_split(g, cfg, cfg.base_seed + r as u64)?);
    }
    let mean = mean_metrics(&runs);
    Ok(MetricsReport { runs, mean })
}

/// `run,micro_f1,binary_f1,macro_f1,auc` rows plus a trailing mean row.
pub fn write_metrics_csv(mut out: impl Write, report: &MetricsReport) -> io::Result<()> {
    writeln!(out, "run,micro_f1,binary_f1,macro_f1,auc")?;
    for (i, r) in report.runs.iter().enumerate() {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            i, r.micro_f1, r.binary_f1, r.macro_f1, r.auc
        )?;
    }
    let m = &report.mean;
    writeln!(
        out,
        "mean,{:.6},{:.6},{:.6},{:.6}",
        m.micro_f1, m.binary_f1, m.macro_f1, m.auc
    )
}

/// Fixed-width human-readable table of the same numbers.
pub fn render_metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}\n",
        "run", "micro_f1", "binary_f1", "macro_f1", "auc"
    ));
    for (i, r) in report.runs.iter().enumerate() {
        out.push_str(&format!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            i, r.micro_f1, r.binary_f1, r.macro_f1, r.auc
        ));
    }
    let m = &report.mean;
    out.push_str(&format!(
        "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
        "mean", m.micro_f1, m.binary_f1, m.macro_f1, m.auc
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Sign;
    use crate::losses::LossWeights;
    use crate::model::ModelConfig;

    #[test]
    fn features_concatenate_source_then_destination() {
        assert_eq!(edge_features(&[1.0, 2.0], &[3.0, 4.0]), [1.0, 2.0, 3.0, 4.0]);
        assert_ne!(
            edge_features(&[1.0, 2.0], &[3.0, 4.0]),
            edge_features(&[3.0, 4.0], &[1.0, 2.0])
        );
        assert_eq!(edge_features(&[0.0; 7], &[0.0; 7]).len(), 14);
    }

    #[test]
    fn edge_dataset_reads_the_right_rows() {
        let z = Tensor::from_fn(3, 2, |i, j| (10 * i + j) as f64);
        let edges = [
            Edge {
                src: 2,
                dst: 0,
                sign: Sign::Negative,
            },
            Edge {
                src: 1,
                dst: 2,
                sign: Sign::Positive,
            },
        ];
        let (x, y) = edge_dataset(&edges, &z);
        assert_eq!(x.row(0), &[20.0, 21.0, 0.0, 1.0]);
        assert_eq!(x.row(1), &[10.0, 11.0, 20.0, 21.0]);
        assert_eq!(y, vec![0.0, 1.0]);
    }

    #[test]
    fn separable_points_are_classified_perfectly() {
        let x = Tensor::from_vec(2, 1, vec![-1.0, 1.0]);
        let y = vec![0.0, 1.0];
        let model = fit_logistic_regression(&x, &y, 1.0).unwrap();
        assert!(model.predict_proba(&[-1.0]) < 0.5);
        assert!(model.predict_proba(&[1.0]) >= 0.5);
    }

    #[test]
    fn all_positive_labels_push_every_probability_above_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = vec![1.0; 12];
        let model = fit_logistic_regression(&x, &y, 1.0).unwrap();
        for i in 0..12 {
            assert!(model.predict_proba(x.row(i)) > 0.5);
        }
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let mut x = Tensor::zeros(2, 2);
        x.set(1, 0, f64::INFINITY);
        assert!(matches!(
            fit_logistic_regression(&x, &[0.0, 1.0], 1.0),
            Err(EvalError::NonFiniteInput)
        ));
        assert!(matches!(
            fit_logistic_regression(&Tensor::zeros(0, 2), &[], 1.0),
            Err(EvalError::EmptyTrainingSet)
        ));
    }

    /// Newton's method with a dense Hessian solve; an algorithmically
    /// independent solver for the same strictly convex objective.
    fn newton_reference(x: &Tensor, y: &[f64], reg: f64, init: f64) -> f64 {
        let n = x.rows();
        let p = x.cols() + 1; // trailing coordinate is the bias
        let inv_n = 1.0 / n as f64;
        let mut w = vec![init; p];
        for _ in 0..200 {
            let mut grad = vec![0.0; p];
            let mut hess = vec![0.0; p * p];
            for i in 0..n {
                let row = x.row(i);
                let t: f64 =
                    row.iter().zip(&w).map(|(xj, wj)| xj * wj).sum::<f64>() + w[p - 1];
                let prob = 1.0 / (1.0 + (-t).exp());
                let residual = (prob - y[i]) * inv_n;
                let curvature = (prob * (1.0 - prob)).max(1e-12) * inv_n;
                let feature = |j: usize| if j == p - 1 { 1.0 } else { row[j] };
                for a in 0..p {
                    grad[a] += residual * feature(a);
                    for b in 0..p {
                        hess[a * p + b] += curvature * feature(a) * feature(b);
                    }
                }
            }
            for j in 0..p - 1 {
                grad[j] += reg * inv_n * w[j];
                hess[j * p + j] += reg * inv_n;
            }
            // Solve H step = grad by Gaussian elimination with pivoting.
            let mut a = hess.clone();
            let mut rhs = grad.clone();
            for col in 0..p {
                let pivot = (col..p)
                    .max_by(|&r1, &r2| a[r1 * p + col].abs().total_cmp(&a[r2 * p + col].abs()))
                    .unwrap();
                for j in 0..p {
                    a.swap(col * p + j, pivot * p + j);
                }
                rhs.swap(col, pivot);
                let diag = a[col * p + col];
                for r in 0..p {
                    if r != col && a[r * p + col] != 0.0 {
                        let factor = a[r * p + col] / diag;
                        for j in col..p {
                            a[r * p + j] -= factor * a[col * p + j];
                        }
                        rhs[r] -= factor * rhs[col];
                    }
                }
            }
            let mut max_step = 0.0f64;
            for j in 0..p {
                let s = rhs[j] / a[j * p + j];
                w[j] -= s;
                max_step = max_step.max(s.abs());
            }
            if max_step < 1e-12 {
                break;
            }
        }
        let mut loss = 0.0;
        for i in 0..n {
            let t: f64 =
                x.row(i).iter().zip(&w).map(|(xj, wj)| xj * wj).sum::<f64>() + w[p - 1];
            loss += bce_from_logit(t, y[i]);
        }
        loss * inv_n + 0.5 * reg * inv_n * w[..p - 1].iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn gradient_descent_reaches_the_newton_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::from_fn(50, 4, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..50).map(|_| if rng.gen_bool(0.6) { 1.0 } else { 0.0 }).collect();
        let model = fit_logistic_regression(&x, &y, 1.0).unwrap();

        let mut loss = 0.0;
        for i in 0..50 {
            let t: f64 = x
                .row(i)
                .iter()
                .zip(&model.weights)
                .map(|(xj, wj)| xj * wj)
                .sum::<f64>()
                + model.bias;
            loss += bce_from_logit(t, y[i]);
        }
        loss = loss / 50.0
            + 0.5 * 1.0 / 50.0 * model.weights.iter().map(|v| v * v).sum::<f64>();

        // Different algorithm, different (nonzero) initialization.
        let reference = newton_reference(&x, &y, 1.0, 0.35);
        assert!(
            (loss - reference).abs() < 1e-6,
            "descent loss {loss} vs newton loss {reference}"
        );
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let scores = [0.9, 0.8, 0.1, 0.2, 0.95];
        let labels = [1.0, 1.0, 0.0, 0.0, 1.0];
        let m = compute_metrics(&scores, &labels);
        assert_eq!(m.micro_f1, 1.0);
        assert_eq!(m.binary_f1, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.auc, 1.0);
    }

    #[test]
    fn constant_positive_predictor_matches_the_class_balance_arithmetic() {
        // Bitcoin-Alpha class balance: 22,650 positive, 1,536 negative.
        let positives = 22_650usize;
        let negatives = 1_536usize;
        let n = positives + negatives;
        let mut scores = vec![0.9; n];
        let mut labels = vec![1.0; positives];
        labels.extend(vec![0.0; negatives]);
        // Break score ties so AUC is exercised too (keep everything >= 0.5).
        scores[0] = 0.91;
        let m = compute_metrics(&scores, &labels);

        let expect_micro = positives as f64 / n as f64;
        let expect_binary = 2.0 * positives as f64 / (2.0 * positives as f64 + negatives as f64);
        assert!((m.micro_f1 - expect_micro).abs() < 1e-12);
        assert!((m.binary_f1 - expect_binary).abs() < 1e-12);
        assert_eq!(m.macro_f1, m.binary_f1 / 2.0);
        assert!((m.micro_f1 - 0.9367).abs() < 0.001);
        assert!((m.binary_f1 - 0.9673).abs() < 0.001);
        assert!((m.macro_f1 - 0.4837).abs() < 0.001);
    }

    #[test]
    fn tied_scores_give_even_odds_auc() {
        let scores = [0.7; 6];
        let labels = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let m = compute_metrics(&scores, &labels);
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn auc_survives_monotone_transforms_and_f1_survives_boundary_preserving_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..60).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let base = compute_metrics(&scores, &labels);

        // Strictly monotone transform: order-preserving, AUC unchanged.
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        let auc_only = compute_metrics(&warped, &labels);
        assert!((auc_only.auc - base.auc).abs() < 1e-12);

        // Monotone and fixing 0.5: every thresholded metric unchanged too.
        let boundary: Vec<f64> = scores.iter().map(|s| 0.5 + (s - 0.5).powi(3)).collect();
        let all = compute_metrics(&boundary, &labels);
        assert_eq!(all.micro_f1, base.micro_f1);
        assert_eq!(all.binary_f1, base.binary_f1);
        assert_eq!(all.macro_f1, base.macro_f1);
        assert!((all.auc - base.auc).abs() < 1e-12);
    }

    #[test]
    fn single_class_labels_produce_nan_auc() {
        let m = compute_metrics(&[0.9, 0.8, 0.7], &[1.0, 1.0, 1.0]);
        assert!(m.auc.is_nan());
        assert_eq!(m.micro_f1, 1.0);
    }

    fn tiny_graph() -> SignedDigraph {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 30;
        let mut records = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.gen_bool(0.25) {
                    let sign = if rng.gen_bool(0.75) {
                        Sign::Positive
                    } else {
                        Sign::Negative
                    };
                    records.push((s, d, sign));
                }
            }
        }
        SignedDigraph::from_edge_list(n, &records)
    }

    fn tiny_eval_config() -> EvalConfig {
        EvalConfig {
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                model: ModelConfig {
                    dim: 4,
                    layers: 1,
                    ..ModelConfig::default()
                },
                weights: LossWeights::default(),
                ..TrainConfig::default()
            },
            runs: 1,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn experiments_are_reproducible_and_seed_sensitive() {
        let g = tiny_graph();
        let cfg = tiny_eval_config();
        let a = run_experiment(&g, &cfg).unwrap();
        let b = run_experiment(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 1);
        assert_eq!(a.runs[0], a.mean);

        let moved = EvalConfig {
            base_seed: 17,
            ..cfg
        };
        let c = run_experiment(&g, &moved).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_embeddings_still_produce_valid_metrics() {
        let g = tiny_graph();
        let cfg = EvalConfig {
            source: EmbeddingSource::Random,
            runs: 2,
            ..tiny_eval_config()
        };
        let report = run_experiment(&g, &cfg).unwrap();
        for r in &report.runs {
            assert!((0.0..=1.0).contains(&r.micro_f1));
            assert!((0.0..=1.0).contains(&r.binary_f1));
            assert!((0.0..=1.0).contains(&r.macro_f1));
            assert!(r.auc.is_nan() || (0.0..=1.0).contains(&r.auc));
        }
    }

    #[test]
    fn metrics_files_have_the_documented_shape() {
        let report = MetricsReport {
            runs: vec![
                RunMetrics {
                    micro_f1: 0.9,
                    binary_f1: 0.95,
                    macro_f1: 0.7,
                    auc: 0.88,
                },
                RunMetrics {
                    micro_f1: 0.92,
                    binary_f1: 0.96,
                    macro_f1: 0.72,
                    auc: 0.9,
                },
            ],
            mean: RunMetrics {
                micro_f1: 0.91,
                binary_f1: 0.955,
                macro_f1: 0.71,
                auc: 0.89,
            },
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "run,micro_f1,binary_f1,macro_f1,auc");
        assert_eq!(lines[1], "0,0.900000,0.950000,0.700000,0.880000");
        assert_eq!(lines[3], "mean,0.910000,0.955000,0.710000,0.890000");
        assert_eq!(lines.len(), 4);

        let table = render_metrics_table(&report);
        assert!(table.starts_with("   run"));
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().last().unwrap().trim_start().starts_with("mean"));
    }
}
