//! The training objective.
//!
//! Three terms are summed over a batch: binary cross-entropy on edge signs
//! reconstructed from embedding dot products, a squared-hinge penalty that
//! pushes status scores apart in the direction each edge dictates, and the
//! same cross-entropy applied once per directed edge per closed triangle it
//! appears in. The direction target is held constant during
//! backpropagation, which turns the min/max formulation into a plain hinge.
//!
//! Status is scored per role: one head reads a node as an edge source, a
//! second reads it as a target. The bulk of the edges in the trust graphs
//! are reciprocated, and a single shared score makes each mutual pair an
//! unsatisfiable tug of war whose optimum is the starting point; the split
//! heads keep both directions of a pair satisfiable, so the hinge actually
//! trains.

use std::collections::{BTreeMap, HashMap};

use crate::graph::{Edge, NodeId, Sign};
use crate::numeric::{Tape, ValueRef};
use crate::triads::Triad;

/// Probabilities are clamped here before the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Direction term weight.
    pub lambda1: f64,
    /// Triangle term weight.
    pub lambda2: f64,
    /// Status margin.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err("loss weights must be nonnegative".into());
        }
        if self.gamma <= 0.0 {
            return Err("margin must be positive".into());
        }
        Ok(())
    }
}

/// -y ln sigmoid(z_u . z_v) - (1-y) ln(1 - sigmoid(z_u . z_v)), logs clamped.
pub fn sign_loss(tape: &mut Tape, z_u: ValueRef, z_v: ValueRef, y: f64) -> ValueRef {
    debug_assert!(y == 0.0 || y == 1.0, "sign target must be 0 or 1");
    let logit = tape.dot(z_u, z_v);
    let p = tape.sigmoid(logit);
    let inside = if y == 1.0 {
        p
    } else {
        tape.affine(p, -1.0, 1.0)
    };
    let ln = tape.ln_clamped(inside, LOG_FLOOR);
    tape.affine(ln, -1.0, 0.0)
}

/// sigmoid(w . z + b); scalar in (0, 1).
pub fn status_score(
    tape: &mut Tape,
    status_weight: ValueRef,
    status_bias: ValueRef,
    z: ValueRef,
) -> ValueRef {
    let lin = tape.dot(status_weight, z);
    let shifted = tape.add(lin, status_bias);
    tape.sigmoid(shifted)
}

/// Squared hinge on precomputed status scores of an edge u -> v.
///
/// With delta = s_u - s_v, the target is min(delta, -gamma) for a positive
/// edge and max(delta, gamma) for a negative one; the target is read off as
/// a constant so no gradient flows through it. Satisfied margins therefore
/// contribute zero loss and zero gradient.
pub fn direction_loss_from_scores(
    tape: &mut Tape,
    s_u: ValueRef,
    s_v: ValueRef,
    sign: Sign,
    gamma: f64,
) -> ValueRef {
    let delta = tape.sub(s_u, s_v);
    let observed = tape.scalar(delta);
    let target = match sign {
        Sign::Positive => observed.min(-gamma),
        Sign::Negative => observed.max(gamma),
    };
    let miss = tape.affine(delta, 1.0, -target);
    tape.square(miss)
}

/// Squared hinge on raw embeddings; scores the source with the src head and
/// the target with the dst head.
#[allow(clippy::too_many_arguments)]
pub fn direction_loss(
    tape: &mut Tape,
    z_u: ValueRef,
    z_v: ValueRef,
    sign: Sign,
    status_src_weight: ValueRef,
    status_src_bias: ValueRef,
    status_dst_weight: ValueRef,
    status_dst_bias: ValueRef,
    gamma: f64,
) -> ValueRef {
    let s_u = status_score(tape, status_src_weight, status_src_bias, z_u);
    let s_v = status_score(tape, status_dst_weight, status_dst_bias, z_v);
    direction_loss_from_scores(tape, s_u, s_v, sign, gamma)
}

/// Sum over triangles of the per-edge sign losses of their three edges.
///
/// An edge appearing in k triangles must count k times, so the sum is
/// evaluated as one loss term per distinct directed edge scaled by its
/// multiplicity. Iteration order is fixed by the edge key, keeping the
/// floating-point result independent of triangle order.
pub fn triangle_loss(
    tape: &mut Tape,
    z: &HashMap<NodeId, ValueRef>,
    triangles: &[Triad],
) -> ValueRef {
    let mut tally: BTreeMap<(NodeId, NodeId), (Sign, u64)> = BTreeMap::new();
    for t in triangles {
        for e in &t.edges {
            let slot = tally.entry((e.src, e.dst)).or_insert((e.sign, 0));
            debug_assert_eq!(slot.0, e.sign, "one directed pair, two signs");
            slot.1 += 1;
        }
    }
    let mut terms = Vec::with_capacity(tally.len());
    for (&(u, v), &(sign, count)) in &tally {
        let term = sign_loss(tape, z[&u], z[&v], sign.label());
        terms.push(if count == 1 {
            term
        } else {
            tape.affine(term, count as f64, 0.0)
        });
    }
    tape.sum(&terms)
}

/// The three batch terms and their weighted total. `sign`, `direction` and
/// `triangle` are unweighted sums; `total` applies the lambda weights.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub sign: ValueRef,
    pub direction: ValueRef,
    pub triangle: ValueRef,
    pub total: ValueRef,
}

/// Builds the full objective for one batch of edges and triangles.
///
/// Terms whose weight is zero are skipped entirely (their field reports a
/// constant zero), so ablations pay nothing for the disabled objectives.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    status_src_weight: ValueRef,
    status_src_bias: ValueRef,
    status_dst_weight: ValueRef,
    status_dst_bias: ValueRef,
    weights: &LossWeights,
    z: &HashMap<NodeId, ValueRef>,
    edges: &[Edge],
    triangles: &[Triad],
) -> BatchLoss {
    let mut sign_terms = Vec::with_capacity(edges.len());
    for e in edges {
        sign_terms.push(sign_loss(tape, z[&e.src], z[&e.dst], e.sign.label()));
    }
    let sign = tape.sum(&sign_terms);

    let direction = if weights.lambda1 > 0.0 {
        // Each role's score is shared across all edges using the node in
        // that role.
        let mut src_scores: HashMap<NodeId, ValueRef> = HashMap::new();
        let mut dst_scores: HashMap<NodeId, ValueRef> = HashMap::new();
        let mut dir_terms = Vec::with_capacity(edges.len());
        for e in edges {
            let s_u = *src_scores.entry(e.src).or_insert_with(|| {
                status_score(tape, status_src_weight, status_src_bias, z[&e.src])
            });
            let s_v = *dst_scores.entry(e.dst).or_insert_with(|| {
                status_score(tape, status_dst_weight, status_dst_bias, z[&e.dst])
            });
            dir_terms.push(direction_loss_from_scores(tape, s_u, s_v, e.sign, weights.gamma));
        }
        tape.sum(&dir_terms)
    } else {
        tape.sum(&[])
    };

    let triangle = if weights.lambda2 > 0.0 {
        triangle_loss(tape, z, triangles)
    } else {
        tape.sum(&[])
    };

    let direction_scaled = tape.affine(direction, weights.lambda1, 0.0);
    let triangle_scaled = tape.affine(triangle, weights.lambda2, 0.0);
    let total = tape.sum(&[sign, direction_scaled, triangle_scaled]);
    BatchLoss {
        sign,
        direction,
        triangle,
        total,
    }
}
