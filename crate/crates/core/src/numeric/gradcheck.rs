//! Central-difference validation of analytic gradients.

use super::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Coordinates actually compared.
    pub samples: usize,
    /// (tensor index, flat coordinate) of the worst error.
    pub worst: Option<(usize, usize)>,
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// Perturbs up to `max_coords_per_tensor` coordinates of each tensor
/// (sampled without replacement with `seed` when a tensor is larger),
/// evaluates f at +-h, and restores the original value. The relative error
/// of a coordinate is |a - n| / max(|a|, |n|, 1e-8).
///
/// `params` is mutable for the perturbations but is returned to its original
/// values bit for bit.
pub fn finite_diff_check(
    f: &mut impl FnMut(&[Tensor]) -> f64,
    params: &mut [Tensor],
    analytic: &[Vec<f64>],
    h: f64,
    max_coords_per_tensor: usize,
    seed: u64,
) -> FiniteDiffReport {
    assert!(h > 0.0, "step size must be positive");
    assert_eq!(
        params.len(),
        analytic.len(),
        "one gradient buffer per tensor"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        samples: 0,
        worst: None,
    };

    for t in 0..params.len() {
        assert_eq!(
            params[t].len(),
            analytic[t].len(),
            "gradient layout mismatch on tensor {t}"
        );
        let len = params[t].len();
        let coords: Vec<usize> = if len <= max_coords_per_tensor {
            (0..len).collect()
        } else {
            // Floyd's sampling of distinct indices.
            let mut picked = std::collections::HashSet::new();
            for j in (len - max_coords_per_tensor)..len {
                let x = rng.gen_range(0..=j);
                if !picked.insert(x) {
                    picked.insert(j);
                }
            }
            picked.into_iter().collect()
        };

        for c in coords {
            let original = params[t].data()[c];
            params[t].data_mut()[c] = original + h;
            let up = f(params);
            params[t].data_mut()[c] = original - h;
            let down = f(params);
            params[t].data_mut()[c] = original;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.samples += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((t, c));
            }
        }
    }
    report
}
