//! Adam with bias correction and two weight decay flavors.

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// false: decay is added to the gradient before the moment updates
    /// (classic L2 coupling). true: decay is applied directly to the
    /// parameters after the adaptive step.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Flat moment buffers, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Rebuilds state saved by [`AdamState::moments`].
    pub fn from_parts(m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: u64) -> AdamState {
        assert_eq!(m.len(), v.len(), "moment buffer count mismatch");
        for (a, b) in m.iter().zip(&v) {
            assert_eq!(a.len(), b.len(), "moment buffer length mismatch");
        }
        AdamState { m, v, step }
    }
}

/// One optimizer step over a flattened parameter list. `grads[i]` must have
/// the layout of `params[i]`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state mismatch");
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);

    for (i, param) in params.iter_mut().enumerate() {
        let g = grads[i];
        assert_eq!(g.len(), param.len(), "gradient length mismatch");
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = param.data_mut();
        for j in 0..data.len() {
            let grad = if cfg.decoupled {
                g[j]
            } else {
                g[j] + cfg.weight_decay * data[j]
            };
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let mut next = data[j] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if cfg.decoupled {
                next -= cfg.lr * cfg.weight_decay * data[j];
            }
            data[j] = next;
        }
    }
}
