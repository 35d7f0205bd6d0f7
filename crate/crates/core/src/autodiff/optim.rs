use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::AutodiffError;

/// AdamW hyper-parameters and the linear-warmup schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 2e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, warmup_steps: 5000 }
    }
}

impl AdamWConfig {
    /// Learning rate applied at 1-based step `step`: linear ramp, then constant.
    pub fn lr_at(&self, step: u64) -> f32 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f32 / self.warmup_steps as f32
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments { first: vec![0.0; p.numel()], second: vec![0.0; p.numel()] })
            .collect();
        OptimizerState { config, step: 0, moments }
    }

    /// Learning rate the next call to [`adamw_step`] will use.
    pub fn next_lr(&self) -> f32 {
        self.config.lr_at(self.step + 1)
    }
}

/// One decoupled-weight-decay Adam update over all parameters.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adamw_step(
    params: &mut [Tensor],
    names: &[String],
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
) -> Result<f32, AutodiffError> {
    if params.len() != grads.len() || params.len() != state.moments.len() {
        return Err(AutodiffError::Arity { op: "adamw_step".into(), expected: params.len(), got: grads.len() });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("param{i}"));
        if p.numel() != g.len() || state.moments[i].first.len() != g.len() {
            return Err(AutodiffError::ShapeMismatch { op: "adamw_step", lhs: p.shape().to_vec(), rhs: vec![g.len()] });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient { param: name });
        }
    }
    state.step += 1;
    let cfg = &state.config;
    let t = state.step as i32;
    let lr = cfg.lr_at(state.step);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), mom) in params.iter_mut().zip(grads).zip(state.moments.iter_mut()) {
        let data = p.data_mut();
        for j in 0..g.len() {
            let m = cfg.beta1 * mom.first[j] + (1.0 - cfg.beta1) * g[j];
            let v = cfg.beta2 * mom.second[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            mom.first[j] = m;
            mom.second[j] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let decayed = data[j] - lr * cfg.weight_decay * data[j];
            data[j] = decayed - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(lr)
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let sq: f64 = grads.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum();
    let norm = sq.sqrt() as f32;
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
