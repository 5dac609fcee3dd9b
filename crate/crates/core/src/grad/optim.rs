use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GradError, Tensor};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Hyperparameters of the reference training recipe.
    pub fn reference() -> Self {
        Self {
            peak_lr: 0.0008,
            warmup_steps: 500,
            total_steps: 5000,
            betas: (0.9, 0.95),
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            batch: 8,
            seed: 0,
        }
    }

    /// Small-scale recipe used for per-candidate training during evolution.
    pub fn desk() -> Self {
        Self { peak_lr: 3e-3, warmup_steps: 30, total_steps: 300, batch: 4, ..Self::reference() }
    }

    pub fn validate(&self) -> Result<(), GradError> {
        let bad = |msg: &str| Err(GradError::Config(msg.to_string()));
        if self.total_steps > 0 && self.warmup_steps == 0 {
            return bad("warmup_steps must be positive");
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps must not exceed total_steps");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(self.peak_lr >= 0.0) || !self.peak_lr.is_finite() {
            return bad("peak_lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Linear warm-up from 0 to the peak, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let (w, n) = (config.warmup_steps, config.total_steps);
    if step < w {
        return config.peak_lr * step as f64 / w as f64;
    }
    if n <= w {
        return if step == w { config.peak_lr } else { 0.0 };
    }
    let progress = ((step - w) as f64 / (n - w) as f64).min(1.0);
    config.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Scales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = T::of(x.wide() * k);
            }
        }
    }
    norm
}

/// First and second moment estimates, kept in `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Whether decoupled weight decay applies to each parameter.
    pub decay: Vec<bool>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &[Tensor<T>], decay: Vec<bool>) -> Self {
        assert_eq!(params.len(), decay.len());
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            decay,
            t: 0,
        }
    }
}

/// One AdamW update at schedule position `step`. Gradients are clipped to
/// the configured global norm first; returns the pre-clip norm.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &mut [Tensor<T>],
    state: &mut AdamState,
    config: &TrainConfig,
    step: usize,
) -> Result<f64, GradError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GradError::Shape {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if p.shape() != g.shape() {
            return Err(GradError::Shape { op: "adam_step", left: p.shape().to_vec(), right: g.shape().to_vec() });
        }
    }
    let norm = clip_global_norm(grads, config.grad_clip_norm);
    let lr = lr_at(step, config);
    let (b1, b2) = config.betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    const EPS: f64 = 1e-8;
    for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let decay = if state.decay[i] { 1.0 - lr * config.weight_decay } else { 1.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (x, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.wide();
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            *x = T::of(x.wide() * decay - lr * update);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::reference();
        assert_eq!(lr_at(0, &c), 0.0);
        assert_eq!(lr_at(500, &c), 0.0008);
        assert!(lr_at(5000, &c).abs() < 1e-18);
        assert!((lr_at(250, &c) - 0.0004).abs() < 1e-15);
        assert!((lr_at(2750, &c) - 0.0004).abs() < 1e-12);
    }

    #[test]
    fn reference_defaults() {
        let c = TrainConfig::reference();
        assert_eq!(c.betas, (0.9, 0.95));
        assert_eq!(c.weight_decay, 0.1);
        assert_eq!(c.grad_clip_norm, 1.0);
        assert!(c.validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = vec![Tensor::<f64>::from_f64(&[1, 2], &[0.3, -1.2]).unwrap()];
        let mut g = vec![Tensor::<f64>::zeros(&[1, 2])];
        let mut s = AdamState::new(&p, vec![true]);
        let c = TrainConfig { weight_decay: 0.0, ..TrainConfig::reference() };
        adam_step(&mut p, &mut g, &mut s, &c, 600).unwrap();
        assert_eq!(p[0].data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_by_hand() {
        // After one step the bias-corrected moments are g and g², so the
        // update is lr·sign(g) (up to eps) on top of decay by (1 - lr·wd).
        let c = TrainConfig { peak_lr: 0.01, warmup_steps: 1, total_steps: 1000, ..TrainConfig::reference() };
        let mut p = vec![Tensor::<f64>::from_f64(&[1, 2], &[1.0, -2.0]).unwrap()];
        let mut g = vec![Tensor::<f64>::from_f64(&[1, 2], &[0.5, -0.1]).unwrap()];
        let mut s = AdamState::new(&p, vec![true]);
        adam_step(&mut p, &mut g, &mut s, &c, 1).unwrap();
        let expect0 = 1.0 * (1.0 - 0.01 * 0.1) - 0.01 * 0.5 / (0.5 + 1e-8);
        let expect1 = -2.0 * (1.0 - 0.01 * 0.1) + 0.01 * 0.1 / (0.1 + 1e-8);
        assert!((p[0].data()[0] - expect0).abs() < 1e-15);
        assert!((p[0].data()[1] - expect1).abs() < 1e-15);
        assert!((expect0 - 0.989).abs() < 1e-9);
    }

    #[test]
    fn clip_bound() {
        let mut g = vec![
            Tensor::<f32>::from_f64(&[2, 2], &[3.0, 4.0, 0.0, 12.0]).unwrap(),
            Tensor::<f32>::from_f64(&[1, 1], &[84.0]).unwrap(),
        ];
        let pre = clip_global_norm(&mut g, 1.0);
        assert!((pre - 85.0).abs() < 1e-9);
        let post: f64 = g.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        assert!(post <= 1.0 + 1e-6);
    }
}
