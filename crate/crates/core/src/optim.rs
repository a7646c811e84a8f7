//! AdamW with decoupled weight decay and a warm-up / linear-decay schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            peak_lr: 1e-3,
            warmup_steps: 500,
            total_steps: 20_000,
        }
    }
}

/// Linear ramp from 0 to the peak over the warm-up, then linear decay to 0
/// at `total_steps`.
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    if step >= s.total_steps {
        return 0.0;
    }
    let span = (s.total_steps - s.warmup_steps) as f64;
    s.peak_lr * (s.total_steps - step) as f64 / span
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment estimates shaped like the parameters, and the number of
/// completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParamSet) -> Self {
        let shapes: Vec<usize> = params.iter().map(|(_, _, t)| t.len()).collect();
        OptimState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in params.values_and_grads_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One AdamW update with learning rate `lr`:
/// `w ← w − lr·λ·w − lr·m̂ / (√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(params: &mut ParamSet, state: &mut OptimState, lr: f64, cfg: &AdamWConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for ((value, grad), (m, v)) in params
        .values_and_grads_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * cfg.weight_decay * *w;
            *w -= lr * mhat / (math::sqrt(vhat) + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new(vec![1], vec![w]).unwrap()).unwrap();
        p
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule { peak_lr: 1e-3, warmup_steps: 100, total_steps: 1000 };
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(100, &s), 1e-3);
        assert_eq!(lr_at(1000, &s), 0.0);
        assert!((lr_at(50, &s) - 5e-4).abs() < 1e-18);
        assert!((lr_at(550, &s) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_grad_zero_decay_is_a_no_op() {
        let mut p = one_param(0.7);
        let mut st = OptimState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        adamw_step(&mut p, &mut st, 0.1, &cfg);
        assert_eq!(p.get(crate::tensor::ParamId(0)).data()[0], 0.7);
    }

    #[test]
    fn zero_grad_decays_by_lr_times_lambda() {
        let mut p = one_param(2.0);
        let mut st = OptimState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.05, ..AdamWConfig::default() };
        adamw_step(&mut p, &mut st, 0.1, &cfg);
        assert_eq!(p.get(crate::tensor::ParamId(0)).data()[0], 2.0 * (1.0 - 0.1 * 0.05));
    }

    #[test]
    fn single_step_hand_computed() {
        // w=1, g=1, lr=0.1, λ=0.01: m̂ = 1, v̂ = 1, so
        // w' = 1 − 0.1·0.01 − 0.1·1/(1 + 1e-8)
        let mut p = one_param(1.0);
        p.grad_mut(crate::tensor::ParamId(0))[0] = 1.0;
        let mut st = OptimState::new(&p);
        adamw_step(&mut p, &mut st, 0.1, &AdamWConfig::default());
        let want = 0.999 - 0.1 / (1.0 + 1e-8);
        assert!((p.get(crate::tensor::ParamId(0)).data()[0] - want).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut p = one_param(0.0);
        p.grad_mut(crate::tensor::ParamId(0))[0] = 12.0;
        assert_eq!(clip_grad_norm(&mut p, 5.0), 12.0);
        assert!((p.grad_norm() - 5.0).abs() < 1e-12);
    }
}
