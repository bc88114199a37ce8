//! AdamW with decoupled weight decay.
//!
//! The step uses the folded bias correction
//! `θ -= lr·√(1-β₂ᵗ)/(1-β₁ᵗ) · m / (√v + ε)`, followed by the decoupled decay
//! `θ -= lr·wd·θ`. On the first step this moves a scalar by
//! `lr·g / (|g| + ε/√(1-β₂))`.

use super::TrainError;
use crate::encoder::{Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(template: &Params<T>) -> Self {
        let mut m = template.clone();
        m.zero_all();
        Self { v: m.clone(), m }
    }
}

/// One AdamW update of every tensor for which `trainable(name)` holds.
///
/// `step_index` counts from 1.
pub fn adamw_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamWState<T>,
    hyper: &AdamWHyper,
    step_index: u64,
    trainable: impl Fn(&str) -> bool,
) -> Result<(), TrainError> {
    if step_index == 0 {
        return Err(TrainError::Config("step_index counts from 1".into()));
    }
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grad_t = grads.tensors();
    let m_t = state.m.tensors_mut();
    let v_t = state.v.tensors_mut();
    let p_t = params.tensors_mut();
    if grad_t.len() != p_t.len() || m_t.len() != p_t.len() || v_t.len() != p_t.len() {
        return Err(TrainError::Shape("optimizer state does not match parameters".into()));
    }

    let t = step_index as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let step_size = T::from_f64(hyper.learning_rate * bc2.sqrt() / bc1);
    let decay = T::from_f64(hyper.learning_rate * hyper.weight_decay);
    let (b1, b2) = (T::from_f64(hyper.beta1), T::from_f64(hyper.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - hyper.beta1), T::from_f64(1.0 - hyper.beta2));
    let eps = T::from_f64(hyper.epsilon);

    for ((((name, p), g), m), v) in names.iter().zip(p_t).zip(grad_t).zip(m_t).zip(v_t) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(TrainError::Shape(format!(
                "{name}: parameter, gradient and state shapes differ"
            )));
        }
        if !trainable(name) {
            continue;
        }
        let (pd, gd) = (p.data_mut(), g.data());
        for (((pv, &gv), mv), vv) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            *pv = *pv - step_size * *mv / (vv.sqrt() + eps);
            *pv = *pv - decay * *pv;
        }
    }
    Ok(())
}

/// Linear warmup then linear decay to zero; `step` counts from 0.
pub fn linear_schedule(step: usize, total_steps: usize, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        return step as f64 / warmup_steps.max(1) as f64;
    }
    let remaining = total_steps.saturating_sub(step) as f64;
    let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    (remaining / span).max(0.0)
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64, trainable: impl Fn(&str) -> bool) -> f64 {
    let names: Vec<String> = grads.named().into_iter().map(|(n, _)| n).collect();
    let norm = grads
        .tensors()
        .iter()
        .zip(&names)
        .filter(|(_, n)| trainable(n))
        .map(|(t, _)| t.sum_squares())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = T::from_f64(max_norm / (norm + 1e-6));
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ModelConfig, Pooling, Tensor};

    fn scalar_model() -> ModelConfig {
        ModelConfig {
            num_layers: 0,
            hidden_dim: 1,
            num_heads: 1,
            ff_dim: 1,
            vocab_size: 1,
            max_positions: 2,
            dropout_rate: 0.0,
            pooling: Pooling::ClsToken,
            num_classes: 2,
        }
    }

    fn filled(cfg: &ModelConfig, v: f64) -> Params<f64> {
        let tensors = cfg
            .parameter_shapes()
            .iter()
            .map(|(_, s)| Tensor::filled(s, v))
            .collect();
        Params::from_ordered(cfg, tensors).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let cfg = scalar_model();
        let mut p = filled(&cfg, 0.37);
        let g = filled(&cfg, 0.0);
        let mut s = AdamWState::new(&p);
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        for step in 1..=5 {
            adamw_step(&mut p, &g, &mut s, &hyper, step, |_| true).unwrap();
        }
        assert_eq!(p, filled(&cfg, 0.37));
    }

    #[test]
    fn zero_gradient_decays_multiplicatively() {
        let cfg = scalar_model();
        let mut p = filled(&cfg, 2.0);
        let g = filled(&cfg, 0.0);
        let mut s = AdamWState::new(&p);
        adamw_step(&mut p, &g, &mut s, &AdamWHyper::default(), 1, |_| true).unwrap();
        for t in p.tensors() {
            for &v in t.data() {
                assert!((v - 2.0 * (1.0 - 5e-7)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = scalar_model();
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            learning_rate: 1e-3,
            ..Default::default()
        };
        for &g0 in &[0.5f64, -2.0, 1e-9, 3e-7] {
            let mut p = filled(&cfg, 1.0);
            let g = filled(&cfg, g0);
            let mut s = AdamWState::new(&p);
            adamw_step(&mut p, &g, &mut s, &hyper, 1, |_| true).unwrap();
            let expected = 1.0 - 1e-3 * g0 / (g0.abs() + 1e-8 / (1.0f64 - 0.999).sqrt());
            let got = p.classifier_b.data()[0];
            assert!((got - expected).abs() < 1e-15, "{g0}: {got} vs {expected}");
        }
    }

    #[test]
    fn frozen_tensors_are_untouched() {
        let cfg = scalar_model();
        let mut p = filled(&cfg, 1.0);
        let g = filled(&cfg, 0.3);
        let mut s = AdamWState::new(&p);
        adamw_step(&mut p, &g, &mut s, &AdamWHyper::default(), 1, |n| {
            n.starts_with("classifier")
        })
        .unwrap();
        assert_eq!(p.token_emb.data()[0], 1.0);
        assert!(p.classifier_w.data()[0] < 1.0);
    }

    #[test]
    fn schedule_decays_linearly_to_zero() {
        assert_eq!(linear_schedule(0, 10, 0), 1.0);
        assert!((linear_schedule(5, 10, 0) - 0.5).abs() < 1e-12);
        assert!((linear_schedule(9, 10, 0) - 0.1).abs() < 1e-12);
        assert_eq!(linear_schedule(10, 10, 0), 0.0);
        assert_eq!(linear_schedule(0, 10, 2), 0.0);
        assert_eq!(linear_schedule(1, 10, 2), 0.5);
        assert_eq!(linear_schedule(2, 10, 2), 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let cfg = scalar_model();
        let mut g = filled(&cfg, 3.0);
        let before = clip_grad_norm(&mut g, 1.0, |_| true);
        assert!(before > 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-5);
        let mut small = filled(&cfg, 1e-3);
        clip_grad_norm(&mut small, 1.0, |_| true);
        assert_eq!(small, filled(&cfg, 1e-3));
    }
}
