//! Adam optimizer with bias correction, applied across a `ParamCollection`.

use super::ParamCollection;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over every parameter in the collection. Moment estimates
/// are bias-corrected by each tensor's own step count; gradients are zeroed
/// after the update so the next accumulation starts clean.
pub fn adam_step<C: ParamCollection + ?Sized>(params: &mut C, cfg: &AdamConfig) {
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = *cfg;
    params.for_each_param_mut(&mut |_, p| {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let n = p.value.numel();
        for idx in 0..n {
            let g = p.grad.data()[idx];
            let m = beta1 * p.adam_m.data()[idx] + (1.0 - beta1) * g;
            let v = beta2 * p.adam_v.data()[idx] + (1.0 - beta2) * g * g;
            p.adam_m.data_mut()[idx] = m;
            p.adam_v.data_mut()[idx] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data_mut()[idx] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        p.grad.fill(0.0);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamTensor, Tensor2D};

    fn single(value: f64, grad: f64) -> Vec<(String, ParamTensor)> {
        let mut p = ParamTensor::new(Tensor2D::from_flat(1, 1, vec![value]).unwrap());
        p.grad = Tensor2D::from_flat(1, 1, vec![grad]).unwrap();
        vec![("w".to_string(), p)]
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With bias correction, the very first step size is close to lr
        // regardless of gradient magnitude.
        let mut params = single(1.0, 10.0);
        adam_step(&mut params, &AdamConfig::default());
        let v = params[0].1.value.get(0, 0);
        let delta = 1.0 - v;
        assert!(delta > 0.0, "positive gradient must decrease the value");
        assert!((delta - 0.001).abs() < 1e-5, "step was {delta}");
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let mut params = single(0.75, 0.0);
        adam_step(&mut params, &AdamConfig::default());
        assert_eq!(params[0].1.value.get(0, 0), 0.75);
    }

    #[test]
    fn gradients_are_cleared_after_update() {
        let mut params = single(1.0, 3.0);
        adam_step(&mut params, &AdamConfig::default());
        assert_eq!(params[0].1.grad.get(0, 0), 0.0);
        assert_eq!(params[0].1.step_count, 1);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut params = single(0.5, 1.0);
            for step in 0..25 {
                // Deterministic synthetic gradient schedule.
                let g = (step as f64 * 0.37).sin();
                params[0].1.grad = Tensor2D::from_flat(1, 1, vec![g]).unwrap();
                adam_step(&mut params, &AdamConfig::default());
            }
            params[0].1.value.get(0, 0).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_simple_quadratic() {
        // Minimize (w - 3)^2 with analytic gradient 2(w - 3).
        let mut params = single(0.0, 0.0);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..2000 {
            let w = params[0].1.value.get(0, 0);
            params[0].1.grad = Tensor2D::from_flat(1, 1, vec![2.0 * (w - 3.0)]).unwrap();
            adam_step(&mut params, &cfg);
        }
        let w = params[0].1.value.get(0, 0);
        assert!((w - 3.0).abs() < 1e-2, "ended at {w}");
    }
}
