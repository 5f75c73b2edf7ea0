use serde::{Deserialize, Serialize};

use super::Param;

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            adamw_step(p, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        }
    }
}

/// One update of a single parameter from its populated `grad`:
/// `value <- value - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * value`.
pub fn adamw_step(p: &mut Param, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) {
    p.step_count += 1;
    let bc1 = 1.0 - beta1.powi(p.step_count as i32);
    let bc2 = 1.0 - beta2.powi(p.step_count as i32);
    let value = p.value.data_mut();
    let grad = p.grad.data();
    let m = p.m.data_mut();
    let v = p.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + eps) + lr * weight_decay * value[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Tensor;

    fn scalar(x: f64) -> Param {
        Param::new(Tensor::new(&[1], vec![x]).unwrap())
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.5, 1e-3] {
            let mut p = scalar(1.0);
            p.grad.data_mut()[0] = g;
            adamw_step(&mut p, 0.01, 0.9, 0.999, 1e-8, 0.0);
            let delta = p.value.data()[0] - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-6, "{g}: {delta}");
            assert_eq!(p.step_count, 1);
        }
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = scalar(2.0);
        adamw_step(&mut p, 0.1, 0.9, 0.999, 1e-8, 0.5);
        assert!((p.value.data()[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert_eq!(p.m.data()[0], 0.0);
        assert_eq!(p.v.data()[0], 0.0);
    }

    #[test]
    fn minimizes_parabola() {
        let mut p = scalar(5.0);
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamW::default()
        };
        for _ in 0..500 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * x;
            opt.step([&mut p]);
        }
        assert!(p.value.data()[0].abs() < 1e-2, "{}", p.value.data()[0]);
    }

    #[test]
    fn no_decay_matches_plain_adam() {
        // Reference Adam written out independently.
        let mut p = scalar(1.5);
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = (x * 3.0).sin() + x;
            p.grad.data_mut()[0] = (p.value.data()[0] * 3.0).sin() + p.value.data()[0];
            adamw_step(&mut p, 0.05, 0.9, 0.999, 1e-8, 0.0);
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(p.value.data()[0], x);
        }
    }
}
