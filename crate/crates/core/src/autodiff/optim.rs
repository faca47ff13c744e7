use std::collections::BTreeMap;

use super::tape::{MathError, Param};

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adaptive-moment gradient optimizer.
///
/// Moment slots are keyed by parameter name and created on first update, so
/// one instance can drive a whole stage. `begin_step` advances the shared
/// step counter once per optimization step; `update` applies the rule to one
/// parameter.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    slots: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, param: &mut Param, grad: &[f64]) -> Result<(), MathError> {
        assert!(self.step > 0, "call begin_step before update");
        assert_eq!(grad.len(), param.data.len(), "gradient/parameter size mismatch");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(MathError::NonFiniteGradient {
                param: param.name.clone(),
            });
        }
        let slot = self
            .slots
            .entry(param.name.clone())
            .or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
        assert_eq!(slot.m.len(), grad.len(), "moment shape drifted for {}", param.name);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..grad.len() {
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * grad[i];
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            param.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Scales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the pre-clip norm. `max_norm <= 0` disables clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Param::new("w", (2, 2), vec![1.0, -2.0, 3.0, 4.0]);
        let before = p.data.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.begin_step();
            adam.update(&mut p, &[0.0; 4]).unwrap();
        }
        let max_delta = p
            .data
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_delta < 1e-8, "max delta {max_delta}");
    }

    #[test]
    fn quadratic_loss_strictly_decreases() {
        // loss = 0.5 * ||w||^2, gradient = w
        let mut p = Param::new("w", (1, 4), vec![2.0, -3.0, 1.5, 0.5]);
        let mut adam = Adam::new(0.05);
        let loss_of = |data: &[f64]| 0.5 * data.iter().map(|x| x * x).sum::<f64>();
        let mut prev = loss_of(&p.data);
        for _ in 0..100 {
            let grad = p.data.clone();
            adam.begin_step();
            adam.update(&mut p, &grad).unwrap();
            let now = loss_of(&p.data);
            assert!(now < prev, "loss did not decrease: {now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Param::new("w", (1, 3), vec![0.3, -0.7, 0.9]);
            let mut adam = Adam::new(0.01);
            for step in 0..50 {
                let grad: Vec<f64> = p
                    .data
                    .iter()
                    .map(|x| x * 2.0 + (step as f64) * 0.01)
                    .collect();
                adam.begin_step();
                adam.update(&mut p, &grad).unwrap();
            }
            p.data
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = Param::new("generator.proj_w", (1, 2), vec![0.0, 0.0]);
        let mut adam = Adam::new(0.01);
        adam.begin_step();
        match adam.update(&mut p, &[f64::NAN, 0.0]) {
            Err(MathError::NonFiniteGradient { param }) => {
                assert_eq!(param, "generator.proj_w")
            }
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![vec![3.0, 0.0], vec![0.0, 4.0]];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);

        let mut small = vec![vec![0.1, 0.1]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], vec![0.1, 0.1]);
    }
}
