use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{name}` at index {index}")]
    NonFinite { name: String, index: usize },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the update.
    pub clip: Option<f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, param: usize) -> (&[f64], &[f64]) {
        (&self.m[param], &self.v[param])
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<(), OptimError> {
        if grads.len() != store.len() {
            return Err(OptimError::Count {
                expected: store.len(),
                got: grads.len(),
            });
        }
        for (param, grad) in store.iter().zip(grads) {
            if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
                return Err(OptimError::NonFinite {
                    name: param.name.clone(),
                    index,
                });
            }
        }
        let scale = match self.clip {
            Some(max) => {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, grad) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let value = &store.get(id).value;
            let mut data = value.to_vec();
            for i in 0..data.len() {
                let g = grad[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                data[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
            let updated = Tensor::new(value.shape(), data).expect("same shape");
            store.set(id, updated).expect("same shape");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng::seeded;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", &[values.len()], Init::Constant(0.0), &mut seeded(0));
        store.set(0, Tensor::new(&[values.len()], values.to_vec()).unwrap()).unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = store_with(&[1.0, -2.0]);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(store.get(0).value.to_vec(), vec![1.0, -2.0]);
        assert_eq!(adam.moments(0), (&[0.0, 0.0][..], &[0.0, 0.0][..]));
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut store = store_with(&[1.0]);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &[vec![1.0]]).unwrap();
        let m1 = adam.moments(0).0[0];
        adam.step(&mut store, &[vec![0.0]]).unwrap();
        assert!((adam.moments(0).0[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 150.0] {
            let mut store = store_with(&[0.5]);
            let mut adam = Adam::new(&store, 0.01);
            adam.step(&mut store, &[vec![g]]).unwrap();
            let moved = store.get(0).value.to_vec()[0] - 0.5;
            // m_hat = g, v_hat = g^2 after bias correction
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut store = store_with(&[1.0]);
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..200 {
            let w = store.get(0).value.to_vec()[0];
            adam.step(&mut store, &[vec![2.0 * w]]).unwrap();
        }
        assert!(store.get(0).value.to_vec()[0].abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = store_with(&[1.0, 2.0]);
        let mut adam = Adam::new(&store, 0.1);
        let err = adam.step(&mut store, &[vec![0.0, f64::NAN]]).unwrap_err();
        assert_eq!(
            err,
            OptimError::NonFinite {
                name: "w".into(),
                index: 1
            }
        );
        assert_eq!(store.get(0).value.to_vec(), vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut store = store_with(&[0.0, 0.0]);
        let mut adam = Adam::new(&store, 0.1);
        adam.clip = Some(1.0);
        adam.step(&mut store, &[vec![300.0, 400.0]]).unwrap();
        let m = adam.moments(0).0;
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-12 && (m[1] - 0.1 * 0.8).abs() < 1e-12);
    }
}
