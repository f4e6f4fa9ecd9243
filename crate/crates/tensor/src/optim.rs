use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::var::Array;
use crate::TensorError;

/// Adam with bias correction. Moments are keyed by parameter name so the
/// whole state can be written to and restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Array>,
    pub second_moment: BTreeMap<String, Array>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }

    /// Applies one update to every parameter in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array>) -> Result<(), TensorError> {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let param = store.value_mut(name)?;
            if param.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    name: name.clone(),
                    expected: param.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            let m = self
                .state
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self
                .state
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.raw_dim()));
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (lr, eps) = (self.learning_rate, self.eps);
            ndarray::Zip::from(param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
        Ok(())
    }
}
