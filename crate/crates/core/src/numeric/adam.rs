use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::{NumericError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<(), NumericError> {
        let ok_beta = |b: f64| b > 0.0 && b < 1.0;
        if !ok_beta(self.beta1) || !ok_beta(self.beta2) || self.epsilon <= 0.0 {
            return Err(NumericError::InvalidHyperparameter(format!(
                "beta1={}, beta2={}, epsilon={}",
                self.beta1, self.beta2, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(numel: usize, config: AdamConfig) -> Result<Self, NumericError> {
        config.validate()?;
        Ok(AdamState {
            first_moment: vec![0.0; numel],
            second_moment: vec![0.0; numel],
            step_count: 0,
            config,
        })
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// A non-finite gradient is rejected and leaves both `param` and `state`
/// untouched.
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NumericError> {
    if param.shape() != grad.shape() || state.first_moment.len() != param.numel() {
        return Err(NumericError::ShapeMismatch {
            op: "adam_step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(NumericError::InvalidHyperparameter(format!("lr={lr}")));
    }
    if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(NumericError::NonFinite {
            context: "adam_step gradient".into(),
            index: i,
        });
    }
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let moments = state
        .first_moment
        .iter_mut()
        .zip(state.second_moment.iter_mut());
    for ((p, &g), (m, v)) in param.data_mut().iter_mut().zip(grad.data()).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + epsilon));
    }
    Ok(())
}

/// Adam over a [`ParamStore`], one lazily created state per parameter.
/// Learning rates are supplied per call so parameter groups can differ.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    config: AdamConfig,
    states: BTreeMap<ParamId, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self, NumericError> {
        config.validate()?;
        Ok(Adam {
            config,
            states: BTreeMap::new(),
        })
    }

    /// Updates `id` from its stored gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        id: ParamId,
        lr: f64,
    ) -> Result<(), NumericError> {
        let grad = store.grad(id).clone();
        let numel = grad.numel();
        let config = self.config;
        let state = match self.states.entry(id) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(AdamState::new(numel, config)?)
            }
        };
        adam_step(store.value_mut(id), &grad, state, lr)
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(&id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fresh() -> AdamState {
        AdamState::new(1, AdamConfig::default()).unwrap()
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let mut p = Tensor::scalar(0.0);
        let mut s = fresh();
        adam_step(&mut p, &Tensor::scalar(1.0), &mut s, 0.001).unwrap();
        assert_relative_eq!(p.data()[0], -0.001 / (1.0 + 1e-8), max_relative = 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Tensor::scalar(0.7);
        let mut s = fresh();
        adam_step(&mut p, &Tensor::scalar(0.0), &mut s, 0.01).unwrap();
        assert_eq!(p.data()[0], 0.7);
    }

    #[test]
    fn first_update_is_linear_in_lr() {
        let g = Tensor::scalar(0.37);
        let (mut p1, mut p2) = (Tensor::scalar(0.0), Tensor::scalar(0.0));
        let (mut s1, mut s2) = (fresh(), fresh());
        adam_step(&mut p1, &g, &mut s1, 0.003).unwrap();
        adam_step(&mut p2, &g, &mut s2, 0.006).unwrap();
        assert_eq!(p2.data()[0], 2.0 * p1.data()[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = Tensor::scalar(1.0);
        let mut s = fresh();
        let err = adam_step(&mut p, &Tensor::scalar(f64::NAN), &mut s, 0.01).unwrap_err();
        assert!(matches!(err, NumericError::NonFinite { .. }));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(s, fresh());
    }

    #[test]
    fn deterministic_updates() {
        let g = Tensor::new(vec![3], vec![0.1, -2.0, 3.5]).unwrap();
        let run = || {
            let mut p = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
            let mut s = AdamState::new(3, AdamConfig::default()).unwrap();
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p.into_data()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(1, bad).is_err());
        let mut p = Tensor::scalar(0.0);
        assert!(adam_step(&mut p, &Tensor::scalar(1.0), &mut fresh(), 0.0).is_err());
    }
}
