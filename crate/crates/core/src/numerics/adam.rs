use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed set of parameters.
///
/// The optimizer owns the list of parameters it updates; parameters outside
/// that list are never touched, which is what lets two optimizers split one
/// model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f64> {
    pub config: AdamConfig,
    step: u64,
    params: Vec<ParamId>,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
    updates: Vec<u64>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: Vec<ParamId>, store: &ParamStore<S>) -> Self {
        let zeros: Vec<Tensor<S>> = params.iter().map(|&p| Tensor::zeros(store.get(p).shape())).collect();
        Self {
            config,
            step: 0,
            updates: vec![0; params.len()],
            first_moment: zeros.clone(),
            second_moment: zeros,
            params,
        }
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        params: Vec<ParamId>,
        first_moment: Vec<Tensor<S>>,
        second_moment: Vec<Tensor<S>>,
    ) -> Result<Self> {
        if first_moment.len() != params.len() || second_moment.len() != params.len() {
            return Err(Error::input("adam moment count does not match parameter count"));
        }
        Ok(Self {
            config,
            step,
            updates: vec![0; params.len()],
            params,
            first_moment,
            second_moment,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn first_moment(&self) -> &[Tensor<S>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor<S>] {
        &self.second_moment
    }

    /// How many times each owned parameter has been written, in [`params`](Self::params) order.
    pub fn update_counts(&self) -> &[u64] {
        &self.updates
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    ///
    /// Parameters with no accumulated gradient are treated as having a zero
    /// gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &GradBuffer<S>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::contract(format!("learning rate {lr} must be non-negative")));
        }
        for (i, &id) in self.params.iter().enumerate() {
            let shape = store.get(id).shape();
            if self.first_moment[i].shape() != shape {
                return Err(Error::contract(format!(
                    "adam moment for {} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    self.first_moment[i].shape(),
                    shape
                )));
            }
            if let Some(g) = grads.get(id) {
                if g.shape() != shape {
                    return Err(Error::contract(format!(
                        "gradient for {} has shape {:?}, parameter has {:?}",
                        store.name(id),
                        g.shape(),
                        shape
                    )));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = S::of(self.config.beta1);
        let b2 = S::of(self.config.beta2);
        let eps = S::of(self.config.eps);
        let lr = S::of(lr);
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);

        for (i, &id) in self.params.iter().enumerate() {
            let grad = grads.get(id);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let g = grad.map_or(S::zero(), |g| g.data()[j]);
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            self.updates[i] += 1;
        }
        Ok(())
    }
}
