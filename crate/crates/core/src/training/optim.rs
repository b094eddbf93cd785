use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

use super::TrainConfig;

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First and second moments plus a step counter per parameter.
#[derive(Clone, Debug, Default)]
pub struct NadamState {
    moments: HashMap<String, Moments>,
}

impl NadamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Steps taken by parameter `name`.
    pub fn steps(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.t)
    }
}

/// One Nesterov-Adam update of every parameter that has a gradient:
///
/// ```text
/// m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
/// theta -= lr * (b1*m/(1-b1^t) + (1-b1)*g/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
/// ```
pub fn nadam_step(
    params: &mut ParamSet,
    grads: &HashMap<String, Tensor>,
    state: &mut NadamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "nadam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let st = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; g.numel()],
            v: vec![0.0; g.numel()],
            t: 0,
        });
        if st.m.len() != g.numel() {
            return Err(Error::invalid(format!(
                "optimizer state for {name} holds {} values, gradient has {}",
                st.m.len(),
                g.numel()
            )));
        }
        st.t += 1;
        let c1 = 1.0 - b1.powi(st.t as i32);
        let c2 = 1.0 - b2.powi(st.t as i32);
        for (((theta, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= cfg.lr * (b1 * m_hat + (1.0 - b1) * gi / c1) / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Tracks the best validation loss and a snapshot taken at that epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopper<T> {
    patience: usize,
    best_val_loss: f64,
    epochs_since_improve: usize,
    best: Option<T>,
}

impl<T> EarlyStopper<T> {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            best: None,
        }
    }

    /// Records one epoch; returns true once `patience` epochs have passed
    /// without a strict improvement. A NaN loss never improves.
    pub fn observe(&mut self, val_loss: f64, snapshot: impl FnOnce() -> T) -> bool {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_improve = 0;
            self.best = Some(snapshot());
        } else {
            self.epochs_since_improve += 1;
        }
        self.epochs_since_improve >= self.patience
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    pub fn epochs_since_improve(&self) -> usize {
        self.epochs_since_improve
    }

    pub fn best(&self) -> Option<&T> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.best
    }
}
