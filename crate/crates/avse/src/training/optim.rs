//! RMSprop optimizer over a parameter registry and a reduce-on-plateau
//! learning-rate scheduler.

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Single-parameter RMSprop update rule, exposed for direct verification.
/// v ← α·v + (1−α)·g², p ← p − lr·g/(√v + ε).
pub fn rmsprop_step(p: f64, g: f64, v: f64, lr: f64, alpha: f64, eps: f64) -> (f64, f64) {
    let v = alpha * v + (1.0 - alpha) * g * g;
    (p - lr * g / (v.sqrt() + eps), v)
}

/// RMSprop state for every parameter in a `ParamSet`, in registry order.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub alpha: f64,
    pub eps: f64,
    /// Squared-gradient averages, one vector per registered parameter.
    pub v: Vec<Vec<f64>>,
    steps: u64,
}

impl RmsProp {
    pub fn new(params: &ParamSet, alpha: f64, eps: f64) -> Self {
        let v = params.iter().map(|(_, a)| vec![0.0; a.data.len()]).collect();
        RmsProp { alpha, eps, v, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// Apply one update. `grads` must hold one gradient slice per parameter
    /// in registry order. Non-finite gradients abort with the step index.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.v.len() {
            return Err(Error::shape_mismatch(
                "optimizer gradient count",
                &[grads.len()],
                &[self.v.len()],
            ));
        }
        for ((idx, (name, array)), (g, v)) in
            params.iter_mut().enumerate().zip(grads.iter().zip(self.v.iter_mut()))
        {
            if g.len() != array.data.len() {
                return Err(Error::Dim(format!(
                    "gradient for '{name}' has {} values, parameter has {}",
                    g.len(),
                    array.data.len()
                )));
            }
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient at optimizer step {} in parameter '{name}' (index {idx}, element {bad})",
                    self.steps
                )));
            }
            for ((p, gi), vi) in array.data.iter_mut().zip(g).zip(v.iter_mut()) {
                // Warm-start the squared-gradient average from the first
                // gradient: with v = 0 the first update is ~10x the nominal
                // rate, which is enough to wreck a carefully scaled init.
                if self.steps == 0 {
                    *vi = gi * gi;
                }
                let (np, nv) = rmsprop_step(*p, *gi, *vi, lr, self.alpha, self.eps);
                *p = np;
                *vi = nv;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Reduce-on-plateau scheduler in "min" mode: the rate is multiplied by
/// `factor` after `patience` consecutive epochs without relative improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub rel_threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, rel_threshold: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            rel_threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record one epoch's validation loss and return the rate to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        let improved = !self.best.is_finite()
            || val_loss < self.best - self.rel_threshold * self.best.abs();
        if improved {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
