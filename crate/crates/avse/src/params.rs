//! Named parameter storage shared by the model, optimizer and checkpoints.
//!
//! Weights are held once, in double precision, in a flat registry with
//! deterministic ordering. Layers keep [`ParamId`] handles and bind the
//! registry onto a tape (at the tape's element type) before each forward
//! pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{numel, Scalar, Tape, Var};

/// Dense f64 array with shape, the at-rest form of every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(shape: &[usize]) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    /// Uniform init in ±1/√fan_in.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Array {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Flat, ordered registry of named weights.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, a: Array) -> ParamId {
        self.entries.push((name.into(), a));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(n, a)| (n.as_str(), a))
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Total element count over all arrays.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.numel()).sum()
    }

    /// Replace array contents by name (shape must match).
    pub fn load_named(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("unknown weight array '{name}'")))?;
        if entry.1.shape != shape {
            return Err(Error::shape_mismatch(name, &entry.1.shape, shape));
        }
        entry.1.data = data;
        Ok(())
    }

    /// Put every array on the tape as a trainable leaf.
    pub fn bind<F: Scalar>(&self, tape: &mut Tape<F>) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, a)| tape.param_f64(&a.shape, &a.data))
            .collect();
        Bound { vars }
    }

    /// Bind as constants (inference): no gradient bookkeeping.
    pub fn bind_frozen<F: Scalar>(&self, tape: &mut Tape<F>) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, a)| tape.leaf_f64(&a.shape, &a.data))
            .collect();
        Bound { vars }
    }
}

/// Tape handles for one bound [`ParamSet`], in registry order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
