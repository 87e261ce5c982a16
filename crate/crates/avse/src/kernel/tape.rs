use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::shape::numel;
use crate::error::{Error, Result};

/// Element type of the kernel: `f64` for verification and training, `f32`
/// for inference benchmarks.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::ops::AddAssign + Copy + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Handle to a tensor on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(super) usize);

pub(super) type BackFn<F> = Box<dyn Fn(&[F]) -> Vec<(Var, Vec<F>)>>;

pub(super) struct Node<F: Scalar> {
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub requires_grad: bool,
    pub backward: Option<BackFn<F>>,
}

/// Execution tape: ordered record of executed ops plus their values.
///
/// Nodes are append-only, so creation order is a topological order and the
/// backward sweep visits each node exactly once in reverse. Gradients
/// accumulate additively at fan-out points; repeated `backward` calls without
/// `reset_grads` keep accumulating.
pub struct Tape<F: Scalar> {
    pub(super) nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    /// Dropout active only when true.
    pub training: bool,
    /// When false, no backward closures are stored (inference mode).
    pub recording: bool,
    pub(super) rng: ChaCha8Rng,
}

impl<F: Scalar> Tape<F> {
    pub fn new(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            recording: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inference tape: no gradient recording, dropout off.
    pub fn inference(seed: u64) -> Self {
        let mut t = Self::new(seed);
        t.recording = false;
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant tensor (no gradient).
    pub fn leaf(&mut self, shape: &[usize], data: Vec<F>) -> Var {
        assert_eq!(numel(shape), data.len(), "shape/data length mismatch");
        self.push(shape.to_vec(), data, false, None)
    }

    /// Trainable tensor; `backward` will populate its gradient.
    pub fn param(&mut self, shape: &[usize], data: Vec<F>) -> Var {
        assert_eq!(numel(shape), data.len(), "shape/data length mismatch");
        self.push(shape.to_vec(), data, true, None)
    }

    pub fn leaf_f64(&mut self, shape: &[usize], data: &[f64]) -> Var {
        let cast = data.iter().map(|&v| F::from_f64(v)).collect();
        self.leaf(shape, cast)
    }

    pub fn param_f64(&mut self, shape: &[usize], data: &[f64]) -> Var {
        let cast = data.iter().map(|&v| F::from_f64(v)).collect();
        self.param(shape, cast)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(&[1], vec![F::from_f64(v)])
    }

    pub(super) fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<F>,
        requires_grad: bool,
        backward: Option<BackFn<F>>,
    ) -> Var {
        let backward = if self.recording { backward } else { None };
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value_f64(&self, v: Var) -> Vec<f64> {
        self.value(v).iter().map(|x| x.as_f64()).collect()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(self.value(v).len(), 1);
        self.value(v)[0].as_f64()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// requires-grad tensor reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.recording {
            return Err(Error::Usage("backward on a non-recording tape".into()));
        }
        let n = self.nodes.len();
        let mut local: Vec<Option<Vec<F>>> = vec![None; n];
        local[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            let Some(gout) = local[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.requires_grad {
                if let Some(back) = &node.backward {
                    for (pvar, pgrad) in back(&gout) {
                        if !self.nodes[pvar.0].requires_grad {
                            continue;
                        }
                        match &mut local[pvar.0] {
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(pgrad) {
                                    *a += g;
                                }
                            }
                            None => local[pvar.0] = Some(pgrad),
                        }
                    }
                }
            }
            // Leaf params keep their gradient; interior grads are dropped.
            if node.backward.is_none() && node.requires_grad {
                if self.grads.len() < n {
                    self.grads.resize(n, None);
                }
                match &mut self.grads[id] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(gout) {
                            *a += g;
                        }
                    }
                    slot => *slot = Some(gout),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf parameter, if any was reached.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_f64(&self, v: Var) -> Option<Vec<f64>> {
        self.grad(v).map(|g| g.iter().map(|x| x.as_f64()).collect())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t: Tape<f64> = Tape::new(0);
        let v = t.param(&[2], vec![1.0, 2.0]);
        assert!(matches!(t.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn disconnected_tensor_keeps_grad_none() {
        let mut t: Tape<f64> = Tape::new(0);
        let a = t.param(&[1], vec![3.0]);
        let b = t.param(&[1], vec![4.0]);
        let loss = t.mul(a, a).unwrap();
        t.backward(loss).unwrap();
        assert!(t.grad(a).is_some());
        assert!(t.grad(b).is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t: Tape<f64> = Tape::new(0);
        let a = t.param(&[1], vec![3.0]);
        let loss = t.mul(a, a).unwrap();
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[12.0]);
        t.reset_grads();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[6.0]);
    }
}
