use std::collections::{BTreeMap, HashMap};

use super::{Real, Tensor};
use crate::error::{ensure, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A named trainable array owned by a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen parameters enter the tape as constants and never receive updates.
    pub frozen: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            value,
            frozen: false,
        }
    }
}

/// What an op's adjoint rule sees during the reverse sweep.
pub(crate) struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    retain: bool,
    param: Option<String>,
}

/// Define-by-run record of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    /// Node count at the last backward sweep; losses recorded before it are stale.
    consumed_upto: Option<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed_upto: None,
        }
    }

    /// A tape that records values only; nothing on it requires gradients.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
            retain: true,
            param: None,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, p: &Param<T>) -> Var {
        let requires_grad = !p.frozen && self.grad_enabled;
        self.push_node(Node {
            value: p.value.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            retain: true,
            param: requires_grad.then(|| p.name.clone()),
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Keep the adjoint of an intermediate value and force gradient flow
    /// through it. Must be called before downstream ops are recorded.
    pub fn track(&mut self, v: Var) {
        let node = &mut self.nodes[v.0];
        node.retain = true;
        if self.grad_enabled {
            node.requires_grad = true;
        }
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Record the result of an op. `backward` is dropped when no input
    /// requires a gradient.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Var {
        if cfg!(debug_assertions)
            && parents.iter().all(|p| self.nodes[p.0].value.is_finite())
        {
            assert!(value.is_finite(), "non-finite output from finite inputs");
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            retain: false,
            param: None,
        })
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every op between the leaves and `loss` is visited once, in reverse
    /// recording order. Adjoints from multiple consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if let Some(mark) = self.consumed_upto {
            if loss.0 < mark {
                return Err(Error::StaleGraph);
            }
        }
        ensure!(
            self.nodes[loss.0].value.is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );

        let mut adjoints: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        let mut grads = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(grad) = adjoints[i].take() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            if let Some(rule) = &node.backward {
                let ctx = BackwardCtx {
                    inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    output: &node.value,
                    grad: &grad,
                    needs: node
                        .parents
                        .iter()
                        .map(|&p| self.nodes[p].requires_grad)
                        .collect(),
                };
                let parent_grads = rule(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                    match &mut adjoints[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
            if node.retain {
                if let Some(name) = &node.param {
                    grads.accumulate_param(name, &grad);
                }
                grads.nodes.insert(i, grad);
            }
        }

        // Reachable or not, every differentiable leaf gets an entry.
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.requires_grad && node.parents.is_empty() && !grads.nodes.contains_key(&i) {
                let zero = Tensor::zeros(node.value.shape());
                if let Some(name) = &node.param {
                    grads.accumulate_param(name, &zero);
                }
                grads.nodes.insert(i, zero);
            }
        }

        self.consumed_upto = Some(self.nodes.len());
        Ok(grads)
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: HashMap<usize, Tensor<T>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            nodes: HashMap::new(),
            params: BTreeMap::new(),
        }
    }
}

impl<T: Real> Gradients<T> {
    fn accumulate_param(&mut self, name: &str, g: &Tensor<T>) {
        match self.params.get_mut(name) {
            Some(acc) => acc.add_assign(g),
            None => {
                self.params.insert(name.to_string(), g.clone());
            }
        }
    }

    /// Gradient of a leaf or tracked value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(&v.0)
    }

    /// Gradient of a parameter by name.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec3(tape: &mut Tape<f64>, xs: [f64; 3]) -> Var {
        tape.leaf(Tensor::new(vec![3], xs.to_vec()).unwrap(), true)
    }

    #[test]
    fn sum_adjoint_is_ones() {
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, -2.0, 5.0]);
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_adjoint_is_two_x() {
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_is_stale() {
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::StaleGraph)));
        // a fresh forward on the same tape is fine
        let loss2 = tape.sum(x);
        assert!(tape.backward(loss2).is_ok());
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        let y = vec3(&mut tape, [4.0, 5.0, 6.0]);
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(y).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_consumers_accumulate() {
        // y = sum(x) + sum(3x) -> grad = 1 + 3
        let mut tape = Tape::new();
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        let a = tape.sum(x);
        let x3 = tape.scale(x, 3.0);
        let b = tape.sum(x3);
        let loss = tape.add(a, b).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let mut tape = Tape::new();
        let mut p = Param::new("w", Tensor::<f64>::full(&[3], 2.0));
        p.frozen = true;
        let w = tape.param(&p);
        let x = vec3(&mut tape, [1.0, 2.0, 3.0]);
        let prod = tape.mul(w, x).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert!(g.param("w").is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
