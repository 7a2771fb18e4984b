use super::ops::Op;
use super::{check_shape, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(super) idx: usize,
    pub(super) epoch: u64,
}

pub(super) struct Node<R> {
    pub(super) value: Vec<R>,
    pub(super) shape: Vec<usize>,
    pub(super) op: Op<R>,
    pub(super) needs_grad: bool,
}

/// Define-by-run operation recorder.
///
/// A tape accepts any number of forward ops and exactly one
/// [`backward`](Tape::backward); after that it must be [`reset`](Tape::reset)
/// before it records again.
pub struct Tape<R> {
    pub(super) nodes: Vec<Node<R>>,
    epoch: u64,
    consumed: bool,
    check_finite: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    /// Non-finite outputs are rejected when debug assertions are enabled.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), epoch: 0, consumed: false, check_finite: cfg!(debug_assertions) }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Drops all recorded nodes and invalidates every outstanding [`Var`].
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.epoch += 1;
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf copied from `t`; it receives a gradient iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<R>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
            .expect("tensor shapes are validated at construction")
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<R>) -> Result<Var> {
        self.push_leaf(shape.to_vec(), data, false)
    }

    pub fn variable(&mut self, shape: &[usize], data: Vec<R>) -> Result<Var> {
        self.push_leaf(shape.to_vec(), data, true)
    }

    pub fn scalar(&mut self, v: R) -> Var {
        self.push_leaf(vec![1], vec![v], false).expect("scalar shape is valid")
    }

    fn push_leaf(&mut self, shape: Vec<usize>, data: Vec<R>, needs_grad: bool) -> Result<Var> {
        self.ensure_open()?;
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::shape(
                "leaf",
                format!("shape {:?} needs {} values, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(self.push_node(Node { value: data, shape, op: Op::Leaf, needs_grad }))
    }

    pub(super) fn push_node(&mut self, node: Node<R>) -> Var {
        self.nodes.push(node);
        Var { idx: self.nodes.len() - 1, epoch: self.epoch }
    }

    pub(super) fn ensure_open(&self) -> Result<()> {
        if self.consumed {
            return Err(TensorError::Contract(
                "tape already ran backward; reset it and run a new forward pass".into(),
            ));
        }
        Ok(())
    }

    pub(super) fn node(&self, v: Var) -> Result<&Node<R>> {
        self.ensure_open()?;
        if v.epoch != self.epoch || v.idx >= self.nodes.len() {
            return Err(TensorError::Contract("variable does not belong to the current tape pass".into()));
        }
        Ok(&self.nodes[v.idx])
    }

    pub(super) fn finite_guard(&self, op: &'static str, values: &[R]) -> Result<()> {
        if self.check_finite && values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::domain(op, "produced a non-finite value"));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> Result<&[R]> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.node(v)?.shape)
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor<R>> {
        let n = self.node(v)?;
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    /// Reverse sweep from a scalar `loss`. Populates gradients for every
    /// gradient-requiring leaf and consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        let numel = self.node(loss)?.value.len();
        if numel != 1 {
            return Err(TensorError::Contract(format!("backward needs a scalar loss, got {} values", numel)));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(vec![R::one()]);
        for i in (0..=loss.idx).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        let mut leaf_grads: Vec<Option<Vec<R>>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![R::zero(); node.value.len()]);
                leaf_grads.push(Some(g));
            } else {
                leaf_grads.push(None);
            }
        }
        let epoch = self.epoch;
        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients { grads: leaf_grads, epoch })
    }
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients<R> {
    grads: Vec<Option<Vec<R>>>,
    epoch: u64,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&[R]> {
        if v.epoch != self.epoch {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }
}

pub(super) fn accumulate<'a, R: Real>(grads: &'a mut [Option<Vec<R>>], idx: usize, len: usize) -> &'a mut Vec<R> {
    grads[idx].get_or_insert_with(|| vec![R::zero(); len])
}
