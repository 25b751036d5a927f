use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

pub(crate) type BackwardFn = Box<dyn FnOnce(&[f64], &mut GradSink)>;

struct Node {
    value: Rc<Vec<f64>>,
    shape: Rc<[usize]>,
    requires_grad: bool,
    is_leaf: bool,
    backward: Option<BackwardFn>,
}

/// Records one forward pass. Each op appends a node holding its value and,
/// when any input needs a gradient, a closure that maps the output gradient
/// onto the inputs. [`Tape::backward`] replays the closures in reverse and
/// drops them, so a tape supports exactly one backward pass.
///
/// A tape is single-threaded; separate threads build separate tapes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Lazily-allocated gradient buffers handed to backward closures.
pub struct GradSink {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
    needs: Vec<bool>,
}

impl GradSink {
    /// Mutable gradient buffer for node `id`, or `None` if that node does
    /// not take part in differentiation.
    pub(crate) fn slot(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.needs[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(
            self.grads[id]
                .get_or_insert_with(|| vec![0.0; size])
                .as_mut_slice(),
        )
    }

    pub(crate) fn wants(&self, id: usize) -> bool {
        self.needs[id]
    }

    pub(crate) fn add(&mut self, id: usize, g: &[f64]) {
        if let Some(buf) = self.slot(id) {
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `tensor.grad`. Does nothing when the
    /// leaf received no gradient or the tensor does not require one.
    pub fn accumulate_into(&self, var: Var<'_>, tensor: &mut Tensor) -> Result<()> {
        if !tensor.requires_grad() {
            return Ok(());
        }
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `tensor` as a leaf; it is differentiated iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor.data().to_vec(), tensor.shape().to_vec(), tensor.requires_grad())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor.data().to_vec(), tensor.shape().to_vec(), false)
    }

    pub fn constant_from(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        if numel(&shape) != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                len: data.len(),
            });
        }
        Ok(self.push_leaf(data, shape, false))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push_leaf(vec![value], Vec::new(), false)
    }

    fn push_leaf(&self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(data),
            shape: shape.into(),
            requires_grad,
            is_leaf: true,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an op result. `backward` is kept only if some input needs a
    /// gradient.
    pub(crate) fn push_op(
        &self,
        value: Vec<f64>,
        shape: Vec<usize>,
        inputs: &[Var<'_>],
        backward: impl FnOnce(&[f64], &mut GradSink) + 'static,
    ) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            shape: shape.into(),
            requires_grad,
            is_leaf: false,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn shape(&self, id: usize) -> Rc<[usize]> {
        Rc::clone(&self.nodes.borrow()[id].shape)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`. Frees the recorded closures.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(TensorError::GraphConsumed);
        }
        let loss_shape = self.shape(loss.id);
        if numel(&loss_shape) != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        self.consumed.set(true);

        let mut nodes = self.nodes.borrow_mut();
        let n = loss.id + 1;
        let mut sink = GradSink {
            grads: vec![None; n],
            sizes: nodes[..n].iter().map(|nd| nd.value.len()).collect(),
            needs: nodes[..n].iter().map(|nd| nd.requires_grad).collect(),
        };
        let leaves: Vec<bool> = nodes[..n].iter().map(|nd| nd.is_leaf).collect();
        if sink.needs[loss.id] {
            sink.grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..n).rev() {
            let Some(backward) = nodes[id].backward.take() else {
                continue;
            };
            if let Some(g) = sink.grads[id].take() {
                backward(&g, &mut sink);
            }
        }
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        let grads = sink
            .grads
            .into_iter()
            .zip(leaves)
            .map(|(g, leaf)| if leaf { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape(self.id).to_vec()
    }

    pub fn rank(&self) -> usize {
        self.tape.shape(self.id).len()
    }

    pub fn numel(&self) -> usize {
        self.tape.value(self.id).len()
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.value(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Snapshot as a detached tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape(), self.value().to_vec())
            .expect("tape values always match their shapes")
    }

    pub fn item(&self) -> f64 {
        self.value()[0]
    }
}
