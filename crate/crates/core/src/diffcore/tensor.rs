//! Reference-counted tensors with a recorded backward graph.
//!
//! Every op produces a new [`Tensor`] that remembers its inputs and a
//! backward closure. [`Tensor::backward`] walks the graph in reverse
//! topological order, summing contributions along every path, and
//! accumulates the result into the `grad` slot of each leaf that was
//! created with [`Tensor::param`].
//!
//! Graphs are `!Send`: one graph lives on one thread. Data-parallel code
//! builds an independent graph per worker from shared parameter values.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Arguments handed to a backward closure.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad_out: &'a [f64],
    /// This node's forward output.
    pub out: &'a [f64],
    pub inputs: &'a [Tensor],
    /// `needs[i]` is false when input `i` does not lead to any parameter;
    /// closures may return `None` for it.
    pub needs: &'a [bool],
}

/// Computes one optional gradient per input.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        if let Some(node) = &self.0.node {
            s.field("op", &node.op);
        }
        s.finish()
    }
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// A constant: never receives a gradient.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len("new", &data, shape)?;
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// A leaf that accumulates gradients on [`Tensor::backward`].
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len("param", &data, shape)?;
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![v], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![0.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::build(vec![v; numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Records a custom op. `backward` receives the output gradient and
    /// must return one entry per input.
    pub fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        if !requires_grad {
            return Self::build(data, shape, false, None);
        }
        Self::build(
            data,
            shape,
            true,
            Some(Node {
                op,
                inputs,
                backward,
            }),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::op("item", format!("tensor has shape {:?}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        self.backward_with(vec![1.0])
    }

    /// Backpropagates an explicit output gradient (vector-Jacobian product).
    pub fn backward_with(&self, seed: Vec<f64>) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        accumulate_into(&self.0.grad, &seed);
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::with_capacity(order.len());
        grads.insert(self.key(), seed);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    if !t.ptr_eq(self) {
                        accumulate_into(&t.0.grad, &g);
                    }
                }
                Some(node) => {
                    let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
                    let ctx = BackwardCtx {
                        grad_out: &g,
                        out: &t.0.data,
                        inputs: &node.inputs,
                        needs: &needs,
                    };
                    let input_grads = (node.backward)(&ctx);
                    debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "op {}", node.op);
                        match grads.get_mut(&input.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(input.key(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the grad-requiring subgraph.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn accumulate_into(slot: &RefCell<Option<Vec<f64>>>, g: &[f64]) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn check_len(op: &'static str, data: &[f64], shape: &[usize]) -> Result<()> {
    if numel_of(shape) != data.len() {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![data.len()],
        });
    }
    if shape.contains(&0) {
        return Err(Error::op(op, format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_len() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![1.0; 4], &[2, 2]).is_ok());
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn loss_grad_wrt_itself_is_one() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(loss.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn constants_do_not_record_nodes() {
        let a = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.scale(2.0);
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }
}
