//! Dense f32 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is shape metadata over a shared contiguous row-major buffer.
//! Ops are free functions that take an optional [`Tape`]; when a tape is
//! passed and any input requires a gradient, the op pushes a backward closure
//! onto it. [`Tape::backward`] replays the closures newest-first,
//! accumulating `∂loss/∂t` into each participating buffer's grad.
//!
//! Cloning a tensor is cheap (buffer is refcounted), and `reshape` is free —
//! a new shape over the same buffer. Data is immutable after construction
//! except for parameter updates between steps; grads are the only thing
//! mutated during backward.

pub mod init;
pub mod linalg;
pub mod norm;
pub mod ops;
pub mod shape;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::mem;

struct Buffer {
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    buf: Rc<Buffer>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.buf.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn alloc(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, buffer has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            buf: Rc::new(Buffer {
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        })
    }

    /// New constant (non-differentiable) tensor from an existing buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Self::alloc(shape.to_vec(), data, false)
    }

    /// New leaf that participates in backward (parameters, gradient-checked
    /// inputs).
    pub fn leaf(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Self::alloc(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        mem::check_cap(numel * 4)?;
        Self::alloc(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        mem::check_cap(numel * 4)?;
        Self::alloc(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: f32) -> Tensor {
        Self::alloc(vec![1], vec![value], false).expect("scalar")
    }

    /// Output-tensor constructor used by ops.
    pub(crate) fn output(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<Tensor> {
        Self::alloc(shape, data, requires_grad)
    }

    /// Zeroed scratch for op outputs; checks the soft memory cap first.
    pub(crate) fn uninit_buffer(numel: usize) -> Result<Vec<f32>> {
        mem::check_cap(numel * 4)?;
        Ok(vec![0.0f32; numel])
    }

    /// Same buffer under a new shape with the same element count. Free, and
    /// transparent to backward (gradients live on the buffer).
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, new_shape
            )));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            buf: Rc::clone(&self.buf),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.buf.requires_grad
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.buf.data.borrow()
    }

    pub fn data_mut(&self) -> std::cell::RefMut<'_, Vec<f32>> {
        self.buf.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.buf.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "item() on tensor with {} elements",
                self.numel()
            )));
        }
        Ok(self.buf.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.buf.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.buf.grad.borrow_mut() = None;
    }

    /// Run `f` over the current gradient (None if no grad reached this
    /// tensor).
    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(Option<&[f32]>) -> R) -> R {
        let g = self.buf.grad.borrow();
        f(g.as_deref())
    }

    /// Accumulate `delta` into this tensor's gradient buffer.
    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut g = self.buf.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, d) in buf.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    pub(crate) fn seed_grad_ones(&self) {
        *self.buf.grad.borrow_mut() = Some(vec![1.0; self.numel()]);
    }

    /// Two handles over one underlying buffer?
    pub fn same_buffer(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.buf, &other.buf)
    }

    /// Error if any element is NaN or infinite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        let data = self.buf.data.borrow();
        if data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }
}

type BackwardFn = Box<dyn Fn() -> Result<()>>;

struct TapeOp {
    #[allow(dead_code)]
    name: &'static str,
    backward: BackwardFn,
}

/// Records the forward graph so [`Tape::backward`] can replay it in reverse.
///
/// One tape per forward pass; a tape that has run backward is consumed and
/// errors on reuse.
#[derive(Default)]
pub struct Tape {
    ops: RefCell<Vec<TapeOp>>,
    consumed: Cell<bool>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.borrow().is_empty()
    }

    pub(crate) fn record(&self, name: &'static str, backward: impl Fn() -> Result<()> + 'static) {
        self.ops.borrow_mut().push(TapeOp {
            name,
            backward: Box::new(backward),
        });
    }

    /// Reverse pass: seeds `loss.grad = 1` and visits every recorded op once,
    /// newest first.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.numel()));
        }
        if self.ops.borrow().is_empty() {
            return Err(Error::EmptyTape);
        }
        self.consumed.set(true);
        loss.seed_grad_ones();
        let ops = self.ops.borrow();
        for op in ops.iter().rev() {
            (op.backward)()?;
        }
        Ok(())
    }
}

/// True when this op should be recorded: a tape is present and some input
/// carries gradient.
pub(crate) fn tracking(tape: Option<&Tape>, inputs: &[&Tensor]) -> bool {
    tape.is_some() && inputs.iter().any(|t| t.requires_grad())
}
