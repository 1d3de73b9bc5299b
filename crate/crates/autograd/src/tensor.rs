use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) type BackwardFn = dyn Fn(&Ctx<'_>, &Tensor) -> Vec<Option<Tensor>> + Send + Sync;

pub(crate) struct GradFn {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: Box<BackwardFn>,
}

/// What a backward closure sees: the op inputs, its output and which input
/// gradients are actually wanted.
pub(crate) struct Ctx<'a> {
    pub inputs: &'a [Tensor],
    pub output: &'a Tensor,
    pub needs: &'a [bool],
}

pub(crate) struct Node {
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn>,
}

impl Drop for Node {
    // Long recurrent graphs would otherwise overflow the stack on drop.
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else {
            return;
        };
        let mut stack = gf.inputs;
        drop(gf.backward);
        while let Some(t) = stack.pop() {
            if let Some(mut node) = Arc::into_inner(t.0) {
                if let Some(inner) = node.grad_fn.take() {
                    stack.extend(inner.inputs);
                }
            }
        }
    }
}

/// An n-dimensional row-major array of `f64` that records the operations
/// producing it, so gradients can be taken with [`crate::grad`].
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor::leaf(Arc::new(data), shape.to_vec(), false)
    }

    pub fn from_slice(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::from_vec(vec![v; numel(shape)], shape)
    }

    pub(crate) fn leaf(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Builds the output of an op, attaching `backward` when recording is on
    /// and any input needs a gradient.
    pub(crate) fn from_op<F>(
        data: Vec<f64>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&Ctx<'_>, &Tensor) -> Vec<Option<Tensor>> + Send + Sync + 'static,
    {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor::from_op_shared(Arc::new(data), shape, name, inputs, backward)
    }

    pub(crate) fn from_op_shared<F>(
        data: Arc<Vec<f64>>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&Ctx<'_>, &Tensor) -> Vec<Option<Tensor>> + Send + Sync + 'static,
    {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Tensor::leaf(data, shape, false);
        }
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad: true,
            grad_fn: Some(GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// A new leaf sharing this tensor's buffer, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.data_arc(), self.shape().to_vec(), false)
    }

    /// A new leaf sharing this tensor's buffer that requires a gradient.
    pub fn leaf_requiring_grad(&self) -> Tensor {
        Tensor::leaf(self.data_arc(), self.shape().to_vec(), true)
    }

    pub(crate) fn inputs(&self) -> &[Tensor] {
        match &self.0.grad_fn {
            Some(g) => &g.inputs,
            None => &[],
        }
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
