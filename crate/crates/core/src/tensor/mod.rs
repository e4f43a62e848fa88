//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable operation run while grad mode is on (see
//! [`no_grad`], [`with_grad_mode`]) and touching a tensor that requires
//! gradients appends a [`Node`](graph) to a dynamically built DAG. Calling
//! [`Tensor::backward`] on a scalar walks that DAG in reverse topological
//! order and accumulates gradients into the leaves.
//!
//! Storage is always `f64`. A tensor tagged [`DType::Single`] holds values
//! that are exactly representable as `f32`: every operation rounds its output
//! (and every gradient it produces) to single precision, and memory
//! accounting charges four bytes per element. This reproduces single
//! precision range and rounding per operation while keeping one kernel path.
//! Accumulations inside a kernel (matmul, convolution, LU) run in `f64`
//! before the final rounding, so single results are slightly more accurate
//! than a native `f32` kernel would give.

mod graph;
mod index;
mod linalg;
mod ops;
mod shape;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};

pub use graph::{
    custom_op, is_grad_enabled, no_grad, with_grad_mode, BackwardFn, GraphStats, OpStats,
};
pub use linalg::{lu_factor, lu_inverse, LuFactors, DEFAULT_PIVOT_TOL};
pub use ops::wrap;
pub use shape::broadcast_shape;

use graph::Node;

/// `C = A B + beta C` for row-major `A: m x k`, `B: k x n`, `C: m x n`.
pub(crate) fn gemm_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    linalg::gemm(m, k, n, 1.0, a, k, false, b, n, false, beta, c, n);
}

/// `C = A^T B` for row-major `A: k x m`, `B: k x n`.
pub(crate) fn gemm_tn_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    linalg::gemm(m, k, n, 1.0, a, m, true, b, n, false, 0.0, c, n);
}

/// `C = A B^T` for row-major `A: m x k`, `B: n x k`.
pub(crate) fn gemm_nt_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    linalg::gemm(m, k, n, 1.0, a, k, false, b, k, true, 0.0, c, n);
}

/// Shared, immutable element buffer. Identity of the `Arc` is what the
/// saved-tensor accounting deduplicates on.
pub type Buffer = Arc<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Single,
    Double,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::Single => 4,
            DType::Double => 8,
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::Single => x as f32 as f64,
            DType::Double => x,
        }
    }

    pub fn round_slice(self, v: &mut [f64]) {
        if self == DType::Single {
            for x in v.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    /// Result dtype of an operation mixing `self` and `other`: single wins.
    pub fn promote(self, other: DType) -> DType {
        if self == DType::Single || other == DType::Single {
            DType::Single
        } else {
            DType::Double
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Single => "single",
            DType::Double => "double",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(DType::Single),
            "double" | "f64" => Ok(DType::Double),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

struct Inner {
    shape: Vec<usize>,
    dtype: DType,
    data: RwLock<Buffer>,
    requires_grad: bool,
    node: Option<Arc<Node>>,
    grad: Mutex<Option<Vec<f64>>>,
}

/// A dense tensor, cheap to clone (reference counted).
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &self.inner.dtype)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    fn build(
        data: Buffer,
        shape: Vec<usize>,
        dtype: DType,
        requires_grad: bool,
        node: Option<Arc<Node>>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                shape,
                dtype,
                data: RwLock::new(data),
                requires_grad,
                node,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Creates a constant tensor; values are rounded to `dtype`.
    pub fn from_vec(mut data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{} elements for shape {:?}", data.len(), shape),
            ));
        }
        dtype.round_slice(&mut data);
        Ok(Tensor::build(Arc::new(data), shape.to_vec(), dtype, false, None))
    }

    /// Creates a leaf that accumulates gradients.
    pub fn parameter(mut data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "parameter",
                format!("{} elements for shape {:?}", data.len(), shape),
            ));
        }
        dtype.round_slice(&mut data);
        Ok(Tensor::build(Arc::new(data), shape.to_vec(), dtype, true, None))
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::build(
            Arc::new(vec![dtype.round(value); n]),
            shape.to_vec(),
            dtype,
            false,
            None,
        )
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Tensor {
        Tensor::full(shape, 0.0, dtype)
    }

    pub fn ones(shape: &[usize], dtype: DType) -> Tensor {
        Tensor::full(shape, 1.0, dtype)
    }

    pub fn scalar(value: f64, dtype: DType) -> Tensor {
        Tensor::full(&[], value, dtype)
    }

    pub fn eye(n: usize, dtype: DType) -> Tensor {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Tensor::build(Arc::new(v), vec![n, n], dtype, false, None)
    }

    /// Result of a kernel: rounds to `dtype`, no graph.
    pub(crate) fn from_parts(mut data: Vec<f64>, shape: Vec<usize>, dtype: DType) -> Tensor {
        dtype.round_slice(&mut data);
        Tensor::build(Arc::new(data), shape, dtype, false, None)
    }

    /// Wraps an existing buffer without copying (already rounded).
    pub(crate) fn from_buffer(data: Buffer, shape: Vec<usize>, dtype: DType) -> Tensor {
        Tensor::build(data, shape, dtype, false, None)
    }

    pub(crate) fn with_node(
        data: Buffer,
        shape: Vec<usize>,
        dtype: DType,
        node: Option<Arc<Node>>,
    ) -> Tensor {
        let rg = node.is_some();
        Tensor::build(data, shape, dtype, rg, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    /// True for gradient-accumulating leaves and for outputs recorded in a graph.
    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// True when the tensor carries a graph node.
    pub fn has_node(&self) -> bool {
        self.inner.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Arc<Node>> {
        self.inner.node.as_ref()
    }

    /// Shared handle to the element buffer.
    pub fn data(&self) -> Buffer {
        self.inner.data.read().expect("tensor lock poisoned").clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let d = self.data();
        if d.len() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        Ok(d[0])
    }

    /// Same values, no graph, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::from_buffer(self.data(), self.shape().to_vec(), self.dtype())
    }

    /// Replaces the values of a leaf tensor (used by optimizers and
    /// finite-difference checks). Graphs that saved the old buffer keep it.
    pub fn set_data(&self, mut data: Vec<f64>) -> Result<()> {
        if self.has_node() {
            return Err(Error::shape("set_data", "cannot overwrite a non-leaf tensor"));
        }
        if data.len() != self.numel() {
            return Err(Error::shape(
                "set_data",
                format!("{} elements for shape {:?}", data.len(), self.shape()),
            ));
        }
        self.dtype().round_slice(&mut data);
        *self.inner.data.write().expect("tensor lock poisoned") = Arc::new(data);
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Overwrites the gradient buffer (gradient clipping).
    pub fn set_grad(&self, g: Option<Vec<f64>>) {
        let g = g.map(|mut v| {
            self.dtype().round_slice(&mut v);
            v
        });
        *self.inner.grad.lock().expect("grad lock poisoned") = g;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let dtype = self.dtype();
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a = dtype.round(*a + x);
                }
            }
            None => {
                let mut v = g.to_vec();
                dtype.round_slice(&mut v);
                *slot = Some(v);
            }
        }
    }

    /// Deep copy to a fresh constant tensor of another precision.
    pub fn to_dtype_detached(&self, dtype: DType) -> Tensor {
        Tensor::from_parts(self.to_vec(), self.shape().to_vec(), dtype)
    }
}
