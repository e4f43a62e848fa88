use std::cell::Cell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use super::{next_id, Buffer, DType, Tensor};
use crate::error::{Error, Result};

/// Maps the upstream gradient (shaped like the node output) to one optional
/// gradient per input. `needs[i]` tells whether input `i` wants a gradient;
/// entries for inputs that do not must be `None`.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) enum Edge {
    Node(Arc<Node>, DType),
    Leaf(Tensor),
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) op: &'static str,
    inputs: Vec<Option<Edge>>,
    backward: BackwardFn,
    saved: Vec<(Buffer, DType)>,
    elapsed_ns: AtomicU64,
}

impl Drop for Node {
    // Long chains would otherwise drop recursively and can exhaust the stack.
    fn drop(&mut self) {
        let mut stack: Vec<Arc<Node>> = Vec::new();
        for e in self.inputs.drain(..).flatten() {
            if let Edge::Node(n, _) = e {
                stack.push(n);
            }
        }
        while let Some(n) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(n) {
                for e in node.inputs.drain(..).flatten() {
                    if let Edge::Node(m, _) = e {
                        stack.push(m);
                    }
                }
            }
        }
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct ModeGuard(bool);

impl Drop for ModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Runs `body` with graph construction switched on or off for this thread.
/// Nesting is allowed; the innermost setting wins.
pub fn with_grad_mode<T>(enabled: bool, body: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _guard = ModeGuard(prev);
    body()
}

pub fn no_grad<T>(body: impl FnOnce() -> T) -> T {
    with_grad_mode(false, body)
}

fn edge_for(t: &Tensor) -> Option<Edge> {
    if let Some(n) = t.node() {
        Some(Edge::Node(n.clone(), t.dtype()))
    } else if t.requires_grad() {
        Some(Edge::Leaf(t.clone()))
    } else {
        None
    }
}

/// Records an operation result. `build` is only invoked when a node is
/// actually created; it receives the per-input "needs gradient" mask and
/// returns the buffers retained for the backward pass plus the backward
/// function itself.
pub(crate) fn record<F>(
    op: &'static str,
    data: Vec<f64>,
    shape: Vec<usize>,
    dtype: DType,
    inputs: &[&Tensor],
    build: F,
) -> Tensor
where
    F: FnOnce(&[bool]) -> (Vec<(Buffer, DType)>, BackwardFn),
{
    record_buffer(op, Arc::new(data), shape, dtype, inputs, build)
}

pub(crate) fn record_buffer<F>(
    op: &'static str,
    mut data: Buffer,
    shape: Vec<usize>,
    dtype: DType,
    inputs: &[&Tensor],
    build: F,
) -> Tensor
where
    F: FnOnce(&[bool]) -> (Vec<(Buffer, DType)>, BackwardFn),
{
    if dtype == DType::Single {
        if let Some(v) = Arc::get_mut(&mut data) {
            dtype.round_slice(v);
        }
    }
    if !is_grad_enabled() || !inputs.iter().any(|t| t.requires_grad()) {
        return Tensor::from_buffer(data, shape, dtype);
    }
    let edges: Vec<Option<Edge>> = inputs.iter().map(|t| edge_for(t)).collect();
    let needs: Vec<bool> = edges.iter().map(|e| e.is_some()).collect();
    let (saved, backward) = build(&needs);
    let node = Node {
        id: next_id(),
        op,
        inputs: edges,
        backward,
        saved,
        elapsed_ns: AtomicU64::new(0),
    };
    Tensor::with_node(data, shape, dtype, Some(Arc::new(node)))
}

/// Public entry point for operations defined outside this module.
///
/// `saved` lists the buffers the backward function keeps alive (used for
/// memory accounting only); `backward` follows the [`BackwardFn`] contract.
pub fn custom_op(
    op: &'static str,
    data: Vec<f64>,
    shape: &[usize],
    dtype: DType,
    inputs: &[&Tensor],
    saved: Vec<(Buffer, DType)>,
    backward: BackwardFn,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::shape(
            "custom_op",
            format!("{} elements for shape {:?}", data.len(), shape),
        ));
    }
    Ok(record(op, data, shape.to_vec(), dtype, inputs, move |_| {
        (saved, backward)
    }))
}

/// Nodes reachable from `root`, in topological order (root first).
fn topo_order(root: &Arc<Node>) -> Vec<Arc<Node>> {
    let mut post: Vec<Arc<Node>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Arc<Node>, usize)> = vec![(root.clone(), 0)];
    seen.insert(root.id);
    while let Some((node, child)) = stack.pop() {
        let mut next = child;
        let mut pushed = false;
        while next < node.inputs.len() {
            let idx = next;
            next += 1;
            if let Some(Edge::Node(c, _)) = &node.inputs[idx] {
                if seen.insert(c.id) {
                    let c = c.clone();
                    stack.push((node.clone(), next));
                    stack.push((c, 0));
                    pushed = true;
                    break;
                }
            }
        }
        if !pushed {
            post.push(node);
        }
    }
    post.reverse();
    post
}

fn add_into(acc: &mut [f64], g: &[f64], dtype: DType) {
    for (a, &x) in acc.iter_mut().zip(g) {
        *a = dtype.round(*a + x);
    }
}

impl Tensor {
    /// Accumulates d(self)/d(leaf) into every reachable leaf that requires
    /// gradients. Gradients sum across calls until [`Tensor::zero_grad`].
    /// The graph is retained, so [`Tensor::graph_stats`] reports per-op
    /// backward timings afterwards.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        let Some(root) = self.node() else {
            if self.requires_grad() {
                self.accumulate_grad(&[1.0]);
                return Ok(());
            }
            return Err(Error::Detached);
        };
        let order = topo_order(root);
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(root.id, vec![1.0]);
        for node in &order {
            let Some(g) = grads.remove(&node.id) else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|e| e.is_some()).collect();
            let start = Instant::now();
            let input_grads = (node.backward)(&g, &needs);
            node.elapsed_ns
                .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
            drop(g);
            for (edge, gi) in node.inputs.iter().zip(input_grads) {
                let (Some(edge), Some(mut gi)) = (edge, gi) else {
                    continue;
                };
                match edge {
                    Edge::Node(n, dtype) => {
                        dtype.round_slice(&mut gi);
                        match grads.get_mut(&n.id) {
                            Some(acc) => add_into(acc, &gi, *dtype),
                            None => {
                                grads.insert(n.id, gi);
                            }
                        }
                    }
                    Edge::Leaf(t) => t.accumulate_grad(&gi),
                }
            }
        }
        Ok(())
    }

    /// Size and cost summary of the graph rooted at this tensor.
    pub fn graph_stats(&self) -> Result<GraphStats> {
        let root = self.node().ok_or(Error::Detached)?;
        let order = topo_order(root);
        let mut per_op: BTreeMap<String, OpStats> = BTreeMap::new();
        let mut seen_buffers: HashSet<usize> = HashSet::new();
        let mut saved_count = 0;
        let mut saved_bytes = 0;
        for node in &order {
            let e = per_op.entry(node.op.to_string()).or_default();
            e.calls += 1;
            e.backward_seconds += node.elapsed_ns.load(Ordering::Relaxed) as f64 * 1e-9;
            for (buf, dtype) in &node.saved {
                if seen_buffers.insert(Arc::as_ptr(buf) as usize) {
                    saved_count += 1;
                    saved_bytes += buf.len() * dtype.size_bytes();
                }
            }
        }
        Ok(GraphStats {
            node_count: order.len(),
            per_op,
            saved_tensor_count: saved_count,
            saved_tensor_bytes: saved_bytes,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpStats {
    pub calls: usize,
    /// Cumulative wall time spent in this op's backward function.
    pub backward_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphStats {
    pub node_count: usize,
    pub per_op: BTreeMap<String, OpStats>,
    /// Distinct buffers retained for the backward pass.
    pub saved_tensor_count: usize,
    pub saved_tensor_bytes: usize,
}

impl GraphStats {
    /// Ops sorted by cumulative backward time, largest first.
    pub fn top_ops(&self, k: usize) -> Vec<(String, OpStats)> {
        let mut v: Vec<(String, OpStats)> = self
            .per_op
            .iter()
            .map(|(n, s)| (n.clone(), s.clone()))
            .collect();
        v.sort_by(|a, b| {
            b.1.backward_seconds
                .partial_cmp(&a.1.backward_seconds)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        v.truncate(k);
        v
    }
}
