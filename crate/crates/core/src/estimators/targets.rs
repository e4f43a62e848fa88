use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::Action;
use crate::error::Result;
use crate::flow::{Flow, FlowModel, Prior};
use crate::gauge::LinkField;
use crate::tensor::{custom_op, BackwardFn, Tensor};

/// Target equal to the uniform prior: `S = −log q_pr`, constant.
#[derive(Clone, Copy, Debug)]
pub struct PriorTarget {
    pub prior: Prior,
}

impl PriorTarget {
    pub fn new(l: usize) -> Self {
        PriorTarget { prior: Prior::new(l) }
    }
}

impl Action<LinkField> for PriorTarget {
    fn action(&self, field: &LinkField) -> Result<Tensor> {
        Ok(self.prior.log_prob(field).neg())
    }
}

/// Target equal to the density of a fixed flow: `S = −log q(φ)`.
#[derive(Clone, Debug)]
pub struct FlowTarget {
    pub model: FlowModel,
}

impl FlowTarget {
    /// Freezes a parameter copy of `model`.
    pub fn new(model: &FlowModel) -> Result<Self> {
        Ok(FlowTarget { model: model.frozen_copy()? })
    }
}

impl Action<LinkField> for FlowTarget {
    fn action(&self, field: &LinkField) -> Result<Tensor> {
        Ok(self.model.reverse(field)?.1.neg())
    }
}

/// Wraps an action and counts how often its gradient is requested.
#[derive(Clone, Debug)]
pub struct Trap<A> {
    pub inner: A,
    calls: Arc<AtomicUsize>,
}

impl<A> Trap<A> {
    pub fn new(inner: A) -> Self {
        Trap {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn backward_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F, A: Action<F>> Action<F> for Trap<A> {
    fn action(&self, field: &F) -> Result<Tensor> {
        let s = self.inner.action(field)?;
        let calls = self.calls.clone();
        let backward: BackwardFn = Box::new(move |g: &[f64], _needs: &[bool]| {
            calls.fetch_add(1, Ordering::SeqCst);
            vec![Some(g.to_vec())]
        });
        custom_op("trap", s.to_vec(), s.shape(), s.dtype(), &[&s], Vec::new(), backward)
    }
}
