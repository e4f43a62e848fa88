//! Metropolized independent sampling with a flow proposal, and chain
//! statistics.


use std::io::Write;

use rand::{Rng, RngCore};

use crate::dirac::fermion_observables;
use crate::error::{Error, Result};
use crate::estimators::{propose, Action};
use crate::flow::Flow;
use crate::gauge::LinkField;
use crate::tensor::{DType, Tensor};

/// Batched configurations that can be split into single elements.
pub trait Configs: Clone {
    fn batch(&self) -> usize;
    fn element(&self, i: usize) -> Result<Self>;
}

impl Configs for LinkField {
    fn batch(&self) -> usize {
        LinkField::batch(self)
    }

    fn element(&self, i: usize) -> Result<Self> {
        LinkField::element(self, i)
    }
}

impl Configs for Tensor {
    fn batch(&self) -> usize {
        self.shape()[0]
    }

    fn element(&self, i: usize) -> Result<Self> {
        Ok(self.index_select(0, &[i])?.detach())
    }
}

/// Current configuration of a chain with its densities and observables.
#[derive(Clone, Debug)]
pub struct ChainState<T> {
    pub config: T,
    pub log_q: f64,
    pub log_p: f64,
    pub observables: [f64; 2],
}

/// `min(1, exp[(log p' − log q') − (log p − log q)])`; a NaN or `−∞`
/// proposal ratio gives 0.
pub fn acceptance_probability(current: (f64, f64), proposal: (f64, f64)) -> f64 {
    let delta = (proposal.1 - proposal.0) - (current.1 - current.0);
    if delta.is_nan() {
        return 0.0;
    }
    if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

/// One accept/reject step. With no current state the proposal is taken.
pub fn mis_step<T: Clone>(
    state: Option<ChainState<T>>,
    proposal: ChainState<T>,
    rng: &mut dyn RngCore,
) -> (ChainState<T>, bool) {
    let Some(cur) = state else {
        return (proposal, true);
    };
    let p = acceptance_probability((cur.log_q, cur.log_p), (proposal.log_q, proposal.log_p));
    let u: f64 = rng.random();
    if u < p {
        (proposal, true)
    } else {
        (cur, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub accepted: bool,
    pub log_q: f64,
    pub log_p: f64,
    pub condensate: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainRecord {
    pub steps: Vec<StepRecord>,
}

pub const CSV_HEADER: &str = "step,accepted,log_q,log_p,condensate,sigma";

impl ChainRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn accepted(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.accepted).collect()
    }

    pub fn condensate(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.condensate).collect()
    }

    pub fn acceptance_rate(&self) -> Result<f64> {
        acceptance_rate(&self.accepted())
    }

    pub fn bridges(&self, min_len: usize) -> Vec<(usize, usize)> {
        bridges(&self.accepted(), min_len)
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{:e},{:e},{:e},{}",
                u8::from(s.accepted),
                s.log_q,
                s.log_p,
                s.condensate,
                s.sigma
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Result<ChainSummary> {
        let acceptance = self.acceptance_rate()?;
        let tau_condensate = match integrated_autocorr(&self.condensate()) {
            Ok(t) => Some(t),
            Err(Error::TooShort { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(ChainSummary {
            steps: self.len(),
            acceptance,
            tau_condensate,
            bridges: self.bridges(DEFAULT_BRIDGE),
        })
    }
}

pub const DEFAULT_BRIDGE: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSummary {
    pub steps: usize,
    pub acceptance: f64,
    /// `(τ_int, window)` when the chain is long enough.
    pub tau_condensate: Option<(f64, usize)>,
    pub bridges: Vec<(usize, usize)>,
}

/// Two observables per configuration, for a batch.
pub type Observe<'a, T> = dyn Fn(&T) -> Result<Vec<[f64; 2]>> + 'a;

/// Condensate and determinant sign, computed in double precision.
pub fn fermion_observer(kappa: f64) -> impl Fn(&LinkField) -> Result<Vec<[f64; 2]>> {
    move |u: &LinkField| {
        let obs = fermion_observables(&u.to_dtype(DType::Double), kappa)?;
        Ok(obs.iter().map(|o| [o.condensate, o.sign]).collect())
    }
}

/// Runs `n_steps` of MIS, drawing proposals `proposal_batch` at a time
/// through the flow without graph. `on_step` sees the state after every
/// step.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_with<F, A>(
    flow: &F,
    action: &A,
    observe: &Observe<'_, F::Field>,
    n_steps: usize,
    proposal_batch: usize,
    rng: &mut dyn RngCore,
    mut on_step: impl FnMut(&ChainState<F::Field>, bool),
) -> Result<ChainRecord>
where
    F: Flow,
    F::Field: Configs,
    A: Action<F::Field> + ?Sized,
{
    if proposal_batch == 0 {
        return Err(Error::Config("proposal batch must be positive".into()));
    }
    let mut rec = ChainRecord { steps: Vec::with_capacity(n_steps) };
    let mut state: Option<ChainState<F::Field>> = None;
    while rec.len() < n_steps {
        let b = proposal_batch.min(n_steps - rec.len());
        let (z, lpz) = flow.sample_prior(b, rng)?;
        let prop = propose(flow, action, &z, &lpz)?;
        let obs = observe(&prop.phi)?;
        let lq = prop.log_q.to_vec();
        let lp = prop.log_p.to_vec();
        for i in 0..b {
            let candidate = ChainState {
                config: prop.phi.element(i)?,
                log_q: lq[i],
                log_p: lp[i],
                observables: obs[i],
            };
            let (next, accepted) = mis_step(state.take(), candidate, rng);
            rec.steps.push(StepRecord {
                accepted,
                log_q: next.log_q,
                log_p: next.log_p,
                condensate: next.observables[0],
                sigma: next.observables[1],
            });
            on_step(&next, accepted);
            state = Some(next);
        }
    }
    Ok(rec)
}

pub fn run_chain<F, A>(
    flow: &F,
    action: &A,
    observe: &Observe<'_, F::Field>,
    n_steps: usize,
    proposal_batch: usize,
    rng: &mut dyn RngCore,
) -> Result<ChainRecord>
where
    F: Flow,
    F::Field: Configs,
    A: Action<F::Field> + ?Sized,
{
    run_chain_with(flow, action, observe, n_steps, proposal_batch, rng, |_, _| {})
}

pub fn acceptance_rate(accepted: &[bool]) -> Result<f64> {
    if accepted.is_empty() {
        return Err(Error::Empty("chain record"));
    }
    Ok(accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64)
}

/// Maximal runs of consecutive rejections longer than `min_len`, as
/// `(first rejected step, length)`.
pub fn bridges(accepted: &[bool], min_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in accepted.iter().chain(std::iter::once(&true)).enumerate() {
        match (a, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                if i - s > min_len {
                    out.push((s, i - s));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub const MIN_SERIES: usize = 100;
pub const WINDOW_FACTOR: f64 = 6.0;

/// Integrated autocorrelation time `1/2 + Σ_{t=1}^{W} ρ(t)` with the
/// self-consistent window `W = min{t : t ≥ 6 τ(t)}`. A constant series
/// gives `(0.5, 0)`.
pub fn integrated_autocorr(series: &[f64]) -> Result<(f64, usize)> {
    let n = series.len();
    if n < MIN_SERIES {
        return Err(Error::TooShort { got: n, need: MIN_SERIES });
    }
    if series.iter().all(|&v| v == series[0]) {
        return Ok((0.5, 0));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let autocov = |t: usize| x[..n - t].iter().zip(&x[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    let mut tau = 0.5;
    for t in 1..n {
        tau += autocov(t) / c0;
        if t as f64 >= WINDOW_FACTOR * tau {
            return Ok((tau, t));
        }
    }
    Ok((tau, n - 1))
}
