//! Gradient estimators for the reverse KL divergence, plus the free energy
//! and effective sample size diagnostics.
//!
//! Both losses estimate `F_q = E_q[log q − log p]` with `log p = −S`.
//! The reparameterization loss differentiates through the flow and the
//! action; the REINFORCE loss samples without graph, then rebuilds `log q`
//! from the generated configurations through the inverse flow and weights it
//! by the centred signal, so the action is never differentiated.

mod targets;
pub mod toy;

#[cfg(test)]
mod tests;

pub use targets::{FlowTarget, PriorTarget, Trap};

use std::fmt;
use std::str::FromStr;

use crate::dirac::SchwingerAction;
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::gauge::LinkField;
use crate::tensor::{no_grad, Tensor};

/// Unnormalized target `p ∝ exp(−S)`.
pub trait Action<F> {
    /// `S` per configuration, shape `[B]`.
    fn action(&self, field: &F) -> Result<Tensor>;
}

impl Action<LinkField> for SchwingerAction {
    fn action(&self, field: &LinkField) -> Result<Tensor> {
        SchwingerAction::action(self, field)
    }
}

impl<F, A: Action<F> + ?Sized> Action<F> for &A {
    fn action(&self, field: &F) -> Result<Tensor> {
        (**self).action(field)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Rt,
    Reinforce,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Rt => "rt",
            Estimator::Reinforce => "reinforce",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rt" => Ok(Estimator::Rt),
            "reinforce" => Ok(Estimator::Reinforce),
            other => Err(Error::Config(format!("unknown estimator `{other}` (expected rt or reinforce)"))),
        }
    }
}

/// Scalar loss with graph, and detached per-configuration densities.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: Tensor,
    pub log_q: Tensor,
    pub log_p: Tensor,
}

impl LossOutput {
    pub fn signal(&self) -> Vec<f64> {
        signal(&self.log_q, &self.log_p)
    }
}

fn signal(log_q: &Tensor, log_p: &Tensor) -> Vec<f64> {
    log_q.data().iter().zip(log_p.data().iter()).map(|(q, p)| q - p).collect()
}

/// `mean(log q − log p)` differentiated through flow and action.
pub fn grt_loss<F, A>(flow: &F, action: &A, z: &F::Field, log_prob_z: &Tensor) -> Result<LossOutput>
where
    F: Flow,
    A: Action<F::Field> + ?Sized,
{
    let (phi, log_q) = flow.forward(z, log_prob_z)?;
    let log_p = action.action(&phi)?.neg();
    let loss = log_q.sub(&log_p)?.mean()?;
    Ok(LossOutput {
        loss,
        log_q: log_q.detach(),
        log_p: log_p.detach(),
    })
}

/// Configurations, densities and signal produced without graph.
#[derive(Clone, Debug)]
pub struct Proposal<T> {
    pub phi: T,
    pub log_q: Tensor,
    pub log_p: Tensor,
}

impl<T> Proposal<T> {
    pub fn signal(&self) -> Vec<f64> {
        signal(&self.log_q, &self.log_p)
    }
}

/// Forward pass and action under disabled gradients.
pub fn propose<F, A>(flow: &F, action: &A, z: &F::Field, log_prob_z: &Tensor) -> Result<Proposal<F::Field>>
where
    F: Flow,
    A: Action<F::Field> + ?Sized,
{
    no_grad(|| {
        let (phi, log_q) = flow.forward(z, log_prob_z)?;
        let log_p = action.action(&phi)?.neg();
        Ok(Proposal { phi, log_q, log_p })
    })
}

/// Surrogate `mean(log q(φ) · (s − baseline))` with `log q(φ)` rebuilt
/// through the inverse flow. `norm` is the number of configurations the
/// mean runs over (the micro-batch size for a single batch).
pub fn reinforce_surrogate<F: Flow>(flow: &F, proposal: &Proposal<F::Field>, baseline: f64, norm: usize) -> Result<Tensor> {
    let (_, log_q) = flow.reverse(&proposal.phi)?;
    let centred: Vec<f64> = proposal.signal().iter().map(|s| s - baseline).collect();
    let n = centred.len();
    let weights = Tensor::from_vec(centred, &[n], log_q.dtype())?;
    Ok(log_q.mul(&weights)?.sum().mul_scalar(1.0 / norm as f64))
}

/// REINFORCE loss with the in-batch mean of the signal as baseline.
pub fn gre_loss<F, A>(flow: &F, action: &A, z: &F::Field, log_prob_z: &Tensor) -> Result<LossOutput>
where
    F: Flow,
    A: Action<F::Field> + ?Sized,
{
    let proposal = propose(flow, action, z, log_prob_z)?;
    let s = proposal.signal();
    let baseline = mean(&s)?;
    let loss = reinforce_surrogate(flow, &proposal, baseline, s.len())?;
    Ok(LossOutput {
        loss,
        log_q: proposal.log_q,
        log_p: proposal.log_p,
    })
}

pub fn loss<F, A>(est: Estimator, flow: &F, action: &A, z: &F::Field, log_prob_z: &Tensor) -> Result<LossOutput>
where
    F: Flow,
    A: Action<F::Field> + ?Sized,
{
    match est {
        Estimator::Rt => grt_loss(flow, action, z, log_prob_z),
        Estimator::Reinforce => gre_loss(flow, action, z, log_prob_z),
    }
}

/// Result of one gradient accumulation over all micro-batches.
#[derive(Clone, Debug, Default)]
pub struct Accumulated {
    /// Optimized loss value, summed over micro-batches after `1/n` scaling.
    pub loss: f64,
    pub log_q: Vec<f64>,
    pub log_p: Vec<f64>,
}

/// Accumulates the gradient of the selected loss over micro-batches into
/// the flow parameters (without zeroing them first). The result equals,
/// up to reduction order, the gradient for one batch of the combined size;
/// for REINFORCE the baseline is the mean signal over all micro-batches.
pub fn accumulate<F, A>(est: Estimator, flow: &F, action: &A, batches: &[(F::Field, Tensor)]) -> Result<Accumulated>
where
    F: Flow,
    A: Action<F::Field> + ?Sized,
{
    if batches.is_empty() {
        return Err(Error::Empty("micro-batches"));
    }
    let total: usize = batches.iter().map(|(_, lp)| lp.numel()).sum();
    let mut out = Accumulated::default();
    match est {
        Estimator::Rt => {
            for (z, lpz) in batches {
                let o = grt_loss(flow, action, z, lpz)?;
                let part = o.loss.mul_scalar(lpz.numel() as f64 / total as f64);
                out.loss += part.item()?;
                part.backward()?;
                out.log_q.extend(o.log_q.to_vec());
                out.log_p.extend(o.log_p.to_vec());
            }
        }
        Estimator::Reinforce => {
            let proposals = batches
                .iter()
                .map(|(z, lpz)| propose(flow, action, z, lpz))
                .collect::<Result<Vec<_>>>()?;
            let all: Vec<f64> = proposals.iter().flat_map(|p| p.signal()).collect();
            let baseline = mean(&all)?;
            for p in &proposals {
                let part = reinforce_surrogate(flow, p, baseline, total)?;
                out.loss += part.item()?;
                part.backward()?;
                out.log_q.extend(p.log_q.to_vec());
                out.log_p.extend(p.log_p.to_vec());
            }
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn check_pair(log_q: &[f64], log_p: &[f64]) -> Result<()> {
    if log_q.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if log_q.len() != log_p.len() {
        return Err(Error::shape("estimate", format!("{} log q values, {} log p values", log_q.len(), log_p.len())));
    }
    Ok(())
}

/// Mean and standard error of `log q − log p`.
pub fn free_energy_estimate(log_q: &[f64], log_p: &[f64]) -> Result<(f64, f64)> {
    check_pair(log_q, log_p)?;
    let s: Vec<f64> = log_q.iter().zip(log_p).map(|(q, p)| q - p).collect();
    let n = s.len() as f64;
    let m = mean(&s)?;
    if s.len() < 2 {
        return Ok((m, 0.0));
    }
    let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    Ok((m, (var / n).sqrt()))
}

/// `(Σ w)² / (N Σ w²)` with `w = exp(log p − log q)`.
pub fn ess(log_q: &[f64], log_p: &[f64]) -> Result<f64> {
    check_pair(log_q, log_p)?;
    let lw: Vec<f64> = log_p.iter().zip(log_q).map(|(p, q)| p - q).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(0.0);
    }
    let w: Vec<f64> = lw.iter().map(|x| (x - max).exp()).collect();
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    Ok((s1 * s1 / (w.len() as f64 * s2)).clamp(0.0, 1.0))
}
