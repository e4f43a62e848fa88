use std::fmt;
use std::time::Instant;

use super::config::RunConfig;
use super::train::{stream, STREAM_INIT, STREAM_PRIOR};
use crate::dirac::SchwingerAction;
use crate::error::{Error, Result};
use crate::estimators::{loss, Estimator};
use crate::flow::{Flow, FlowModel};
use crate::tensor::OpStats;

pub const TOP_K: usize = 10;
/// Timed repetitions per measurement; the fastest is reported.
pub const REPEATS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEntry {
    pub estimator: Estimator,
    pub l: usize,
    pub batch: usize,
    pub node_count: usize,
    pub saved_tensor_count: usize,
    pub saved_tensor_bytes: usize,
    pub loss_seconds: f64,
    pub backward_seconds: f64,
    pub top_ops: Vec<(String, OpStats)>,
}

impl ProfileEntry {
    pub fn total_seconds(&self) -> f64 {
        self.loss_seconds + self.backward_seconds
    }
}

/// Least-squares fit `count = a L² + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    /// Largest `|residual| / count`.
    pub max_rel_residual: f64,
}

pub fn fit_quadratic(ls: &[usize], counts: &[usize]) -> Result<QuadraticFit> {
    if ls.len() != counts.len() || ls.len() < 2 {
        return Err(Error::TooShort { got: ls.len().min(counts.len()), need: 2 });
    }
    let x: Vec<f64> = ls.iter().map(|&l| (l * l) as f64).collect();
    let y: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("fit_quadratic", "lattice sizes are all equal"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let max_rel_residual = x.iter().zip(&y).map(|(xi, yi)| ((a * xi + b) - yi).abs() / yi).fold(0.0, f64::max);
    Ok(QuadraticFit { a, b, max_rel_residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub entries: Vec<ProfileEntry>,
}

impl ProfileReport {
    pub fn for_estimator(&self, est: Estimator) -> Vec<&ProfileEntry> {
        self.entries.iter().filter(|e| e.estimator == est).collect()
    }

    pub fn node_counts(&self, est: Estimator) -> (Vec<usize>, Vec<usize>) {
        self.for_estimator(est).iter().map(|e| (e.l, e.node_count)).unzip()
    }

    pub fn entry(&self, est: Estimator, l: usize) -> Option<&ProfileEntry> {
        self.entries.iter().find(|e| e.estimator == est && e.l == l)
    }
}

impl fmt::Display for ProfileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "[{} L={} batch={}]", e.estimator, e.l, e.batch)?;
            writeln!(f, "  node_count: {}", e.node_count)?;
            writeln!(f, "  saved_tensors: {}", e.saved_tensor_count)?;
            writeln!(f, "  saved_bytes: {}", e.saved_tensor_bytes)?;
            writeln!(f, "  loss_s: {:.6}", e.loss_seconds)?;
            writeln!(f, "  backward_s: {:.6}", e.backward_seconds)?;
            writeln!(f, "  top_backward_ops:")?;
            for (op, s) in &e.top_ops {
                writeln!(f, "    {op:<16} calls {:>7}  {:.3} ms", s.calls, s.backward_seconds * 1e3)?;
            }
        }
        for est in [Estimator::Reinforce, Estimator::Rt] {
            let (ls, counts) = self.node_counts(est);
            if let Ok(fit) = fit_quadratic(&ls, &counts) {
                writeln!(
                    f,
                    "[{est} node fit] count = {:.3} L^2 + {:.1}, max rel residual {:.2e}",
                    fit.a, fit.b, fit.max_rel_residual
                )?;
            }
        }
        Ok(())
    }
}

/// One loss evaluation and backward per estimator and configured lattice
/// size, with graph statistics taken from the last repetition.
pub fn profile(config: &RunConfig) -> Result<ProfileReport> {
    config.validate()?;
    let action = SchwingerAction::new(config.beta, config.kappa)?;
    let mut entries = Vec::new();
    for est in [Estimator::Reinforce, Estimator::Rt] {
        for &l in &config.profile_sizes {
            let mut shape = config.shape();
            shape.l = l;
            let model = FlowModel::new(shape, config.precision, &mut stream(config.seed, STREAM_INIT))?;
            let (z, lp) = model.sample_prior(config.profile_batch, &mut stream(config.seed, STREAM_PRIOR))?;
            let mut loss_seconds = f64::INFINITY;
            let mut backward_seconds = f64::INFINITY;
            let mut stats = None;
            for _ in 0..REPEATS {
                model.parameters().zero_grad();
                let t0 = Instant::now();
                let out = loss(est, &model, &action, &z, &lp)?;
                let t1 = Instant::now();
                out.loss.backward()?;
                let t2 = Instant::now();
                loss_seconds = loss_seconds.min((t1 - t0).as_secs_f64());
                backward_seconds = backward_seconds.min((t2 - t1).as_secs_f64());
                stats = Some(out.loss.graph_stats()?);
            }
            model.parameters().zero_grad();
            let stats = stats.expect("at least one repetition");
            entries.push(ProfileEntry {
                estimator: est,
                l,
                batch: config.profile_batch,
                node_count: stats.node_count,
                saved_tensor_count: stats.saved_tensor_count,
                saved_tensor_bytes: stats.saved_tensor_bytes,
                loss_seconds,
                backward_seconds,
                top_ops: stats.top_ops(TOP_K),
            });
        }
    }
    Ok(ProfileReport { entries })
}
