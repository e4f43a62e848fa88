use std::fmt;

use rand::Rng;

use super::config::RunConfig;
use super::train::{stream, STREAM_CHAIN, STREAM_INIT, STREAM_PRIOR};
use crate::dirac::SchwingerAction;
use crate::error::{Error, Result};
use crate::estimators::toy::{bias_ratio, GaussianTarget, RatioEstimate, ScaleFlow};
use crate::estimators::{gre_loss, grt_loss, FlowTarget, PriorTarget};
use crate::flow::{Flow, FlowModel};
use crate::tensor::DType;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Batch size of the bias-ratio toy.
pub const TOY_BATCH: usize = 4;
pub const TOY_LOG_SCALE: f64 = 0.3;
/// Parameters of the finite-difference model are drawn from `±RANDOM_SCALE`.
pub const RANDOM_SCALE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDifference {
    pub params: usize,
    /// `‖g − g_fd‖₂ / ‖g_fd‖₂`.
    pub rel_err_l2: f64,
    /// `max |g − g_fd| / max |g_fd|`.
    pub rel_err_max: f64,
}

impl FiniteDifference {
    pub fn pass(&self) -> bool {
        self.rel_err_l2 < FD_TOLERANCE && self.rel_err_max < FD_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasRatio {
    pub batch: usize,
    pub estimate: RatioEstimate,
    pub expected: f64,
}

impl BiasRatio {
    pub fn sigmas(&self) -> f64 {
        (self.estimate.ratio - self.expected).abs() / self.estimate.stderr
    }

    pub fn pass(&self) -> bool {
        self.sigmas() < 3.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroVariance {
    /// Largest REINFORCE gradient component for the identity model on the
    /// prior target.
    pub identity_max_grad: f64,
    /// Same for a random model on a target equal to its own density,
    /// relative to the largest reparameterization gradient there.
    pub self_target_rel_grad: f64,
}

impl ZeroVariance {
    pub fn pass(&self) -> bool {
        self.identity_max_grad == 0.0 && self.self_target_rel_grad < 1e-8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckGradReport {
    pub finite_difference: FiniteDifference,
    pub bias_ratio: BiasRatio,
    pub zero_variance: ZeroVariance,
}

impl CheckGradReport {
    pub fn pass(&self) -> bool {
        self.finite_difference.pass() && self.bias_ratio.pass() && self.zero_variance.pass()
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl fmt::Display for CheckGradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fd = &self.finite_difference;
        writeln!(
            f,
            "[{}] finite difference (rt loss, double, {} params): rel err L2 {:.3e}, max {:.3e} (tol {:e})",
            verdict(fd.pass()),
            fd.params,
            fd.rel_err_l2,
            fd.rel_err_max,
            FD_TOLERANCE
        )?;
        let b = &self.bias_ratio;
        writeln!(
            f,
            "[{}] bias ratio E[g_re]/E[g_rt] at N={}: {:.5} ± {:.5} vs {:.5} ({:.2} sigma, {} batches)",
            verdict(b.pass()),
            b.batch,
            b.estimate.ratio,
            b.estimate.stderr,
            b.expected,
            b.sigmas(),
            b.estimate.samples
        )?;
        let z = &self.zero_variance;
        write!(
            f,
            "[{}] zero variance at q = p: identity max |g| {:e}, self-target relative max |g| {:.3e}",
            verdict(z.pass()),
            z.identity_max_grad,
            z.self_target_rel_grad
        )
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn random_model(config: &RunConfig) -> Result<FlowModel> {
    let m = FlowModel::new(config.shape(), DType::Double, &mut stream(config.seed, STREAM_INIT))?;
    let mut rng = stream(config.seed ^ 0x5eed, STREAM_INIT);
    let v: Vec<f64> = (0..m.num_params()).map(|_| rng.random_range(-RANDOM_SCALE..RANDOM_SCALE)).collect();
    m.parameters().set_flat_values(&v)?;
    Ok(m)
}

/// Central differences of the reparameterization loss over every parameter
/// of a randomized double-precision model with the configured architecture.
pub fn finite_difference(config: &RunConfig) -> Result<FiniteDifference> {
    let m = random_model(config)?;
    let action = SchwingerAction::new(config.beta, config.kappa)?;
    let (z, lp) = m.sample_prior(config.batch_size.min(4), &mut stream(config.seed, STREAM_PRIOR))?;
    let params = m.parameters();
    params.zero_grad();
    grt_loss(&m, &action, &z, &lp)?.loss.backward()?;
    let g = params.flat_grads();
    params.zero_grad();
    let base = params.flat_values();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let eval = |dx: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += dx;
            params.set_flat_values(&v)?;
            grt_loss(&m, &action, &z, &lp)?.loss.item()
        };
        fd.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    params.set_flat_values(&base)?;
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(FiniteDifference {
        params: base.len(),
        rel_err_l2: norm(&diff) / norm(&fd),
        rel_err_max: max_abs(&diff) / max_abs(&fd),
    })
}

/// `E[g_RE] / E[g_rt]` on the Gaussian scale toy with batches of four.
pub fn bias_check(config: &RunConfig) -> Result<BiasRatio> {
    let flow = ScaleFlow::new(1, TOY_LOG_SCALE, DType::Double)?;
    let target = GaussianTarget { sigma: 1.0 };
    let mut rng = stream(config.seed, STREAM_CHAIN);
    let estimate = bias_ratio(&flow, &target, TOY_BATCH, config.mc_batches, &mut rng)?;
    Ok(BiasRatio {
        batch: TOY_BATCH,
        estimate,
        expected: (TOY_BATCH as f64 - 1.0) / TOY_BATCH as f64,
    })
}

pub fn zero_variance(config: &RunConfig) -> Result<ZeroVariance> {
    let mut rng = stream(config.seed, STREAM_PRIOR);
    let batch = config.batch_size.min(8);

    let identity = FlowModel::new(config.shape(), DType::Double, &mut stream(config.seed, STREAM_INIT))?;
    let (z, lp) = identity.sample_prior(batch, &mut rng)?;
    identity.parameters().zero_grad();
    gre_loss(&identity, &PriorTarget::new(config.l), &z, &lp)?.loss.backward()?;
    let identity_max_grad = max_abs(&identity.parameters().flat_grads());

    let m = random_model(config)?;
    let target = FlowTarget::new(&m)?;
    let (z, lp) = m.sample_prior(batch, &mut rng)?;
    let params = m.parameters();
    params.zero_grad();
    gre_loss(&m, &target, &z, &lp)?.loss.backward()?;
    let g_re = max_abs(&params.flat_grads());
    params.zero_grad();
    grt_loss(&m, &target, &z, &lp)?.loss.backward()?;
    let g_rt = max_abs(&params.flat_grads());
    params.zero_grad();
    if g_rt == 0.0 {
        return Err(Error::domain("zero_variance", "reference gradient vanished"));
    }
    Ok(ZeroVariance {
        identity_max_grad,
        self_target_rel_grad: g_re / g_rt,
    })
}

/// All three gradient checks; meant for small lattices and tiny networks.
pub fn check_grad(config: &RunConfig) -> Result<CheckGradReport> {
    config.validate()?;
    Ok(CheckGradReport {
        finite_difference: finite_difference(config)?,
        bias_ratio: bias_check(config)?,
        zero_variance: zero_variance(config)?,
    })
}
