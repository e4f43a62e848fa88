//! One-parameter Gaussian toy with closed-form expectations, used to check
//! the estimators statistically.

use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{gre_loss, grt_loss, Action};
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::nn::ParamRegistry;
use crate::tensor::{DType, Tensor};

/// `φ = e^a z` with `z ~ N(0, 1)^dim`.
#[derive(Clone, Debug)]
pub struct ScaleFlow {
    pub dim: usize,
    pub log_scale: Tensor,
    dtype: DType,
    params: ParamRegistry,
}

fn log_normal(z: &Tensor) -> Result<Tensor> {
    let d = z.shape()[1] as f64;
    Ok(z.mul(z)?.sum_axes(&[1], false)?.mul_scalar(-0.5).add_scalar(-0.5 * d * TAU.ln()))
}

impl ScaleFlow {
    pub fn new(dim: usize, log_scale: f64, dtype: DType) -> Result<Self> {
        let a = Tensor::parameter(vec![log_scale], &[1], dtype)?;
        let mut params = ParamRegistry::new();
        params.insert("scale.log".into(), a.clone())?;
        Ok(ScaleFlow { dim, log_scale: a, dtype, params })
    }
}

impl Flow for ScaleFlow {
    type Field = Tensor;

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn parameters(&self) -> &ParamRegistry {
        &self.params
    }

    fn sample_prior(&self, batch: usize, rng: &mut dyn RngCore) -> Result<(Tensor, Tensor)> {
        if batch == 0 {
            return Err(Error::Empty("prior sample batch"));
        }
        let v: Vec<f64> = (0..batch * self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let z = Tensor::from_vec(v, &[batch, self.dim], self.dtype)?;
        let lp = log_normal(&z)?;
        Ok((z, lp))
    }

    fn forward(&self, z: &Tensor, log_prob_z: &Tensor) -> Result<(Tensor, Tensor)> {
        let phi = z.mul(&self.log_scale.exp())?;
        let log_q = log_prob_z.sub(&self.log_scale.mul_scalar(self.dim as f64))?;
        Ok((phi, log_q))
    }

    fn reverse(&self, phi: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = phi.mul(&self.log_scale.neg().exp())?;
        let log_q = log_normal(&z)?.sub(&self.log_scale.mul_scalar(self.dim as f64))?;
        Ok((z, log_q))
    }
}

/// Unnormalized `N(0, σ²)^dim`: `S = Σ φ² / (2σ²)`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianTarget {
    pub sigma: f64,
}

impl Action<Tensor> for GaussianTarget {
    fn action(&self, phi: &Tensor) -> Result<Tensor> {
        Ok(phi.mul(phi)?.sum_axes(&[1], false)?.mul_scalar(0.5 / (self.sigma * self.sigma)))
    }
}

impl GaussianTarget {
    /// `d/da KL(q || p)` for `q = N(0, e^{2a})^dim`.
    pub fn exact_gradient(&self, dim: usize, log_scale: f64) -> f64 {
        dim as f64 * ((2.0 * log_scale).exp() / (self.sigma * self.sigma) - 1.0)
    }
}

/// Ratio of two sample means with a delta-method standard error; the
/// samples are paired.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub stderr: f64,
    pub mean_num: f64,
    pub mean_den: f64,
    pub samples: usize,
}

pub fn ratio_of_means(num: &[f64], den: &[f64]) -> Result<RatioEstimate> {
    if num.len() != den.len() || num.len() < 2 {
        return Err(Error::TooShort { got: num.len().min(den.len()), need: 2 });
    }
    let n = num.len() as f64;
    let mx = num.iter().sum::<f64>() / n;
    let my = den.iter().sum::<f64>() / n;
    let (mut vxx, mut vyy, mut vxy) = (0.0, 0.0, 0.0);
    for (x, y) in num.iter().zip(den) {
        vxx += (x - mx) * (x - mx);
        vyy += (y - my) * (y - my);
        vxy += (x - mx) * (y - my);
    }
    let (vxx, vyy, vxy) = (vxx / (n - 1.0), vyy / (n - 1.0), vxy / (n - 1.0));
    let r = mx / my;
    let var = (vxx - 2.0 * r * vxy + r * r * vyy) / (my * my * n);
    Ok(RatioEstimate {
        ratio: r,
        stderr: var.max(0.0).sqrt(),
        mean_num: mx,
        mean_den: my,
        samples: num.len(),
    })
}

/// Paired per-batch gradients of both estimators on the toy, and the ratio
/// `E[g_RE] / E[g_rt]` (expected `(N − 1)/N` for batch size `N`).
pub fn bias_ratio(
    flow: &ScaleFlow,
    target: &GaussianTarget,
    batch: usize,
    n_batches: usize,
    rng: &mut dyn RngCore,
) -> Result<RatioEstimate> {
    let mut g_re = Vec::with_capacity(n_batches);
    let mut g_rt = Vec::with_capacity(n_batches);
    let a = &flow.log_scale;
    for _ in 0..n_batches {
        let (z, lp) = flow.sample_prior(batch, rng)?;
        a.zero_grad();
        grt_loss(flow, target, &z, &lp)?.loss.backward()?;
        g_rt.push(a.grad().map_or(0.0, |g| g[0]));
        a.zero_grad();
        gre_loss(flow, target, &z, &lp)?.loss.backward()?;
        g_re.push(a.grad().map_or(0.0, |g| g[0]));
    }
    a.zero_grad();
    ratio_of_means(&g_re, &g_rt)
}
