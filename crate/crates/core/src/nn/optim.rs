use crate::error::{Error, Result};

use super::registry::ParamRegistry;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamRegistry) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the accumulated gradients. Gradients are left in
    /// place; zero them separately with [`ParamRegistry::zero_grad`].
    pub fn step(&mut self, params: &ParamRegistry) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam", "registry does not match optimizer state"));
        }
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|(name, t)| t.grad().ok_or_else(|| Error::MissingGrad(name.to_string())))
            .collect::<Result<_>>()?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (t, g)) in params.tensors().zip(grads).enumerate() {
            let mut x = t.to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..x.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                x[i] -= lr * mh / (vh.sqrt() + eps);
            }
            t.set_data(x)?;
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients (missing gradients count as zero).
pub fn grad_norm(params: &ParamRegistry) -> f64 {
    params
        .tensors()
        .filter_map(|t| t.grad())
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(params: &ParamRegistry, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for t in params.tensors() {
            if let Some(g) = t.grad() {
                t.set_grad(Some(g.into_iter().map(|x| x * s).collect()));
            }
        }
    }
    norm
}
