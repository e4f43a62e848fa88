//! Gauge-equivariant normalizing flow on U(1) link fields.

mod coupling;
mod masks;
mod prior;
mod spline;

#[cfg(test)]
mod tests;

pub use coupling::{CouplingLayer, FEATURE_CHANNELS};
pub use masks::{LayerMask, MaskSet, CYCLE};
pub use prior::Prior;
pub use spline::{spline_channels, CircularSpline, MIN_BIN, MIN_DERIV};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauge::LinkField;
use crate::nn::ParamRegistry;
use crate::tensor::{DType, Tensor};

/// A trainable bijection with a tractable density, as seen by the losses.
pub trait Flow {
    type Field: Clone;

    fn dtype(&self) -> DType;

    fn parameters(&self) -> &ParamRegistry;

    /// Prior draw and its log density, both without graph.
    fn sample_prior(&self, batch: usize, rng: &mut dyn RngCore) -> Result<(Self::Field, Tensor)>;

    /// `(φ, log q(φ))` for prior samples `z`.
    fn forward(&self, z: &Self::Field, log_prob_z: &Tensor) -> Result<(Self::Field, Tensor)>;

    /// `(z', log q(φ))` computed from `φ` alone.
    fn reverse(&self, phi: &Self::Field) -> Result<(Self::Field, Tensor)>;
}

/// Architecture of a [`FlowModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowShape {
    pub l: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub knots: usize,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub shape: FlowShape,
    pub prior: Prior,
    pub layers: Vec<CouplingLayer>,
    dtype: DType,
    params: ParamRegistry,
}

impl FlowModel {
    pub fn new(shape: FlowShape, dtype: DType, rng: &mut dyn RngCore) -> Result<Self> {
        if shape.knots == 0 || shape.hidden == 0 {
            return Err(Error::Config("knots and hidden channels must be positive".into()));
        }
        let masks = MaskSet::new(shape.l, shape.n_layers)?;
        let layers = masks
            .layers
            .into_iter()
            .map(|m| CouplingLayer::new(m, shape.hidden, shape.knots, dtype, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut params = ParamRegistry::new();
        for (i, layer) in layers.iter().enumerate() {
            layer.register(&format!("layer{i}"), &mut params)?;
        }
        Ok(FlowModel {
            shape,
            prior: Prior::new(shape.l),
            layers,
            dtype,
            params,
        })
    }

    pub fn l(&self) -> usize {
        self.shape.l
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Independent copy with freshly allocated parameters of equal value.
    pub fn frozen_copy(&self) -> Result<FlowModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let copy = FlowModel::new(self.shape, self.dtype, &mut rng)?;
        copy.params.set_flat_values(&self.params.flat_values())?;
        Ok(copy)
    }

    fn check(&self, u: &LinkField) -> Result<()> {
        if u.l() != self.shape.l {
            return Err(Error::shape("flow", format!("lattice {} for a model of size {}", u.l(), self.shape.l)));
        }
        Ok(())
    }
}

impl Flow for FlowModel {
    type Field = LinkField;

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn parameters(&self) -> &ParamRegistry {
        &self.params
    }

    fn sample_prior(&self, batch: usize, rng: &mut dyn RngCore) -> Result<(LinkField, Tensor)> {
        self.prior.sample(batch, rng, self.dtype)
    }

    fn forward(&self, z: &LinkField, log_prob_z: &Tensor) -> Result<(LinkField, Tensor)> {
        self.check(z)?;
        let mut u = z.clone();
        let mut log_q = log_prob_z.clone();
        for layer in &self.layers {
            let (next, logj) = layer.forward(&u)?;
            log_q = log_q.sub(&logj)?;
            u = next;
        }
        Ok((u, log_q))
    }

    fn reverse(&self, phi: &LinkField) -> Result<(LinkField, Tensor)> {
        self.check(phi)?;
        let mut u = phi.clone();
        let mut acc: Option<Tensor> = None;
        for layer in self.layers.iter().rev() {
            let (prev, logj) = layer.inverse(&u)?;
            acc = Some(match acc {
                Some(a) => a.add(&logj)?,
                None => logj,
            });
            u = prev;
        }
        let base = self.prior.log_prob(&u);
        let log_q = match acc {
            Some(a) => base.add(&a)?,
            None => base,
        };
        Ok((u, log_q))
    }
}
