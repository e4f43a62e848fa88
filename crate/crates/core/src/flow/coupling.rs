use rand::RngCore;

use super::masks::LayerMask;
use super::spline::{spline_channels, CircularSpline};
use crate::error::Result;
use crate::gauge::{plaquettes_raw, LinkField};
use crate::nn::{Conditioner, ParamRegistry};
use crate::tensor::{DType, Tensor};

pub const FEATURE_CHANNELS: usize = 6;

/// One gauge-equivariant plaquette coupling.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub mask: LayerMask,
    pub net: Conditioner,
    pub knots: usize,
}

fn mask_tensor(m: &[bool], l: usize, dtype: DType) -> Result<Tensor> {
    let v = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(v, &[l, l], dtype)
}

/// `θ(x + n0 0̂ + n1 1̂)` for a `[B, L, L]` field.
fn at(f: &Tensor, n0: isize, n1: isize) -> Result<Tensor> {
    f.roll(-n0, 1)?.roll(-n1, 2)
}

/// 2x1 and 1x2 rectangle angles summed link by link, so that each depends
/// only on its six perimeter links.
fn rectangles(u: &LinkField) -> Result<(Tensor, Tensor)> {
    let t0 = u.link(0)?;
    let t1 = u.link(1)?;
    let r0 = t1
        .add(&at(&t0, 0, 1)?)?
        .add(&at(&t0, 1, 1)?)?
        .sub(&at(&t1, 2, 0)?)?
        .sub(&at(&t0, 1, 0)?)?
        .sub(&t0)?;
    let r1 = t1
        .add(&at(&t1, 0, 1)?)?
        .add(&at(&t0, 0, 2)?)?
        .sub(&at(&t1, 1, 1)?)?
        .sub(&at(&t1, 1, 0)?)?
        .sub(&t0)?;
    Ok((r0.wrap_angle(), r1.wrap_angle()))
}

impl CouplingLayer {
    pub fn new(mask: LayerMask, hidden: usize, knots: usize, dtype: DType, rng: &mut dyn RngCore) -> Result<Self> {
        let net = Conditioner::new(FEATURE_CHANNELS, hidden, spline_channels(knots), dtype, rng)?;
        Ok(CouplingLayer { mask, net, knots })
    }

    pub fn register(&self, prefix: &str, reg: &mut ParamRegistry) -> Result<()> {
        self.net.register(prefix, reg)
    }

    /// `(cos, sin)` of the frozen plaquettes and rectangles, `[B, 6, L, L]`,
    /// together with the wrapped plaquette angles `[B, L, L]`.
    pub fn features(&self, u: &LinkField) -> Result<(Tensor, Tensor)> {
        let l = u.l();
        let dtype = u.dtype();
        let p = plaquettes_raw(u)?.wrap_angle();
        let (r0, r1) = rectangles(u)?;
        let m = &self.mask;
        let mut channels = Vec::with_capacity(FEATURE_CHANNELS);
        for (angle, frozen) in [(&p, &m.frozen_plaquettes), (&r0, &m.frozen_loops0), (&r1, &m.frozen_loops1)] {
            let mt = mask_tensor(frozen, l, dtype)?;
            channels.push(angle.cos().mul(&mt)?);
            channels.push(angle.sin().mul(&mt)?);
        }
        Ok((Tensor::stack(&channels, 1)?, p))
    }

    fn spline_for(&self, features: &Tensor) -> Result<CircularSpline> {
        let raw = self.net.forward(features)?;
        let s = raw.shape().to_vec();
        let raw = raw
            .reshape(&[s[0], s[1], s[2] * s[3]])?
            .index_select(2, &self.mask.sites)?
            .permute(&[0, 2, 1])?;
        CircularSpline::from_logits(&raw, self.knots)
    }

    fn apply(&self, u: &LinkField, inverse: bool) -> Result<(LinkField, Tensor)> {
        let (b, l) = (u.batch(), u.l());
        let (features, p) = self.features(u)?;
        let spline = self.spline_for(&features)?;
        let theta_p = p.reshape(&[b, l * l])?.index_select(1, &self.mask.sites)?;
        let (out, logd) = if inverse {
            spline.inverse(&theta_p)?
        } else {
            spline.forward(&theta_p)?
        };
        let delta = out.sub(&theta_p)?.mul_scalar(self.mask.sign);
        let theta = u
            .theta()
            .reshape(&[b, 2 * l * l])?
            .index_add(1, &self.mask.links, &delta)?
            .reshape(&[b, 2, l, l])?;
        Ok((LinkField::new(&theta)?, logd.sum_axes(&[1], false)?))
    }

    /// Transformed links and `log |det ∂U'/∂U|` per configuration.
    pub fn forward(&self, u: &LinkField) -> Result<(LinkField, Tensor)> {
        self.apply(u, false)
    }

    /// Inverse links and `log |det ∂U/∂U'|` per configuration.
    pub fn inverse(&self, u: &LinkField) -> Result<(LinkField, Tensor)> {
        self.apply(u, true)
    }
}
