//! U(1) gauge fields on a periodic `L x L` lattice.
//!
//! Link angles are stored as `theta[b, mu, x0, x1]`. Site `x = (x0, x1)`
//! and `x + mu_hat` increments coordinate `mu` with periodic wrap.

mod io;

pub use io::{read_configs, write_configs, CONFIG_MAGIC};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Batch of link configurations, angles in `[0, 2π)`.
#[derive(Clone, Debug)]
pub struct LinkField {
    theta: Tensor,
    l: usize,
}

impl LinkField {
    /// Wraps `theta: [B, 2, L, L]` into `[0, 2π)` (differentiably).
    pub fn new(theta: &Tensor) -> Result<Self> {
        Self::check(theta)?;
        let l = theta.shape()[2];
        Ok(LinkField {
            theta: theta.wrap_angle(),
            l,
        })
    }

    /// Takes `theta` as is; the caller guarantees the angle range.
    pub fn from_canonical(theta: Tensor) -> Result<Self> {
        Self::check(&theta)?;
        let l = theta.shape()[2];
        Ok(LinkField { theta, l })
    }

    pub fn from_vec(values: Vec<f64>, batch: usize, l: usize, dtype: DType) -> Result<Self> {
        Self::new(&Tensor::from_vec(values, &[batch, 2, l, l], dtype)?)
    }

    fn check(theta: &Tensor) -> Result<()> {
        let s = theta.shape();
        if s.len() != 4 || s[1] != 2 || s[2] != s[3] || s[2] < 2 {
            return Err(Error::shape("LinkField", format!("expected [B, 2, L, L] with L >= 2, got {s:?}")));
        }
        Ok(())
    }

    pub fn theta(&self) -> &Tensor {
        &self.theta
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn batch(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn volume(&self) -> usize {
        self.l * self.l
    }

    pub fn dtype(&self) -> DType {
        self.theta.dtype()
    }

    /// `theta_mu` as `[B, L, L]`.
    pub fn link(&self, mu: usize) -> Result<Tensor> {
        self.theta.select(1, mu)
    }

    pub fn detach(&self) -> LinkField {
        LinkField {
            theta: self.theta.detach(),
            l: self.l,
        }
    }

    /// Detached copy in another precision.
    pub fn to_dtype(&self, dtype: DType) -> LinkField {
        let t = self.theta.to_dtype_detached(dtype).wrap_angle();
        LinkField { theta: t, l: self.l }
    }

    /// Configuration `b` as a batch of one (detached).
    pub fn element(&self, b: usize) -> Result<LinkField> {
        let t = self.theta.index_select(0, &[b])?.detach();
        Ok(LinkField { theta: t, l: self.l })
    }

    /// Cyclic lattice translation by `(s0, s1)` sites.
    pub fn translate(&self, s0: isize, s1: isize) -> Result<LinkField> {
        let t = self.theta.roll(s0, 2)?.roll(s1, 3)?;
        Ok(LinkField { theta: t, l: self.l })
    }
}

/// `f(x + mu_hat)` for a `[B, L, L]` field.
pub(crate) fn shift_plus(f: &Tensor, mu: usize) -> Result<Tensor> {
    f.roll(-1, mu + 1)
}

/// θ_P(x) = θ_1(x) + θ_0(x+1̂) − θ_1(x+0̂) − θ_0(x), not wrapped.
pub fn plaquettes_raw(u: &LinkField) -> Result<Tensor> {
    let t0 = u.link(0)?;
    let t1 = u.link(1)?;
    let a = t1.add(&shift_plus(&t0, 1)?)?;
    let b = shift_plus(&t1, 0)?.add(&t0)?;
    a.sub(&b)
}

/// Plaquette angles `[B, L, L]` in `[0, 2π)`.
pub fn plaquettes(u: &LinkField) -> Result<Tensor> {
    Ok(plaquettes_raw(u)?.wrap_angle())
}

/// Angles of the 2x1 (extended along direction 0) and 1x2 (along
/// direction 1) rectangles anchored at each site, in `[0, 2π)`.
pub fn wilson_loops_2x1(u: &LinkField) -> Result<(Tensor, Tensor)> {
    let p = plaquettes_raw(u)?;
    loops_from_plaquettes(&p)
}

pub(crate) fn loops_from_plaquettes(p: &Tensor) -> Result<(Tensor, Tensor)> {
    let r0 = p.add(&shift_plus(p, 0)?)?.wrap_angle();
    let r1 = p.add(&shift_plus(p, 1)?)?.wrap_angle();
    Ok((r0, r1))
}

/// −β Σ_x cos θ_P(x), per configuration.
pub fn gauge_action(u: &LinkField, beta: f64) -> Result<Tensor> {
    let p = plaquettes_raw(u)?;
    Ok(p.cos().sum_axes(&[1, 2], false)?.mul_scalar(-beta))
}

/// θ_μ(x) → θ_μ(x) + ω(x) − ω(x+μ̂) for `omega: [B, L, L]`.
pub fn gauge_transform(u: &LinkField, omega: &Tensor) -> Result<LinkField> {
    let expect = [u.batch(), u.l(), u.l()];
    if omega.shape() != expect {
        return Err(Error::shape("gauge_transform", format!("omega {:?}, expected {expect:?}", omega.shape())));
    }
    let mut parts = Vec::with_capacity(2);
    for mu in 0..2 {
        let d = omega.sub(&shift_plus(omega, mu)?)?;
        parts.push(u.link(mu)?.add(&d)?);
    }
    LinkField::new(&Tensor::stack(&parts, 1)?)
}
