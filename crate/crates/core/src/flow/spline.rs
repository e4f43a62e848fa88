//! Circular rational-quadratic splines on `[0, 2π)`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_BIN: f64 = 1.0 / 1024.0;
pub const MIN_DERIV: f64 = 1.0 / 1024.0;
const DERIV_SHIFT: f64 = 0.541_324_854_612_918_1;
const RANGE_TOL: f64 = 1e-4;

/// Per-element spline parameters; every tensor has shape `S + [K]` for an
/// element shape `S`. Derivatives are given at the left knot of each bin,
/// the one at `2π` being tied to the one at `0`.
#[derive(Clone, Debug)]
pub struct CircularSpline {
    pub knots: usize,
    pub x: Tensor,
    pub w: Tensor,
    pub y: Tensor,
    pub h: Tensor,
    pub d: Tensor,
    d_next: Tensor,
}

/// Number of raw channels per element for `K` bins.
pub fn spline_channels(knots: usize) -> usize {
    3 * knots - 1
}

fn normalized_bins(logits: &Tensor, axis: usize, knots: usize) -> Result<Tensor> {
    let data = logits.data();
    let max: Vec<f64> = data
        .chunks(knots)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut shape = logits.shape().to_vec();
    shape[axis] = 1;
    let max = Tensor::from_vec(max, &shape, logits.dtype())?;
    let e = logits.sub(&max)?.exp();
    let p = e.div(&e.sum_axes(&[axis], true)?)?;
    Ok(p.mul_scalar(TAU * (1.0 - knots as f64 * MIN_BIN)).add_scalar(TAU * MIN_BIN))
}

impl CircularSpline {
    /// Builds parameters from `3K − 1` raw channels on the last axis:
    /// `K − 1` width logits (the last width logit is pinned at zero),
    /// `K` height logits and `K` derivative logits. All-zero input gives
    /// the identity map.
    pub fn from_logits(raw: &Tensor, knots: usize) -> Result<Self> {
        if knots == 0 || raw.ndim() == 0 || raw.shape()[raw.ndim() - 1] != spline_channels(knots) {
            return Err(Error::shape(
                "spline",
                format!("{:?} does not end in {} channels", raw.shape(), spline_channels(knots.max(1))),
            ));
        }
        let ax = raw.ndim() - 1;
        let dtype = raw.dtype();
        let mut pin_shape = raw.shape().to_vec();
        pin_shape[ax] = 1;
        let pin = Tensor::zeros(&pin_shape, dtype);
        let wl = if knots > 1 {
            Tensor::concat(&[raw.slice(ax, 0, knots - 1)?, pin], ax)?
        } else {
            pin
        };
        let hl = raw.slice(ax, knots - 1, 2 * knots - 1)?;
        let dl = raw.slice(ax, 2 * knots - 1, 3 * knots - 1)?;

        let w = normalized_bins(&wl, ax, knots)?;
        let h = normalized_bins(&hl, ax, knots)?;
        let x = w.cumsum(ax)?.sub(&w)?;
        let y = h.cumsum(ax)?.sub(&h)?;
        let unit = Tensor::scalar(0.0, dtype).add_scalar(DERIV_SHIFT).softplus();
        let d = dl
            .add_scalar(DERIV_SHIFT)
            .softplus()
            .div(&unit)?
            .mul_scalar(1.0 - MIN_DERIV)
            .add_scalar(MIN_DERIV);
        let d_next = d.roll(-1, ax)?;
        Ok(CircularSpline { knots, x, w, y, h, d, d_next })
    }

    fn element_shape(&self) -> &[usize] {
        let s = self.x.shape();
        &s[..s.len() - 1]
    }

    fn check_input(&self, t: &Tensor, op: &'static str) -> Result<()> {
        if t.shape() != self.element_shape() {
            return Err(Error::shape(op, format!("input {:?} for parameters {:?}", t.shape(), self.x.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(-RANGE_TOL..TAU + RANGE_TOL).contains(*v)) {
            return Err(Error::domain(op, format!("angle {v} outside [0, 2π)")));
        }
        Ok(())
    }

    /// Bin of each element with respect to the left knots `edges`.
    fn bins(&self, t: &Tensor, edges: &Tensor) -> Vec<usize> {
        let k = self.knots;
        let e = edges.data();
        t.data()
            .iter()
            .zip(e.chunks(k))
            .map(|(&v, row)| row.partition_point(|&xk| xk <= v).clamp(1, k) - 1)
            .collect()
    }

    fn pick(&self, p: &Tensor, bins: &[usize]) -> Result<Tensor> {
        let mut ishape = p.shape().to_vec();
        let ax = ishape.len() - 1;
        ishape[ax] = 1;
        p.gather(ax, bins, &ishape)?.reshape(self.element_shape())
    }

    fn log_deriv(s: &Tensor, d0: &Tensor, d1: &Tensor, xi: &Tensor) -> Result<Tensor> {
        let xi1 = xi.neg().add_scalar(1.0);
        let num = s
            .add(&d1.sub(s)?.mul(&xi.mul(xi)?)?)?
            .add(&d0.sub(s)?.mul(&xi1.mul(&xi1)?)?)?;
        let den = Self::denominator(s, d0, d1, xi)?;
        s.ln()?.mul_scalar(2.0).add(&num.ln()?)?.sub(&den.ln()?.mul_scalar(2.0))
    }

    fn denominator(s: &Tensor, d0: &Tensor, d1: &Tensor, xi: &Tensor) -> Result<Tensor> {
        let t = xi.mul(&xi.neg().add_scalar(1.0))?;
        s.add(&d0.add(d1)?.sub(&s.mul_scalar(2.0))?.mul(&t)?)
    }

    /// Spline value and log-derivative for `theta` of the element shape.
    pub fn forward(&self, theta: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(theta, "spline_forward")?;
        let bins = self.bins(theta, &self.x);
        let xk = self.pick(&self.x, &bins)?;
        let wk = self.pick(&self.w, &bins)?;
        let yk = self.pick(&self.y, &bins)?;
        let hk = self.pick(&self.h, &bins)?;
        let d0 = self.pick(&self.d, &bins)?;
        let d1 = self.pick(&self.d_next, &bins)?;
        let s = hk.div(&wk)?;
        let xi = theta.sub(&xk)?.div(&wk)?;
        let t = xi.mul(&xi.neg().add_scalar(1.0))?;
        let num = s.mul(&xi)?.add(&d0.sub(&s)?.mul(&t)?)?;
        let den = Self::denominator(&s, &d0, &d1, &xi)?;
        let out = yk.add(&hk.mul(&num)?.div(&den)?)?;
        let logd = Self::log_deriv(&s, &d0, &d1, &xi)?;
        Ok((out, logd))
    }

    /// Exact inverse and its log-derivative (`−log_deriv` at the pre-image).
    pub fn inverse(&self, theta_out: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(theta_out, "spline_inverse")?;
        let bins = self.bins(theta_out, &self.y);
        let xk = self.pick(&self.x, &bins)?;
        let wk = self.pick(&self.w, &bins)?;
        let yk = self.pick(&self.y, &bins)?;
        let hk = self.pick(&self.h, &bins)?;
        let d0 = self.pick(&self.d, &bins)?;
        let d1 = self.pick(&self.d_next, &bins)?;
        let s = hk.div(&wk)?;
        let zeta = theta_out.sub(&yk)?.div(&hk)?;
        let c2 = d0.add(&d1)?.sub(&s.mul_scalar(2.0))?;
        let a = s.sub(&d0)?.add(&zeta.mul(&c2)?)?;
        let b = d0.sub(&zeta.mul(&c2)?)?;
        let sz = s.mul(&zeta)?;
        let disc = b.mul(&b)?.add(&a.mul(&sz)?.mul_scalar(4.0))?.leaky_relu(0.0);
        let xi = sz.mul_scalar(2.0).div(&b.add(&disc.sqrt())?)?;
        let out = xk.add(&wk.mul(&xi)?)?;
        let logd = Self::log_deriv(&s, &d0, &d1, &xi)?.neg();
        Ok((out, logd))
    }
}
