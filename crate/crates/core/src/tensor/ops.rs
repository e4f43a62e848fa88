use std::f64::consts::TAU;
use std::sync::Arc;

use super::graph::{record, record_buffer, BackwardFn};
use super::shape::{broadcast_index, broadcast_shape, check_axis, reduce_to, strides};
use super::{DType, Tensor};
use crate::error::{Error, Result};

/// Whether value-domain checks (e.g. `ln` of a non-positive number) run.
pub(crate) fn checked() -> bool {
    cfg!(debug_assertions)
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    Atan2,
}

impl Bin {
    fn name(self) -> &'static str {
        match self {
            Bin::Add => "add",
            Bin::Sub => "sub",
            Bin::Mul => "mul",
            Bin::Div => "div",
            Bin::Atan2 => "atan2",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Bin::Add => a + b,
            Bin::Sub => a - b,
            Bin::Mul => a * b,
            Bin::Div => a / b,
            Bin::Atan2 => a.atan2(b),
        }
    }

    /// Partial derivatives with respect to both operands.
    #[inline]
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Bin::Add => (1.0, 1.0),
            Bin::Sub => (1.0, -1.0),
            Bin::Mul => (b, a),
            Bin::Div => (1.0 / b, -a / (b * b)),
            Bin::Atan2 => {
                let r2 = a * a + b * b;
                (b / r2, -a / r2)
            }
        }
    }

    fn needs_values(self) -> bool {
        !matches!(self, Bin::Add | Bin::Sub)
    }
}

fn binary(op: Bin, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let sa = a.shape().to_vec();
    let sb = b.shape().to_vec();
    let out_shape = broadcast_shape(&sa, &sb)?;
    let ad = a.data();
    let bd = b.data();
    let dtype = a.dtype().promote(b.dtype());
    let (map_a, map_b): (Option<Arc<Vec<usize>>>, Option<Arc<Vec<usize>>>) = if sa == sb {
        (None, None)
    } else {
        (
            (sa != out_shape).then(|| Arc::new(broadcast_index(&sa, &out_shape))),
            (sb != out_shape).then(|| Arc::new(broadcast_index(&sb, &out_shape))),
        )
    };
    let n: usize = out_shape.iter().product();
    let out: Vec<f64> = match (&map_a, &map_b) {
        (None, None) => ad.iter().zip(bd.iter()).map(|(&x, &y)| op.apply(x, y)).collect(),
        _ => (0..n)
            .map(|i| {
                let x = ad[map_a.as_ref().map_or(i, |m| m[i])];
                let y = bd[map_b.as_ref().map_or(i, |m| m[i])];
                op.apply(x, y)
            })
            .collect(),
    };
    let (dta, dtb) = (a.dtype(), b.dtype());
    Ok(record(op.name(), out, out_shape, dtype, &[a, b], move |needs| {
        let mut saved = Vec::new();
        if op.needs_values() {
            match op {
                Bin::Mul => {
                    if needs[1] {
                        saved.push((ad.clone(), dta));
                    }
                    if needs[0] {
                        saved.push((bd.clone(), dtb));
                    }
                }
                _ => {
                    saved.push((ad.clone(), dta));
                    saved.push((bd.clone(), dtb));
                }
            }
        }
        let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
            let a_at = |i: usize| ad[map_a.as_ref().map_or(i, |m| m[i])];
            let b_at = |i: usize| bd[map_b.as_ref().map_or(i, |m| m[i])];
            let mut ga_full = needs[0].then(|| vec![0.0; g.len()]);
            let mut gb_full = needs[1].then(|| vec![0.0; g.len()]);
            for (i, &gi) in g.iter().enumerate() {
                let (pa, pb) = if op.needs_values() {
                    op.partials(a_at(i), b_at(i))
                } else {
                    op.partials(0.0, 0.0)
                };
                if let Some(v) = ga_full.as_mut() {
                    v[i] = gi * pa;
                }
                if let Some(v) = gb_full.as_mut() {
                    v[i] = gi * pb;
                }
            }
            vec![
                ga_full.map(|v| reduce_to(&v, map_a.as_ref().map(|m| m.as_slice()), ad.len())),
                gb_full.map(|v| reduce_to(&v, map_b.as_ref().map(|m| m.as_slice()), bd.len())),
            ]
        });
        (saved, backward)
    }))
}

#[derive(Clone, Copy)]
enum Un {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    Softplus,
    Sigmoid,
    LeakyRelu(f64),
    WrapAngle,
    Floor,
    Scale(f64),
    Shift(f64),
}

impl Un {
    fn name(self) -> &'static str {
        match self {
            Un::Neg => "neg",
            Un::Exp => "exp",
            Un::Ln => "log",
            Un::Sin => "sin",
            Un::Cos => "cos",
            Un::Sqrt => "sqrt",
            Un::Softplus => "softplus",
            Un::Sigmoid => "sigmoid",
            Un::LeakyRelu(_) => "leaky_relu",
            Un::WrapAngle => "wrap_angle",
            Un::Floor => "floor",
            Un::Scale(_) => "mul_scalar",
            Un::Shift(_) => "add_scalar",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Un::Neg => -x,
            Un::Exp => x.exp(),
            Un::Ln => x.ln(),
            Un::Sin => x.sin(),
            Un::Cos => x.cos(),
            Un::Sqrt => x.sqrt(),
            Un::Softplus => softplus(x),
            Un::Sigmoid => sigmoid(x),
            Un::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Un::WrapAngle => wrap(x),
            Un::Floor => x.floor(),
            Un::Scale(c) => c * x,
            Un::Shift(c) => x + c,
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Un::Neg => -1.0,
            Un::Exp => y,
            Un::Ln => 1.0 / x,
            Un::Sin => x.cos(),
            Un::Cos => -x.sin(),
            Un::Sqrt => 0.5 / y,
            Un::Softplus => sigmoid(x),
            Un::Sigmoid => y * (1.0 - y),
            Un::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Un::WrapAngle => 1.0,
            Un::Floor => 0.0,
            Un::Scale(c) => c,
            Un::Shift(_) => 1.0,
        }
    }

    fn saves_input(self) -> bool {
        matches!(
            self,
            Un::Ln | Un::Sin | Un::Cos | Un::Softplus | Un::LeakyRelu(_)
        )
    }

    fn saves_output(self) -> bool {
        matches!(self, Un::Exp | Un::Sqrt | Un::Sigmoid)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reduces an angle to `[0, 2π)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x - TAU * (x / TAU).floor();
    if r >= TAU || r < 0.0 {
        0.0
    } else {
        r
    }
}

fn unary(op: Un, x: &Tensor) -> Tensor {
    let xd = x.data();
    let dtype = x.dtype();
    let out: Vec<f64> = xd.iter().map(|&v| op.apply(v)).collect();
    let mut out = Arc::new(out);
    if dtype == DType::Single {
        let v = Arc::get_mut(&mut out).expect("fresh buffer");
        dtype.round_slice(v);
        if matches!(op, Un::WrapAngle) {
            // Rounding can land exactly on 2π.
            for x in v.iter_mut() {
                if *x >= TAU {
                    *x = 0.0;
                }
            }
        }
    }
    let yd = out.clone();
    record_buffer(op.name(), out, x.shape().to_vec(), dtype, &[x], move |_| {
        let mut saved = Vec::new();
        if op.saves_input() {
            saved.push((xd.clone(), dtype));
        }
        if op.saves_output() {
            saved.push((yd.clone(), dtype));
        }
        let keep_x = op.saves_input();
        let keep_y = op.saves_output();
        let xd = keep_x.then_some(xd);
        let yd = keep_y.then_some(yd);
        let backward: BackwardFn = Box::new(move |g: &[f64], _| {
            let gx: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, &gi)| {
                    let xv = xd.as_ref().map_or(0.0, |d| d[i]);
                    let yv = yd.as_ref().map_or(0.0, |d| d[i]);
                    gi * op.deriv(xv, yv)
                })
                .collect();
            vec![Some(gx)]
        });
        (saved, backward)
    })
}

/// Reduction bookkeeping: for each input element, the flat index of the
/// output element it contributes to.
fn reduce_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut keep = shape.to_vec();
    for &ax in axes {
        check_axis(ax, shape.len())?;
        keep[ax] = 1;
    }
    let map = broadcast_index(&keep, shape);
    let squeezed: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    Ok((map, keep, squeezed))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Bin::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Bin::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Bin::Mul, self, other)
    }

    /// Elementwise division; a zero divisor is a domain error in checked mode.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if checked() && other.data().iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "zero divisor"));
        }
        binary(Bin::Div, self, other)
    }

    /// `atan2(self, other)`, i.e. the angle of the point `(other, self)`.
    pub fn atan2(&self, other: &Tensor) -> Result<Tensor> {
        binary(Bin::Atan2, self, other)
    }

    pub fn neg(&self) -> Tensor {
        unary(Un::Neg, self)
    }

    pub fn exp(&self) -> Tensor {
        unary(Un::Exp, self)
    }

    /// Natural logarithm; non-positive inputs are a domain error in checked mode.
    pub fn ln(&self) -> Result<Tensor> {
        if checked() {
            if let Some(v) = self.data().iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::domain("log", format!("non-positive argument {v}")));
            }
        }
        Ok(unary(Un::Ln, self))
    }

    pub fn sin(&self) -> Tensor {
        unary(Un::Sin, self)
    }

    pub fn cos(&self) -> Tensor {
        unary(Un::Cos, self)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(Un::Sqrt, self)
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&self) -> Tensor {
        unary(Un::Softplus, self)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(Un::Sigmoid, self)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(Un::LeakyRelu(slope), self)
    }

    /// Reduces angles to `[0, 2π)`; the gradient passes through unchanged.
    pub fn wrap_angle(&self) -> Tensor {
        unary(Un::WrapAngle, self)
    }

    /// Elementwise floor (zero gradient).
    pub fn floor(&self) -> Tensor {
        unary(Un::Floor, self)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        unary(Un::Scale(c), self)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(Un::Shift(c), self)
    }

    /// `cond != 0 ? a : b`, elementwise. `cond` must have the broadcast shape
    /// of `a` and `b`; it is never differentiated.
    pub fn where_(cond: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        if cond.shape() != out_shape.as_slice() {
            return Err(Error::shape(
                "where",
                format!("condition {:?} vs {:?}", cond.shape(), out_shape),
            ));
        }
        let cd = cond.data();
        let mask: Arc<Vec<bool>> = Arc::new(cd.iter().map(|&c| c != 0.0).collect());
        let ad = a.data();
        let bd = b.data();
        let la = ad.len();
        let lb = bd.len();
        let map_a = (a.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_index(a.shape(), &out_shape)));
        let map_b = (b.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_index(b.shape(), &out_shape)));
        let out: Vec<f64> = mask
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c {
                    ad[map_a.as_ref().map_or(i, |m| m[i])]
                } else {
                    bd[map_b.as_ref().map_or(i, |m| m[i])]
                }
            })
            .collect();
        let dtype = a.dtype().promote(b.dtype());
        Ok(record("where", out, out_shape, dtype, &[a, b], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
                let ga = needs[0].then(|| {
                    let v: Vec<f64> = g
                        .iter()
                        .zip(mask.iter())
                        .map(|(&x, &c)| if c { x } else { 0.0 })
                        .collect();
                    reduce_to(&v, map_a.as_ref().map(|m| m.as_slice()), la)
                });
                let gb = needs[1].then(|| {
                    let v: Vec<f64> = g
                        .iter()
                        .zip(mask.iter())
                        .map(|(&x, &c)| if c { 0.0 } else { x })
                        .collect();
                    reduce_to(&v, map_b.as_ref().map(|m| m.as_slice()), lb)
                });
                vec![ga, gb]
            });
            (Vec::new(), backward)
        }))
    }

    /// Sum over `axes`; with `keepdim` the reduced axes stay as extent 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.reduce("sum", axes, keepdim, 1.0)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        if count == 0 {
            return Err(Error::Empty("mean"));
        }
        self.reduce("mean", axes, keepdim, 1.0 / count as f64)
    }

    /// Sum of all elements (scalar).
    pub fn sum(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.reduce("sum", &axes, false, 1.0).expect("all axes valid")
    }

    /// Mean of all elements (scalar).
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::Empty("mean"));
        }
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.reduce("mean", &axes, false, 1.0 / self.numel() as f64)
    }

    fn reduce(&self, op: &'static str, axes: &[usize], keepdim: bool, scale: f64) -> Result<Tensor> {
        let (map, keep, squeezed) = reduce_map(self.shape(), axes)?;
        let out_len: usize = keep.iter().product();
        let xd = self.data();
        let mut out = vec![0.0; out_len];
        for (&o, &x) in map.iter().zip(xd.iter()) {
            out[o] += x;
        }
        if scale != 1.0 {
            for v in &mut out {
                *v *= scale;
            }
        }
        let shape = if keepdim { keep } else { squeezed };
        Ok(record(op, out, shape, self.dtype(), &[self], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], _| {
                vec![Some(map.iter().map(|&o| g[o] * scale).collect())]
            });
            (Vec::new(), backward)
        }))
    }

    /// Inclusive cumulative sum along `axis`.
    pub fn cumsum(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let (outer, ext, inner) = super::shape::split_at_axis(self.shape(), axis);
        let xd = self.data();
        let mut out = xd.as_ref().clone();
        for o in 0..outer {
            for j in 1..ext {
                for i in 0..inner {
                    let cur = (o * ext + j) * inner + i;
                    out[cur] += out[cur - inner];
                }
            }
        }
        Ok(record("cumsum", out, self.shape().to_vec(), self.dtype(), &[self], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], _| {
                let mut gx = g.to_vec();
                for o in 0..outer {
                    for j in (0..ext.saturating_sub(1)).rev() {
                        for i in 0..inner {
                            let cur = (o * ext + j) * inner + i;
                            gx[cur] += gx[cur + inner];
                        }
                    }
                }
                vec![Some(gx)]
            });
            (Vec::new(), backward)
        }))
    }

    /// Same elements, new shape (shares the buffer).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(record_buffer("reshape", self.data(), shape.to_vec(), self.dtype(), &[self], |_| {
            let backward: BackwardFn = Box::new(|g: &[f64], _| vec![Some(g.to_vec())]);
            (Vec::new(), backward)
        }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::shape("permute", format!("{perm:?} for rank {rank}")));
        }
        for &p in perm {
            check_axis(p, rank)?;
            if seen[p] {
                return Err(Error::shape("permute", format!("repeated axis in {perm:?}")));
            }
            seen[p] = true;
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        for _ in 0..n {
            let src: usize = (0..rank).map(|d| counter[d] * in_strides[perm[d]]).sum();
            map.push(src);
            for d in (0..rank).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        Ok(self.take("permute", map, out_shape))
    }

    /// Converts to another precision; the gradient passes through.
    pub fn cast(&self, dtype: DType) -> Tensor {
        let mut out = self.to_vec();
        dtype.round_slice(&mut out);
        record("cast", out, self.shape().to_vec(), dtype, &[self], |_| {
            let backward: BackwardFn = Box::new(|g: &[f64], _| vec![Some(g.to_vec())]);
            (Vec::new(), backward)
        })
    }

    /// Generic gather by flat source index: `out[i] = self[map[i]]`.
    /// Backward scatters (adds) into the source positions.
    pub(crate) fn take(&self, op: &'static str, map: Vec<usize>, shape: Vec<usize>) -> Tensor {
        let xd = self.data();
        let out: Vec<f64> = map.iter().map(|&i| xd[i]).collect();
        let n_in = xd.len();
        record(op, out, shape, self.dtype(), &[self], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], _| {
                let mut gx = vec![0.0; n_in];
                for (&i, &x) in map.iter().zip(g) {
                    gx[i] += x;
                }
                vec![Some(gx)]
            });
            (Vec::new(), backward)
        })
    }
}
