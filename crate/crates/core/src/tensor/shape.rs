use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape(
                "broadcast",
                format!("{a:?} and {b:?} are not broadcastable"),
            ));
        };
    }
    Ok(out)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every element of `out_shape`, the flat index of the element of an
/// input with shape `in_shape` it reads under broadcasting.
pub(crate) fn broadcast_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let off = out_shape.len() - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0; out_shape.len()];
    for i in 0..in_shape.len() {
        eff[off + i] = if in_shape[i] == 1 { 0 } else { in_strides[i] };
    }
    let mut idx = vec![0usize; n];
    let mut counter = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for slot in idx.iter_mut() {
        *slot = cur;
        for d in (0..out_shape.len()).rev() {
            counter[d] += 1;
            cur += eff[d];
            if counter[d] < out_shape[d] {
                break;
            }
            cur -= eff[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Sums `g` (shaped like the broadcast output) back onto an input of
/// `in_len` elements through the index map produced by [`broadcast_index`].
pub(crate) fn reduce_to(g: &[f64], map: Option<&[usize]>, in_len: usize) -> Vec<f64> {
    match map {
        None => g.to_vec(),
        Some(m) => {
            let mut out = vec![0.0; in_len];
            for (&i, &x) in m.iter().zip(g) {
                out[i] += x;
            }
            out
        }
    }
}

pub(crate) fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::InvalidAxis { axis, rank })
    } else {
        Ok(())
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
