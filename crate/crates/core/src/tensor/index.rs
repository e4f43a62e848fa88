use std::sync::Arc;

use super::graph::{record, BackwardFn};
use super::shape::{check_axis, split_at_axis};
use super::{DType, Tensor};
use crate::error::{Error, Result};

fn axis_map(shape: &[usize], axis: usize, picks: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let (outer, ext, inner) = split_at_axis(shape, axis);
    let mut map = Vec::with_capacity(outer * picks.len() * inner);
    for o in 0..outer {
        for &p in picks {
            let base = (o * ext + p) * inner;
            map.extend(base..base + inner);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = picks.len();
    (map, out_shape)
}

impl Tensor {
    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let ext = self.shape()[axis];
        if start > end || end > ext {
            return Err(Error::IndexOutOfRange { index: end, extent: ext });
        }
        let picks: Vec<usize> = (start..end).collect();
        let (map, shape) = axis_map(self.shape(), axis, &picks);
        Ok(self.take("slice", map, shape))
    }

    /// One entry along `axis`; the axis is removed.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let ext = self.shape()[axis];
        if index >= ext {
            return Err(Error::IndexOutOfRange { index, extent: ext });
        }
        let (map, mut shape) = axis_map(self.shape(), axis, &[index]);
        shape.remove(axis);
        Ok(self.take("select", map, shape))
    }

    /// Entries `indices` (repeats allowed) along `axis`.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let ext = self.shape()[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= ext) {
            return Err(Error::IndexOutOfRange { index: bad, extent: ext });
        }
        let (map, shape) = axis_map(self.shape(), axis, indices);
        Ok(self.take("index_select", map, shape))
    }

    /// `out[.., i, ..] = self[.., index[.., i, ..], ..]` along `axis`, where
    /// `index` has the full output shape (same rank as `self`, equal extents
    /// on every other axis).
    pub fn gather(&self, axis: usize, index: &[usize], index_shape: &[usize]) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let shape = self.shape();
        if index_shape.len() != shape.len()
            || index_shape.iter().product::<usize>() != index.len()
            || (0..shape.len()).any(|d| d != axis && index_shape[d] != shape[d])
        {
            return Err(Error::shape(
                "gather",
                format!("index shape {index_shape:?} for {shape:?} along {axis}"),
            ));
        }
        let (_, ext, inner) = split_at_axis(shape, axis);
        let (_, iext, _) = split_at_axis(index_shape, axis);
        let mut map = Vec::with_capacity(index.len());
        for (flat, &ix) in index.iter().enumerate() {
            if ix >= ext {
                return Err(Error::IndexOutOfRange { index: ix, extent: ext });
            }
            let i = flat % inner;
            let o = flat / (inner * iext);
            map.push((o * ext + ix) * inner + i);
        }
        Ok(self.take("gather", map, index_shape.to_vec()))
    }

    /// Periodic shift along `axis`: `out[i] = self[(i - shift) mod n]`.
    pub fn roll(&self, shift: isize, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let n = self.shape()[axis] as isize;
        let picks: Vec<usize> = (0..n).map(|i| (i - shift).rem_euclid(n.max(1)) as usize).collect();
        let (map, shape) = axis_map(self.shape(), axis, &picks);
        Ok(self.take("roll", map, shape))
    }

    /// Copies `source` elements, in order, into the positions where `mask`
    /// is true. `mask` has the shape of `self`; `source` must hold at least
    /// as many elements as there are true entries.
    pub fn masked_scatter(&self, mask: &[bool], source: &Tensor) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(Error::shape(
                "masked_scatter",
                format!("mask of {} for {} elements", mask.len(), self.numel()),
            ));
        }
        let positions: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if positions.len() > source.numel() {
            return Err(Error::shape(
                "masked_scatter",
                format!("{} true entries but {} source elements", positions.len(), source.numel()),
            ));
        }
        let sd = source.data();
        let mut out = self.to_vec();
        for (k, &p) in positions.iter().enumerate() {
            out[p] = sd[k];
        }
        let n_src = sd.len();
        let dtype = self.dtype().promote(source.dtype());
        let positions = Arc::new(positions);
        Ok(record("masked_scatter", out, self.shape().to_vec(), dtype, &[self, source], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
                let gx = needs[0].then(|| {
                    let mut v = g.to_vec();
                    for &p in positions.iter() {
                        v[p] = 0.0;
                    }
                    v
                });
                let gs = needs[1].then(|| {
                    let mut v = vec![0.0; n_src];
                    for (k, &p) in positions.iter().enumerate() {
                        v[k] = g[p];
                    }
                    v
                });
                vec![gx, gs]
            });
            (Vec::new(), backward)
        }))
    }

    /// `out = self; out[.., indices[j], ..] += source[.., j, ..]` along `axis`.
    /// Duplicate indices accumulate.
    pub fn index_add(&self, axis: usize, indices: &[usize], source: &Tensor) -> Result<Tensor> {
        check_axis(axis, self.ndim())?;
        let ext = self.shape()[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= ext) {
            return Err(Error::IndexOutOfRange { index: bad, extent: ext });
        }
        let mut expect = self.shape().to_vec();
        expect[axis] = indices.len();
        if source.shape() != expect.as_slice() {
            return Err(Error::shape(
                "index_add",
                format!("source {:?}, expected {:?}", source.shape(), expect),
            ));
        }
        let (map, _) = axis_map(self.shape(), axis, indices);
        let sd = source.data();
        let mut out = self.to_vec();
        for (&m, &v) in map.iter().zip(sd.iter()) {
            out[m] += v;
        }
        let dtype = self.dtype().promote(source.dtype());
        Ok(record("index_add", out, self.shape().to_vec(), dtype, &[self, source], move |_| {
            let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
                let gx = needs[0].then(|| g.to_vec());
                let gs = needs[1].then(|| map.iter().map(|&m| g[m]).collect());
                vec![gx, gs]
            });
            (Vec::new(), backward)
        }))
    }

    /// Joins tensors along an existing axis.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or(Error::Empty("concat"))?;
        check_axis(axis, first.ndim())?;
        for t in tensors {
            let ok = t.ndim() == first.ndim()
                && (0..t.ndim()).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let exts: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let mut shape = first.shape().to_vec();
        shape[axis] = exts.iter().sum();
        join("concat", tensors, axis, &exts, shape)
    }

    /// Joins equally shaped tensors along a new axis.
    pub fn stack(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or(Error::Empty("stack"))?;
        if axis > first.ndim() {
            return Err(Error::InvalidAxis { axis, rank: first.ndim() + 1 });
        }
        if let Some(t) = tensors.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::shape(
                "stack",
                format!("{:?} vs {:?}", t.shape(), first.shape()),
            ));
        }
        let mut shape = first.shape().to_vec();
        shape.insert(axis, tensors.len());
        let exts = vec![1; tensors.len()];
        join("stack", tensors, axis, &exts, shape)
    }
}

/// Shared kernel of concat/stack: input `t` contributes `exts[t]` slabs
/// along `axis` of the output (inputs viewed as having that extent there).
fn join(
    op: &'static str,
    tensors: &[Tensor],
    axis: usize,
    exts: &[usize],
    shape: Vec<usize>,
) -> Result<Tensor> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total: usize = shape[axis];
    let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
    let mut out = vec![0.0; outer * total * inner];
    let mut offsets = Vec::with_capacity(tensors.len());
    let mut off = 0;
    for &e in exts {
        offsets.push(off);
        off += e;
    }
    for o in 0..outer {
        for (t, d) in datas.iter().enumerate() {
            let block = exts[t] * inner;
            let dst = (o * total + offsets[t]) * inner;
            out[dst..dst + block].copy_from_slice(&d[o * block..(o + 1) * block]);
        }
    }
    let dtype = tensors
        .iter()
        .map(|t| t.dtype())
        .fold(DType::Double, DType::promote);
    let exts = exts.to_vec();
    let refs: Vec<&Tensor> = tensors.iter().collect();
    Ok(record(op, out, shape, dtype, &refs, move |_| {
        let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
            (0..exts.len())
                .map(|t| {
                    needs[t].then(|| {
                        let block = exts[t] * inner;
                        let mut v = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let src = (o * total + offsets[t]) * inner;
                            v.extend_from_slice(&g[src..src + block]);
                        }
                        v
                    })
                })
                .collect()
        });
        (Vec::new(), backward)
    }))
}
