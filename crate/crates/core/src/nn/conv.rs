use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{custom_op, BackwardFn, DType, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3x3 convolution with periodic (circular) padding and dilation.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Conv2dLayer {
    /// Fan-in scaled uniform initialization (gain for a leaky ReLU).
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        dtype: DType,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let fan_in = (in_channels * TAPS) as f64;
        let bound = (6.0 / ((1.0 + 0.01f64.powi(2)) * fan_in)).sqrt();
        let bias_bound = 1.0 / fan_in.sqrt();
        let w: Vec<f64> = (0..out_channels * in_channels * TAPS)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..out_channels)
            .map(|_| rng.random_range(-bias_bound..bias_bound))
            .collect();
        Self::from_values(in_channels, out_channels, dilation, w, b, dtype)
    }

    /// All weights and biases zero.
    pub fn zeros(in_channels: usize, out_channels: usize, dilation: usize, dtype: DType) -> Result<Self> {
        Self::from_values(
            in_channels,
            out_channels,
            dilation,
            vec![0.0; out_channels * in_channels * TAPS],
            vec![0.0; out_channels],
            dtype,
        )
    }

    pub fn from_values(
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        dtype: DType,
    ) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::shape("conv2d", "dilation must be positive"));
        }
        Ok(Conv2dLayer {
            in_channels,
            out_channels,
            dilation,
            weight: Tensor::parameter(weight, &[out_channels, in_channels, KERNEL, KERNEL], dtype)?,
            bias: Tensor::parameter(bias, &[out_channels], dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_circular(x, &self.weight, &self.bias, self.dilation)
    }
}

/// Source pixel of tap `(ky, kx)` for output pixel `(y, x)`, periodic.
#[inline]
fn tap(y: usize, x: usize, ky: usize, kx: usize, d: usize, h: usize, w: usize) -> usize {
    let yy = (y + h * d + ky * d - d) % h;
    let xx = (x + w * d + kx * d - d) % w;
    yy * w + xx
}

/// Precomputed `[9, H*W]` table of source pixels for every tap.
fn tap_table(h: usize, w: usize, d: usize) -> Vec<usize> {
    let mut t = Vec::with_capacity(TAPS * h * w);
    for ky in 0..KERNEL {
        for kx in 0..KERNEL {
            for y in 0..h {
                for x in 0..w {
                    t.push(tap(y, x, ky, kx, d, h, w));
                }
            }
        }
    }
    t
}

/// Periodic 2D convolution of `x: [B, Cin, H, W]` with `weight: [Cout, Cin, 3, 3]`
/// and `bias: [Cout]`; the output has the input's spatial extents.
///
/// Implemented as im2col (with modular indexing, so any `H, W >= 1` works
/// even when the dilated kernel wraps around the torus) followed by one
/// matrix product per batch element.
pub fn conv2d_circular(x: &Tensor, weight: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL || ws[1] != xs[1] {
        return Err(Error::shape("conv2d", format!("input {xs:?}, weight {ws:?}")));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", bias.shape(), ws[0])));
    }
    if dilation == 0 {
        return Err(Error::shape("conv2d", "dilation must be positive"));
    }
    let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let cout = ws[0];
    let hw = h * w;
    let krows = cin * TAPS;
    let table = Arc::new(tap_table(h, w, dilation));
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();

    let mut col = vec![0.0; batch * krows * hw];
    par::for_each_chunk_mut(&mut col, krows * hw, |b, c| {
        let xb = &xd[b * cin * hw..(b + 1) * cin * hw];
        for ci in 0..cin {
            let src = &xb[ci * hw..(ci + 1) * hw];
            for t in 0..TAPS {
                let row = &mut c[(ci * TAPS + t) * hw..(ci * TAPS + t + 1) * hw];
                let idx = &table[t * hw..(t + 1) * hw];
                for (r, &i) in row.iter_mut().zip(idx) {
                    *r = src[i];
                }
            }
        }
    });
    let col = Arc::new(col);

    let mut out = vec![0.0; batch * cout * hw];
    par::for_each_chunk_mut(&mut out, cout * hw, |b, o| {
        for co in 0..cout {
            o[co * hw..(co + 1) * hw].fill(bd[co]);
        }
        crate::tensor::gemm_into(cout, krows, hw, &wd, &col[b * krows * hw..], o, 1.0);
    });

    let dtype = x.dtype().promote(weight.dtype()).promote(bias.dtype());
    let (dx_t, dw_t) = (x.dtype(), weight.dtype());
    let saved = vec![(col.clone(), dx_t), (wd.clone(), dw_t)];
    let n_x = xd.len();
    let backward: BackwardFn = Box::new(move |g: &[f64], needs: &[bool]| {
        let gx = needs[0].then(|| {
            let mut dcol = vec![0.0; batch * krows * hw];
            par::for_each_chunk_mut(&mut dcol, krows * hw, |b, c| {
                crate::tensor::gemm_tn_into(krows, cout, hw, &wd, &g[b * cout * hw..], c);
            });
            let mut gx = vec![0.0; n_x];
            par::for_each_chunk_mut(&mut gx, cin * hw, |b, gxb| {
                let cb = &dcol[b * krows * hw..(b + 1) * krows * hw];
                for ci in 0..cin {
                    let dst = &mut gxb[ci * hw..(ci + 1) * hw];
                    for t in 0..TAPS {
                        let row = &cb[(ci * TAPS + t) * hw..(ci * TAPS + t + 1) * hw];
                        let idx = &table[t * hw..(t + 1) * hw];
                        for (&r, &i) in row.iter().zip(idx) {
                            dst[i] += r;
                        }
                    }
                }
            });
            gx
        });
        let gw = needs[1].then(|| {
            // Per-batch partials summed in batch order for determinism.
            let parts = par::map_range(batch, |b| {
                let mut p = vec![0.0; cout * krows];
                crate::tensor::gemm_nt_into(cout, hw, krows, &g[b * cout * hw..], &col[b * krows * hw..], &mut p);
                p
            });
            let mut gw = vec![0.0; cout * krows];
            for p in parts {
                for (a, v) in gw.iter_mut().zip(p) {
                    *a += v;
                }
            }
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![0.0; cout];
            for b in 0..batch {
                for (co, acc) in gb.iter_mut().enumerate() {
                    let s = b * cout * hw + co * hw;
                    *acc += g[s..s + hw].iter().sum::<f64>();
                }
            }
            gb
        });
        vec![gx, gw, gb]
    });
    custom_op("conv2d", out, &[batch, cout, h, w], dtype, &[x, weight, bias], saved, backward)
}
