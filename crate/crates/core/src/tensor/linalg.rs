use std::sync::Arc;

use super::graph::record;
use super::{Buffer, DType, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Relative pivot threshold: a pivot `p` is rejected when
/// `|p| <= tol * max|A|`.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-13;

const BLOCK: usize = 64;

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers, where
/// `op(A)` is `m x k` and `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    trans_a: bool,
    b: &[f64],
    ldb: usize,
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if trans_b { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: the caller passes buffers covering the strided extents above;
    // all index arithmetic stays within `a`, `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Row-pivoted LU factors `P A = L U` of a square matrix, packed in one
/// row-major buffer (unit lower triangle of `L` below the diagonal).
#[derive(Clone, Debug)]
pub struct LuFactors {
    pub n: usize,
    pub lu: Vec<f64>,
    /// `perm[i]` is the row of `A` that ended up in row `i`.
    pub perm: Vec<usize>,
    /// Sign of the permutation, ±1.
    pub parity: f64,
}

impl LuFactors {
    /// log|det A|.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|i| self.lu[i * self.n + i].abs().ln()).sum()
    }

    /// Sign of det A.
    pub fn sign(&self) -> f64 {
        let mut s = self.parity;
        for i in 0..self.n {
            if self.lu[i * self.n + i] < 0.0 {
                s = -s;
            }
        }
        s
    }
}

/// Blocked LU with partial pivoting.
pub fn lu_factor(a: &[f64], n: usize, tol: f64) -> Result<LuFactors> {
    if a.len() != n * n {
        return Err(Error::shape("lu_factor", format!("{} elements for {n}x{n}", a.len())));
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let thresh = tol * scale;
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;
    let mut j0 = 0;
    while j0 < n {
        let nb = BLOCK.min(n - j0);
        // Panel factorization of columns j0..j0+nb over rows j0..n.
        for j in j0..j0 + nb {
            let mut p = j;
            let mut best = lu[j * n + j].abs();
            for i in j + 1..n {
                let v = lu[i * n + j].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > thresh) {
                return Err(Error::Singular { column: j, pivot: best });
            }
            if p != j {
                for c in 0..n {
                    lu.swap(j * n + c, p * n + c);
                }
                perm.swap(j, p);
                parity = -parity;
            }
            let piv = lu[j * n + j];
            for i in j + 1..n {
                let l = lu[i * n + j] / piv;
                lu[i * n + j] = l;
                if l != 0.0 {
                    for c in j + 1..j0 + nb {
                        lu[i * n + c] -= l * lu[j * n + c];
                    }
                }
            }
        }
        let j1 = j0 + nb;
        if j1 < n {
            // U12 = L11^{-1} A12
            for i in j0..j1 {
                for r in j0..i {
                    let l = lu[i * n + r];
                    if l != 0.0 {
                        let (head, tail) = lu.split_at_mut(i * n);
                        let src = &head[r * n + j1..r * n + n];
                        let dst = &mut tail[j1..n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d -= l * s;
                        }
                    }
                }
            }
            // A22 -= L21 U12
            let (top, bottom) = lu.split_at_mut(j1 * n);
            let l21 = bottom.to_vec();
            gemm(
                n - j1,
                nb,
                n - j1,
                -1.0,
                &l21[j0..],
                n,
                false,
                &top[j0 * n + j1..],
                n,
                false,
                1.0,
                &mut bottom[j1..],
                n,
            );
        }
        j0 = j1;
    }
    Ok(LuFactors { n, lu, perm, parity })
}

/// Solves `L X = B` in place (`L` unit lower triangular from `f`), `B` is n x m.
fn solve_lower(f: &LuFactors, x: &mut [f64], m: usize) {
    let n = f.n;
    let lu = &f.lu;
    let mut i0 = 0;
    while i0 < n {
        let nb = BLOCK.min(n - i0);
        if i0 > 0 {
            let (done, rest) = x.split_at_mut(i0 * m);
            gemm(
                nb,
                i0,
                m,
                -1.0,
                &lu[i0 * n..],
                n,
                false,
                done,
                m,
                false,
                1.0,
                &mut rest[..nb * m],
                m,
            );
        }
        for i in i0..i0 + nb {
            for r in i0..i {
                let l = lu[i * n + r];
                if l != 0.0 {
                    let (head, tail) = x.split_at_mut(i * m);
                    for (d, s) in tail[..m].iter_mut().zip(&head[r * m..r * m + m]) {
                        *d -= l * s;
                    }
                }
            }
        }
        i0 += nb;
    }
}

/// Solves `U X = B` in place, `B` is n x m.
fn solve_upper(f: &LuFactors, x: &mut [f64], m: usize) {
    let n = f.n;
    let lu = &f.lu;
    let mut i1 = n;
    while i1 > 0 {
        let nb = BLOCK.min(i1);
        let i0 = i1 - nb;
        if i1 < n {
            let (head, done) = x.split_at_mut(i1 * m);
            gemm(
                nb,
                n - i1,
                m,
                -1.0,
                &lu[i0 * n + i1..],
                n,
                false,
                done,
                m,
                false,
                1.0,
                &mut head[i0 * m..],
                m,
            );
        }
        for i in (i0..i1).rev() {
            for r in i + 1..i1 {
                let u = lu[i * n + r];
                if u != 0.0 {
                    let (head, tail) = x.split_at_mut(r * m);
                    for (d, s) in head[i * m..i * m + m].iter_mut().zip(&tail[..m]) {
                        *d -= u * s;
                    }
                }
            }
            let d = 1.0 / lu[i * n + i];
            for v in &mut x[i * m..i * m + m] {
                *v *= d;
            }
        }
        i1 = i0;
    }
}

/// Explicit inverse from LU factors.
pub fn lu_inverse(f: &LuFactors) -> Vec<f64> {
    let n = f.n;
    let mut x = vec![0.0; n * n];
    for (i, &p) in f.perm.iter().enumerate() {
        x[i * n + p] = 1.0;
    }
    solve_lower(f, &mut x, n);
    solve_upper(f, &mut x, n);
    x
}

fn matrix_dims(a: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let s = a.shape();
    match s.len() {
        2 if s[0] == s[1] => Ok((1, s[0])),
        3 if s[1] == s[2] => Ok((s[0], s[1])),
        _ => Err(Error::shape(op, format!("expected square matrix or batch, got {s:?}"))),
    }
}

impl Tensor {
    /// log|det A| of a square matrix `[n, n]` (scalar result) or a batch
    /// `[B, n, n]` (result `[B]`), via pivoted LU. Backward: `g * A^{-T}`.
    pub fn logdet(&self) -> Result<Tensor> {
        self.logdet_with_tol(DEFAULT_PIVOT_TOL)
    }

    pub fn logdet_with_tol(&self, tol: f64) -> Result<Tensor> {
        let (batch, n) = matrix_dims(self, "logdet")?;
        let data = self.data();
        let factors: Vec<Result<LuFactors>> = par::map_range(batch, |b| {
            lu_factor(&data[b * n * n..(b + 1) * n * n], n, tol)
        });
        let factors: Arc<Vec<LuFactors>> = Arc::new(factors.into_iter().collect::<Result<_>>()?);
        let out: Vec<f64> = factors.iter().map(|f| f.log_abs_det()).collect();
        let shape = if self.ndim() == 2 { vec![] } else { vec![batch] };
        let dtype = self.dtype();
        Ok(record("logdet", out, shape, dtype, &[self], move |_| {
            let mut packed = Vec::with_capacity(batch * n * n);
            for f in factors.iter() {
                packed.extend_from_slice(&f.lu);
            }
            let saved: Vec<(Buffer, DType)> = vec![(Arc::new(packed), dtype)];
            let backward = Box::new(move |g: &[f64], _: &[bool]| {
                let blocks: Vec<Vec<f64>> = par::map_range(batch, |b| {
                    let inv = lu_inverse(&factors[b]);
                    let mut out = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            out[i * n + j] = g[b] * inv[j * n + i];
                        }
                    }
                    out
                });
                vec![Some(blocks.concat())]
            });
            (saved, backward)
        }))
    }

    /// Matrix product. Supports `[m,k]x[k,n]`, `[B,m,k]x[B,k,n]` and a
    /// rank-2 operand broadcast against a batched one.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let bad = || Error::shape("matmul", format!("{sa:?} x {sb:?}"));
        if !(2..=3).contains(&sa.len()) || !(2..=3).contains(&sb.len()) {
            return Err(bad());
        }
        let (ba, m, k) = if sa.len() == 3 { (sa[0], sa[1], sa[2]) } else { (1, sa[0], sa[1]) };
        let (bb, k2, n) = if sb.len() == 3 { (sb[0], sb[1], sb[2]) } else { (1, sb[0], sb[1]) };
        if k != k2 || (sa.len() == 3 && sb.len() == 3 && ba != bb) {
            return Err(bad());
        }
        let batch = ba.max(bb);
        let a_batched = sa.len() == 3;
        let b_batched = sb.len() == 3;
        let ad = self.data();
        let bd = other.data();
        let mut out = vec![0.0; batch * m * n];
        if !a_batched && b_batched {
            par::for_each_chunk_mut(&mut out, m * n, |i, c| {
                gemm(m, k, n, 1.0, &ad, k, false, &bd[i * k * n..], n, false, 0.0, c, n);
            });
        } else if a_batched && !b_batched {
            // One tall product.
            gemm(batch * m, k, n, 1.0, &ad, k, false, &bd, n, false, 0.0, &mut out, n);
        } else {
            par::for_each_chunk_mut(&mut out, m * n, |i, c| {
                gemm(m, k, n, 1.0, &ad[i * m * k..], k, false, &bd[i * k * n..], n, false, 0.0, c, n);
            });
        }
        let shape = if a_batched || b_batched { vec![batch, m, n] } else { vec![m, n] };
        let dtype = self.dtype().promote(other.dtype());
        let (da, db) = (self.dtype(), other.dtype());
        Ok(record("matmul", out, shape, dtype, &[self, other], move |needs| {
            let mut saved = Vec::new();
            if needs[1] {
                saved.push((ad.clone(), da));
            }
            if needs[0] {
                saved.push((bd.clone(), db));
            }
            let backward = Box::new(move |g: &[f64], needs: &[bool]| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; ad.len()];
                    if a_batched {
                        if b_batched {
                            par::for_each_chunk_mut(&mut ga, m * k, |i, c| {
                                gemm(m, n, k, 1.0, &g[i * m * n..], n, false, &bd[i * k * n..], n, true, 0.0, c, k);
                            });
                        } else {
                            gemm(batch * m, n, k, 1.0, g, n, false, &bd, n, true, 0.0, &mut ga, k);
                        }
                    } else {
                        for i in 0..batch {
                            let boff = if b_batched { i * k * n } else { 0 };
                            gemm(m, n, k, 1.0, &g[i * m * n..], n, false, &bd[boff..], n, true, 1.0, &mut ga, k);
                        }
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; bd.len()];
                    if b_batched {
                        par::for_each_chunk_mut(&mut gb, k * n, |i, c| {
                            let aoff = if a_batched { i * m * k } else { 0 };
                            gemm(k, m, n, 1.0, &ad[aoff..], k, true, &g[i * m * n..], n, false, 0.0, c, n);
                        });
                    } else if a_batched {
                        gemm(k, batch * m, n, 1.0, &ad, k, true, g, n, false, 0.0, &mut gb, n);
                    } else {
                        gemm(k, m, n, 1.0, &ad, k, true, g, n, false, 0.0, &mut gb, n);
                    }
                    gb
                });
                vec![ga, gb]
            });
            (saved, backward)
        }))
    }
}
