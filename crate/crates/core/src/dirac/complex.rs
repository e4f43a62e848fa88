use num_complex::Complex64;

use super::{check_kappa, hop, hop_block};
use crate::error::{Error, Result};
use crate::gauge::LinkField;
use crate::par;

/// Dense complex `D[U]` for one configuration (angles `[2, L, L]`), row
/// index `2 s + alpha`.
pub fn complex_dirac(theta: &[f64], l: usize, kappa: f64) -> Vec<Complex64> {
    let v = l * l;
    let n = 2 * v;
    let mut d = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        d[i * n + i] = Complex64::new(1.0, 0.0);
    }
    for mu in 0..2 {
        let fwd = hop_block(mu, kappa, true);
        let bwd = hop_block(mu, kappa, false);
        for x0 in 0..l {
            for x1 in 0..l {
                let s = x0 * l + x1;
                let (y0, y1) = hop(l, x0, x1, mu);
                let t = y0 * l + y1;
                let u = Complex64::from_polar(1.0, theta[mu * v + s]);
                for a in 0..2 {
                    for b in 0..2 {
                        d[(2 * s + a) * n + 2 * t + b] += fwd[a][b] * u;
                        d[(2 * t + a) * n + 2 * s + b] += bwd[a][b] * u.conj();
                    }
                }
            }
        }
    }
    d
}

struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    parity: f64,
}

fn complex_lu(mut a: Vec<Complex64>, n: usize) -> Result<ComplexLu> {
    let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let thresh = 1e-14 * scale;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;
    for j in 0..n {
        let (p, best) = (j..n)
            .map(|i| (i, a[i * n + j].norm()))
            .fold((j, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(best > thresh) {
            return Err(Error::Singular { column: j, pivot: best });
        }
        if p != j {
            for c in 0..n {
                a.swap(j * n + c, p * n + c);
            }
            perm.swap(j, p);
            parity = -parity;
        }
        let inv = a[j * n + j].inv();
        for i in j + 1..n {
            let f = a[i * n + j] * inv;
            a[i * n + j] = f;
            if f.norm_sqr() != 0.0 {
                for c in j + 1..n {
                    let u = a[j * n + c];
                    a[i * n + c] -= f * u;
                }
            }
        }
    }
    Ok(ComplexLu { n, lu: a, perm, parity })
}

impl ComplexLu {
    /// (log|det|, arg det)
    fn log_det(&self) -> (f64, f64) {
        let mut logabs = 0.0;
        let mut arg = if self.parity < 0.0 { std::f64::consts::PI } else { 0.0 };
        for i in 0..self.n {
            let z = self.lu[i * self.n + i];
            logabs += z.norm().ln();
            arg += z.arg();
        }
        (logabs, arg)
    }

    /// Trace of the inverse: Σ_i (A^{-1})_{ii}, solving one column at a time.
    fn trace_inverse(&self) -> Complex64 {
        let n = self.n;
        let mut tr = Complex64::new(0.0, 0.0);
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for col in 0..n {
            // b = P e_col
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = if self.perm[i] == col { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            }
            for i in 0..n {
                let mut s = x[i];
                for k in 0..i {
                    s -= self.lu[i * n + k] * x[k];
                }
                x[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[i];
                for k in i + 1..n {
                    s -= self.lu[i * n + k] * x[k];
                }
                x[i] = s / self.lu[i * n + i];
            }
            tr += x[col];
        }
        tr
    }
}

/// Gradient-free observables of one configuration, computed in double.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FermionObservables {
    /// `Re (1/V) Tr D^{-1}`
    pub condensate: f64,
    /// `sign(Re det D)`, or 0 when `|Re det D|` is indistinguishable from 0.
    pub sign: f64,
    /// `log|det D|`
    pub log_abs_det: f64,
}

/// Condensate, determinant sign and log|det| for every configuration in `u`.
pub fn fermion_observables(u: &LinkField, kappa: f64) -> Result<Vec<FermionObservables>> {
    check_kappa(kappa)?;
    let l = u.l();
    let v = l * l;
    let data = u.theta().data();
    let out = par::map_range(u.batch(), |b| {
        let d = complex_dirac(&data[b * 2 * v..(b + 1) * 2 * v], l, kappa);
        let lu = complex_lu(d, 2 * v)?;
        let (log_abs_det, arg) = lu.log_det();
        let c = arg.cos();
        let sign = if c.abs() < 1e-10 { 0.0 } else { c.signum() };
        let condensate = lu.trace_inverse().re / v as f64;
        Ok(FermionObservables { condensate, sign, log_abs_det })
    });
    out.into_iter().collect()
}
