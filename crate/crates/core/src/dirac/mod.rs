//! Wilson-Dirac operator and fermionic quantities.
//!
//! The operator acts on `V = L^2` sites with two spinor components. On
//! the differentiable path each complex entry `a + ib` is embedded as the
//! real block `[[a, -b], [b, a]]`, giving a real `4V x 4V` matrix whose
//! determinant is `|det D|^2 = det(D^† D)`. Row (and column) index of
//! site `s = x0 * L + x1`, spinor `alpha` and part `c` (0 real, 1
//! imaginary) is `4 s + 2 alpha + c`.
//!
//! The hopping term follows
//!
//! ```text
//! D(y,x)^{ab} = δ(y,x) δ^{ab}
//!     - κ Σ_μ { [1 - σ^μ]^{ba} U_μ(y) δ(y + μ̂, x) + [1 + σ^μ]^{ba} U_μ(y - μ̂)^* δ(y - μ̂, x) }
//! ```
//!
//! with σ^0 = [[0, 1], [1, 0]], σ^1 = [[0, -i], [i, 0]] and periodic
//! boundaries. Note the transposed spinor indices on the projectors.

mod complex;

pub use complex::{complex_dirac, fermion_observables, FermionObservables};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gauge::{gauge_action, LinkField};
use crate::tensor::{DType, Tensor};

/// Row index of `(site, spinor, part)` in the real-block embedding.
pub fn row_index(site: usize, spin: usize, part: usize) -> usize {
    4 * site + 2 * spin + part
}

/// Neighbour of site `(x0, x1)` one step along `mu`.
pub(crate) fn hop(l: usize, x0: usize, x1: usize, mu: usize) -> (usize, usize) {
    if mu == 0 {
        ((x0 + 1) % l, x1)
    } else {
        (x0, (x1 + 1) % l)
    }
}

fn pauli(mu: usize) -> [[Complex64; 2]; 2] {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match mu {
        0 => [[z, one], [one, z]],
        _ => [[z, -i], [i, z]],
    }
}

/// `-κ [1 ∓ σ^μ]^T` as a complex 2x2 block indexed `[alpha][beta]`.
/// `forward` selects the minus sign.
pub(crate) fn hop_block(mu: usize, kappa: f64, forward: bool) -> [[Complex64; 2]; 2] {
    let s = pauli(mu);
    let sign = if forward { -1.0 } else { 1.0 };
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (a, row) in m.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let id = if a == b { 1.0 } else { 0.0 };
            // transpose: entry [a][b] uses σ[b][a]
            *v = -kappa * (Complex64::new(id, 0.0) + sign * s[b][a]);
        }
    }
    m
}

/// Constant `[2, 32]` matrix mapping `(cos θ, sin θ)` of one link to the
/// 16 real-block entries of its forward hop followed by the 16 of its
/// backward hop (each in row-major 4x4 order).
fn link_basis(mu: usize, kappa: f64) -> Vec<f64> {
    let mut out = vec![0.0; 64];
    for (k, forward) in [true, false].into_iter().enumerate() {
        let m = hop_block(mu, kappa, forward);
        // Forward hop carries e^{iθ}, backward e^{-iθ}.
        let phase_sign = if forward { 1.0 } else { -1.0 };
        for a in 0..2 {
            for b in 0..2 {
                // M e^{±iθ} = (Re M cos ∓ Im M sin) + i (±Re M sin + Im M cos)
                let (re, im) = (m[a][b].re, m[a][b].im);
                let real_cos = re;
                let real_sin = -phase_sign * im;
                let imag_cos = im;
                let imag_sin = phase_sign * re;
                // real block [[x, -y], [y, x]] at rows 2a.., cols 2b..
                let entries = [
                    (2 * a, 2 * b, real_cos, real_sin),
                    (2 * a, 2 * b + 1, -imag_cos, -imag_sin),
                    (2 * a + 1, 2 * b, imag_cos, imag_sin),
                    (2 * a + 1, 2 * b + 1, real_cos, real_sin),
                ];
                for (r, c, vc, vs) in entries {
                    let col = k * 16 + r * 4 + c;
                    out[col] = vc;
                    out[32 + col] = vs;
                }
            }
        }
    }
    out
}

/// Real-block Wilson-Dirac matrices for a batch of configurations.
#[derive(Clone, Debug)]
pub struct DiracRealBlock {
    /// `[B, 4V, 4V]`
    pub matrix: Tensor,
    pub kappa: f64,
    pub l: usize,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::domain("assemble_dirac", format!("kappa = {kappa} outside [0, 1)")));
    }
    Ok(())
}

/// Builds `D[U]` in the real-block embedding.
///
/// The differentiable path handles one link at a time with batched ops
/// (gather the angle, cos/sin, and a product with a constant basis), then
/// scatters all hopping blocks into the identity with one `index_add`.
pub fn assemble_dirac(u: &LinkField, kappa: f64) -> Result<DiracRealBlock> {
    check_kappa(kappa)?;
    let l = u.l();
    let v = l * l;
    let n = 4 * v;
    let batch = u.batch();
    let dtype = u.dtype();
    let flat = u.theta().reshape(&[batch, 2 * v])?;
    let bases = [
        Tensor::from_vec(link_basis(0, kappa), &[2, 32], dtype)?,
        Tensor::from_vec(link_basis(1, kappa), &[2, 32], dtype)?,
    ];
    let mut blocks = Vec::with_capacity(2 * v);
    let mut targets = Vec::with_capacity(2 * v * 32);
    for mu in 0..2 {
        for x0 in 0..l {
            for x1 in 0..l {
                let site = x0 * l + x1;
                let (y0, y1) = hop(l, x0, x1, mu);
                let next = y0 * l + y1;
                let theta = flat.select(1, mu * v + site)?;
                let cs = Tensor::stack(&[theta.cos(), theta.sin()], 1)?;
                blocks.push(cs.matmul(&bases[mu])?);
                // forward hop: row block `site`, column block `next`
                for (rs, cs_) in [(site, next), (next, site)] {
                    for r in 0..4 {
                        for c in 0..4 {
                            targets.push((4 * rs + r) * n + 4 * cs_ + c);
                        }
                    }
                }
            }
        }
    }
    let hops = Tensor::concat(&blocks, 1)?;
    let eye = Tensor::eye(n, dtype)
        .reshape(&[1, n * n])?
        .index_select(0, &vec![0; batch])?;
    let matrix = eye.index_add(1, &targets, &hops)?.reshape(&[batch, n, n])?;
    Ok(DiracRealBlock { matrix, kappa, l })
}

/// `log det(D^† D)` per configuration, as log|det| of the real-block matrix.
pub fn fermion_logdet(d: &DiracRealBlock) -> Result<Tensor> {
    d.matrix.logdet()
}

/// `S = -β Σ cos θ_P - log det(D^† D)`, per configuration.
pub fn schwinger_action(u: &LinkField, beta: f64, kappa: f64) -> Result<Tensor> {
    let gauge = gauge_action(u, beta)?;
    let d = assemble_dirac(u, kappa)?;
    gauge.sub(&fermion_logdet(&d)?)
}

/// The target density `P ∝ exp(-S)` of the two-flavour Schwinger model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchwingerAction {
    pub beta: f64,
    pub kappa: f64,
}

impl SchwingerAction {
    pub fn new(beta: f64, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(SchwingerAction { beta, kappa })
    }

    pub fn action(&self, u: &LinkField) -> Result<Tensor> {
        schwinger_action(u, self.beta, self.kappa)
    }
}

/// Real-block embedding of a dense complex `n x n` matrix.
pub fn real_block(entries: &[Complex64], n: usize, dtype: DType) -> Result<Tensor> {
    let mut out = vec![0.0; 4 * n * n];
    for i in 0..n {
        for j in 0..n {
            let z = entries[i * n + j];
            let (r, c) = (2 * i, 2 * j);
            out[r * 2 * n + c] = z.re;
            out[r * 2 * n + c + 1] = -z.im;
            out[(r + 1) * 2 * n + c] = z.im;
            out[(r + 1) * 2 * n + c + 1] = z.re;
        }
    }
    Tensor::from_vec(out, &[2 * n, 2 * n], dtype)
}
