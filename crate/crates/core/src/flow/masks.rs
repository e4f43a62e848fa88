//! Link masking schedule.
//!
//! Layer `ℓ` updates links of direction `μ = 0` for `ℓ mod 8 < 4` and `μ = 1`
//! otherwise, with offset `k = ℓ mod 4`. Writing a site as `a` along `μ` and
//! `b` along the other direction, the active links are those with
//! `a ≡ k (mod 4)` on even `b` and `a ≡ k + 2 (mod 4)` on odd `b`. On a 2x2
//! lattice each layer updates the single link at `(a, b) = (k mod 2, k / 2)`.

use crate::error::{Error, Result};

pub const CYCLE: usize = 8;

/// Which links one coupling layer updates and which features it may read.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    pub l: usize,
    pub mu: usize,
    pub offset: usize,
    /// `[2, L, L]`, true on updated links.
    pub active: Vec<bool>,
    /// Flat sites `x0 * L + x1` of the active links, ascending.
    pub sites: Vec<usize>,
    /// Flat link indices `mu * L² + site`, matching `sites`.
    pub links: Vec<usize>,
    /// Coefficient of the active link `U_mu(x)` in the plaquette at `x`.
    pub sign: f64,
    /// `[L, L]` masks of the frozen plaquettes and 2x1 / 1x2 loops.
    pub frozen_plaquettes: Vec<bool>,
    pub frozen_loops0: Vec<bool>,
    pub frozen_loops1: Vec<bool>,
}

/// Integer coefficients of a closed loop over the `2 L²` links, plus the
/// set of links read when evaluating it term by term.
struct Coeffs {
    net: Vec<i32>,
    terms: Vec<bool>,
}

fn link(l: usize, mu: usize, x0: usize, x1: usize) -> usize {
    mu * l * l + (x0 % l) * l + (x1 % l)
}

fn loop_coeffs(l: usize, terms: &[(i32, usize, usize, usize)]) -> Coeffs {
    let mut c = Coeffs {
        net: vec![0; 2 * l * l],
        terms: vec![false; 2 * l * l],
    };
    for &(s, mu, x0, x1) in terms {
        let k = link(l, mu, x0, x1);
        c.net[k] += s;
        c.terms[k] = true;
    }
    c
}

fn plaquette_coeffs(l: usize, x0: usize, x1: usize) -> Coeffs {
    loop_coeffs(l, &[(1, 1, x0, x1), (1, 0, x0, x1 + 1), (-1, 1, x0 + 1, x1), (-1, 0, x0, x1)])
}

fn rect0_coeffs(l: usize, x0: usize, x1: usize) -> Coeffs {
    loop_coeffs(
        l,
        &[
            (1, 1, x0, x1),
            (1, 0, x0, x1 + 1),
            (1, 0, x0 + 1, x1 + 1),
            (-1, 1, x0 + 2, x1),
            (-1, 0, x0 + 1, x1),
            (-1, 0, x0, x1),
        ],
    )
}

fn rect1_coeffs(l: usize, x0: usize, x1: usize) -> Coeffs {
    loop_coeffs(
        l,
        &[
            (1, 1, x0, x1),
            (1, 1, x0, x1 + 1),
            (1, 0, x0, x1 + 2),
            (-1, 1, x0 + 1, x1 + 1),
            (-1, 1, x0 + 1, x1),
            (-1, 0, x0, x1),
        ],
    )
}

fn touches(c: &Coeffs, active: &[bool]) -> bool {
    c.terms.iter().zip(active).any(|(&t, &a)| a && t)
}

impl LayerMask {
    pub fn new(l: usize, layer: usize) -> Result<Self> {
        let c = layer % CYCLE;
        let mu = usize::from(c >= 4);
        let k = c % 4;
        let pick: Box<dyn Fn(usize, usize) -> bool> = if l == 2 {
            Box::new(move |a, b| a == k % 2 && b == k / 2)
        } else if l >= 4 && l % 4 == 0 {
            Box::new(move |a, b| a % 4 == (k + 2 * (b % 2)) % 4)
        } else {
            return Err(Error::UnsupportedLattice(l));
        };
        let mut active = vec![false; 2 * l * l];
        let mut sites = Vec::new();
        for x0 in 0..l {
            for x1 in 0..l {
                let (a, b) = if mu == 0 { (x0, x1) } else { (x1, x0) };
                if pick(a, b) {
                    active[link(l, mu, x0, x1)] = true;
                    sites.push(x0 * l + x1);
                }
            }
        }
        let links: Vec<usize> = sites.iter().map(|&s| mu * l * l + s).collect();
        let sign = if mu == 0 { -1.0 } else { 1.0 };

        let mut frozen_plaquettes = vec![false; l * l];
        let mut frozen_loops0 = vec![false; l * l];
        let mut frozen_loops1 = vec![false; l * l];
        for x0 in 0..l {
            for x1 in 0..l {
                let s = x0 * l + x1;
                frozen_plaquettes[s] = !touches(&plaquette_coeffs(l, x0, x1), &active);
                frozen_loops0[s] = !touches(&rect0_coeffs(l, x0, x1), &active);
                frozen_loops1[s] = !touches(&rect1_coeffs(l, x0, x1), &active);
            }
        }
        let mask = LayerMask {
            l,
            mu,
            offset: k,
            active,
            sites,
            links,
            sign,
            frozen_plaquettes,
            frozen_loops0,
            frozen_loops1,
        };
        mask.validate()?;
        Ok(mask)
    }

    /// Each active plaquette contains its own active link with coefficient
    /// `sign` and no other active link.
    pub fn validate(&self) -> Result<()> {
        let l = self.l;
        for (&s, &lk) in self.sites.iter().zip(&self.links) {
            let p = plaquette_coeffs(l, s / l, s % l);
            for (j, &a) in self.active.iter().enumerate() {
                let expect = if j == lk { self.sign as i32 } else { 0 };
                if a && (p.net[j] != expect || (j != lk && p.terms[j])) {
                    return Err(Error::Config(format!(
                        "mask (mu={}, k={}): plaquette at site {s} has coefficient {} on active link {j}",
                        self.mu, self.offset, p.net[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_active(&self) -> usize {
        self.sites.len()
    }
}

/// Masks for every layer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub l: usize,
    pub layers: Vec<LayerMask>,
}

impl MaskSet {
    pub fn new(l: usize, n_layers: usize) -> Result<Self> {
        let cycle: Vec<LayerMask> = (0..CYCLE).map(|i| LayerMask::new(l, i)).collect::<Result<_>>()?;
        let mut count = vec![0usize; 2 * l * l];
        for m in &cycle {
            for &lk in &m.links {
                count[lk] += 1;
            }
        }
        if let Some(bad) = count.iter().position(|&c| c != 1) {
            return Err(Error::Config(format!(
                "mask cycle updates link {bad} {} times",
                count[bad]
            )));
        }
        let layers = (0..n_layers).map(|i| cycle[i % CYCLE].clone()).collect();
        Ok(MaskSet { l, layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}
