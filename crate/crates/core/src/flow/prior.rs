use std::f64::consts::TAU;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::gauge::LinkField;
use crate::tensor::{DType, Tensor};

/// Independent uniform links on `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior {
    pub l: usize,
}

impl Prior {
    pub fn new(l: usize) -> Self {
        Prior { l }
    }

    /// `-2 L² ln 2π`.
    pub fn log_density(&self) -> f64 {
        -2.0 * (self.l * self.l) as f64 * TAU.ln()
    }

    pub fn log_prob(&self, u: &LinkField) -> Tensor {
        Tensor::full(&[u.batch()], self.log_density(), u.dtype())
    }

    pub fn sample(&self, batch: usize, rng: &mut dyn RngCore, dtype: DType) -> Result<(LinkField, Tensor)> {
        if batch == 0 {
            return Err(Error::Empty("prior sample batch"));
        }
        let n = batch * 2 * self.l * self.l;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
        let u = LinkField::from_vec(values, batch, self.l, dtype)?;
        let lp = self.log_prob(&u);
        Ok((u, lp))
    }
}
