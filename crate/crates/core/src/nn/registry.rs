use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, t: Tensor) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        if !t.requires_grad() || t.has_node() {
            return Err(Error::Config(format!("parameter `{name}` is not a trainable leaf")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// All values concatenated in registry order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_elements());
        for (_, t) in &self.entries {
            v.extend_from_slice(&t.data());
        }
        v
    }

    /// All gradients concatenated in registry order (missing ones as zeros).
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_elements());
        for (_, t) in &self.entries {
            match t.grad() {
                Some(g) => v.extend(g),
                None => v.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        v
    }

    pub fn set_flat_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_elements() {
            return Err(Error::shape(
                "set_flat_values",
                format!("{} values for {} parameters", values.len(), self.num_elements()),
            ));
        }
        let mut off = 0;
        for (_, t) in &self.entries {
            let n = t.numel();
            t.set_data(values[off..off + n].to_vec())?;
            off += n;
        }
        Ok(())
    }
}
