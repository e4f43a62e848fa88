//! Run configuration: a flat TOML table.
//!
//! ```toml
//! L = 4
//! beta = 2.0
//! kappa = 0.276
//! estimator = "reinforce"   # or "rt"
//! precision = "single"      # or "double"
//! batch_size = 64
//! n_batches = 1
//! n_steps = 5000
//! seed = 1
//! ```
//!
//! `L`, `beta`, `kappa` and `estimator` are required; every other key has
//! the default listed on [`RunConfig`]. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::flow::FlowShape;
use crate::nn::AdamConfig;
use crate::tensor::DType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub kappa: f64,
    pub estimator: Estimator,
    /// Default `single`.
    #[serde(default = "defaults::precision")]
    pub precision: DType,
    /// Configurations per micro-batch, default 64.
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Micro-batches per gradient step, default 1.
    #[serde(default = "defaults::one")]
    pub n_batches: usize,
    /// Default 1000.
    #[serde(default = "defaults::n_steps")]
    pub n_steps: u64,
    /// Default 1e-3.
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::eps")]
    pub adam_eps: f64,
    /// Per-step multiplicative learning-rate decay; none by default.
    #[serde(default)]
    pub lr_decay: Option<f64>,
    /// Global gradient-norm bound, default 1.0.
    #[serde(default = "defaults::clip_norm")]
    pub clip_norm: f64,
    /// Default true.
    #[serde(default = "defaults::yes")]
    pub clip: bool,
    #[serde(default)]
    pub seed: u64,
    /// Spline knots, default 8.
    #[serde(default = "defaults::knots")]
    pub knots: usize,
    /// Coupling layers, default 48.
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    /// Conditioner hidden channels, default 64.
    #[serde(default = "defaults::hidden")]
    pub hidden_channels: usize,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
    /// Steps between checkpoints (0: only at the end), default 1000.
    #[serde(default = "defaults::every")]
    pub checkpoint_every: u64,
    /// Steps between offline acceptance evaluations (0: never), default 1000.
    #[serde(default = "defaults::every")]
    pub eval_every: u64,
    /// Chain length of one offline evaluation, default 1000.
    #[serde(default = "defaults::chain_len")]
    pub eval_chain_len: usize,
    /// Flow draws per proposal batch when sampling, default 256.
    #[serde(default = "defaults::proposal_batch")]
    pub proposal_batch: usize,
    /// Lattice sizes for `profile`, default [4, 8, 12, 16].
    #[serde(default = "defaults::profile_sizes")]
    pub profile_sizes: Vec<usize>,
    /// Batch size for `profile`, default 4.
    #[serde(default = "defaults::profile_batch")]
    pub profile_batch: usize,
    /// Toy batches for the bias-ratio check, default 100000.
    #[serde(default = "defaults::mc_batches")]
    pub mc_batches: usize,
}

mod defaults {
    use crate::tensor::DType;

    pub fn precision() -> DType {
        DType::Single
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn one() -> usize {
        1
    }
    pub fn n_steps() -> u64 {
        1000
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn clip_norm() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn knots() -> usize {
        8
    }
    pub fn n_layers() -> usize {
        48
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn every() -> u64 {
        1000
    }
    pub fn chain_len() -> usize {
        1000
    }
    pub fn proposal_batch() -> usize {
        256
    }
    pub fn profile_sizes() -> Vec<usize> {
        vec![4, 8, 12, 16]
    }
    pub fn profile_batch() -> usize {
        4
    }
    pub fn mc_batches() -> usize {
        100_000
    }
}

impl RunConfig {
    /// A configuration with every optional key at its default.
    pub fn new(l: usize, beta: f64, kappa: f64, estimator: Estimator) -> Self {
        let src = format!("L = {l}\nbeta = {beta:?}\nkappa = {kappa:?}\nestimator = \"{estimator}\"\n");
        toml::from_str(&src).expect("minimal config parses")
    }

    pub fn parse(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return bad(format!("kappa must lie in [0, 1), got {}", self.kappa));
        }
        if self.l != 2 && (self.l == 0 || self.l % 4 != 0) {
            return Err(Error::UnsupportedLattice(self.l));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("n_batches", self.n_batches),
            ("knots", self.knots),
            ("n_layers", self.n_layers),
            ("hidden_channels", self.hidden_channels),
            ("proposal_batch", self.proposal_batch),
            ("profile_batch", self.profile_batch),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return bad("lr, clip_norm and adam_eps must be positive".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("lr_decay must lie in (0, 1], got {d}"));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> FlowShape {
        FlowShape {
            l: self.l,
            n_layers: self.n_layers,
            hidden: self.hidden_channels,
            knots: self.knots,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate used at (zero-based) step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.powf(step as f64),
            None => self.lr,
        }
    }

    /// Effective batch per gradient step.
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.n_batches
    }

    /// Fails on the first architectural or physical field that differs.
    pub fn check_compatible(&self, other: &RunConfig) -> Result<()> {
        let fields: [(&'static str, String, String); 6] = [
            ("L", self.l.to_string(), other.l.to_string()),
            ("knots", self.knots.to_string(), other.knots.to_string()),
            ("n_layers", self.n_layers.to_string(), other.n_layers.to_string()),
            ("hidden_channels", self.hidden_channels.to_string(), other.hidden_channels.to_string()),
            ("beta", format!("{:?}", self.beta), format!("{:?}", other.beta)),
            ("kappa", format!("{:?}", self.kappa), format!("{:?}", other.kappa)),
        ];
        for (field, config, checkpoint) in fields {
            if config != checkpoint {
                return Err(Error::Mismatch { field, config, checkpoint });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "L = 4\nbeta = 2.0\nkappa = 0.276\nestimator = \"reinforce\"\n";

    #[test]
    fn defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.precision, DType::Single);
        assert_eq!(c.adam(), AdamConfig::default());
        assert_eq!(c.clip_norm, 1.0);
        assert_eq!(c.eval_every, 1000);
        assert_eq!(c.lr_at(500), 1e-3);
        assert_eq!(c, RunConfig::new(4, 2.0, 0.276, Estimator::Reinforce));
    }

    #[test]
    fn missing_key_is_named() {
        let src = MINIMAL.replace("kappa = 0.276\n", "");
        let e = RunConfig::parse(&src).unwrap_err().to_string();
        assert!(e.contains("kappa"), "{e}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = RunConfig::parse(&format!("{MINIMAL}learning_rate = 0.1\n")).unwrap_err().to_string();
        assert!(e.contains("learning_rate"), "{e}");
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::parse(&MINIMAL.replace("2.0", "-1.0")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("0.276", "1.5")).is_err());
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("L = 4", "L = 6")), Err(Error::UnsupportedLattice(6))));
        assert!(RunConfig::parse(&MINIMAL.replace("reinforce", "sgd")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}batch_size = 0\n")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.lr_decay = Some(0.999);
        c.checkpoint_path = Some("run/ckpt.bin".into());
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn compatibility() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.n_steps = 7;
        b.estimator = Estimator::Rt;
        assert!(a.check_compatible(&b).is_ok());
        b.knots = 4;
        assert!(matches!(a.check_compatible(&b), Err(Error::Mismatch { field: "knots", .. })));
    }
}
