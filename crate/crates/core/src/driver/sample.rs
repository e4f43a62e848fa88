use std::io::Write;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::train::{stream, Trainer, STREAM_CHAIN};
use crate::error::Result;
use crate::sampler::{fermion_observer, run_chain, ChainRecord, ChainSummary};

#[derive(Clone, Debug)]
pub struct SampleReport {
    pub record: ChainRecord,
    pub summary: ChainSummary,
}

impl SampleReport {
    pub fn write_summary(&self, w: &mut dyn Write) -> Result<()> {
        let s = &self.summary;
        writeln!(w, "steps: {}", s.steps)?;
        writeln!(w, "acceptance: {:.6}", s.acceptance)?;
        match s.tau_condensate {
            Some((tau, window)) => writeln!(w, "tau_int_condensate: {tau:.4} (window {window})")?,
            None => writeln!(w, "tau_int_condensate: n/a (chain too short)")?,
        }
        writeln!(w, "bridges_over_{}: {}", crate::sampler::DEFAULT_BRIDGE, s.bridges.len())?;
        for (start, len) in &s.bridges {
            writeln!(w, "  start {start} length {len}")?;
        }
        Ok(())
    }
}

/// Runs an MIS chain of `n_steps` from the model stored in `checkpoint`.
/// The chain generator is the `chain` sub-stream of `config.seed`.
pub fn sample(config: &RunConfig, checkpoint: &Path, n_steps: usize, csv: Option<&Path>) -> Result<SampleReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let trainer = Trainer::resume(config, &ck)?;
    let mut rng = stream(config.seed, STREAM_CHAIN);
    let observe = fermion_observer(config.kappa);
    let record = run_chain(&trainer.model, &trainer.action, &observe, n_steps, config.proposal_batch, &mut rng)?;
    let summary = record.summary()?;
    if let Some(path) = csv {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        record.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(SampleReport { record, summary })
}
