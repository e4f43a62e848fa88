use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::dirac::SchwingerAction;
use crate::error::{Error, Result};
use crate::estimators::{accumulate, ess, free_energy_estimate, Accumulated};
use crate::flow::{Flow, FlowModel};
use crate::gauge::LinkField;
use crate::nn::{clip_grad_norm, grad_norm, Adam};
use crate::sampler::run_chain;

/// Sub-stream indices of the per-run generator.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_PRIOR: u64 = 1;
pub const STREAM_CHAIN: u64 = 2;
/// Offline evaluation after step `s` uses stream `STREAM_EVAL + s`.
pub const STREAM_EVAL: u64 = 1 << 32;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub const METRICS_HEADER: &str = "step,loss,F_q_mean,F_q_stderr,ESS,grad_norm_preclip,wall_time_s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub f_q_mean: f64,
    pub f_q_stderr: f64,
    pub ess: f64,
    pub grad_norm_preclip: f64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:.6}",
            self.step, self.loss, self.f_q_mean, self.f_q_stderr, self.ess, self.grad_norm_preclip, self.wall_time_s
        )
    }

    /// Same row with the wall time cleared, for determinism comparisons.
    pub fn without_time(mut self) -> Self {
        self.wall_time_s = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    /// Number of completed gradient steps.
    pub step: u64,
    pub acceptance: f64,
}

/// Model, optimizer and generator state of one training run.
pub struct Trainer {
    pub config: RunConfig,
    pub model: FlowModel,
    pub action: SchwingerAction,
    pub adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    clock: Instant,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let model = FlowModel::new(config.shape(), config.precision, &mut stream(config.seed, STREAM_INIT))?;
        let adam = Adam::new(config.adam(), model.parameters());
        Ok(Trainer {
            config: config.clone(),
            action: SchwingerAction::new(config.beta, config.kappa)?,
            model,
            adam,
            rng: stream(config.seed, STREAM_PRIOR),
            step: 0,
            clock: Instant::now(),
        })
    }

    /// Continues from `ck`; the architecture and physics of `config` must
    /// match the checkpoint.
    pub fn resume(config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        config.check_compatible(&ck.config)?;
        let mut t = Trainer::new(config)?;
        ck.restore(t.model.parameters(), &mut t.adam)?;
        t.rng = ck.rng.restore();
        t.step = ck.step;
        Ok(t)
    }

    /// Completed gradient steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.step, self.model.parameters(), &self.adam, &self.rng)
    }

    /// One gradient step: zero, accumulate over micro-batches, clip, update.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let cfg = &self.config;
        let params = self.model.parameters();
        params.zero_grad();
        let batches = (0..cfg.n_batches)
            .map(|_| self.model.sample_prior(cfg.batch_size, &mut self.rng))
            .collect::<Result<Vec<(LinkField, _)>>>()?;
        let acc = accumulate(cfg.estimator, &self.model, &self.action, &batches)?;
        let finite = acc.loss.is_finite() && acc.log_q.iter().chain(&acc.log_p).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteLoss { step: self.step, stats: batch_stats(&acc) });
        }
        let norm = if cfg.clip { clip_grad_norm(params, cfg.clip_norm) } else { grad_norm(params) };
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                stats: format!("gradient norm {norm}; {}", batch_stats(&acc)),
            });
        }
        self.adam.config.lr = cfg.lr_at(self.step);
        self.adam.step(params)?;
        params.zero_grad();
        let (f_q_mean, f_q_stderr) = free_energy_estimate(&acc.log_q, &acc.log_p)?;
        let row = MetricsRow {
            step: self.step,
            loss: acc.loss,
            f_q_mean,
            f_q_stderr,
            ess: ess(&acc.log_q, &acc.log_p)?,
            grad_norm_preclip: norm,
            wall_time_s: self.clock.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(row)
    }

    /// Acceptance rate of an MIS chain of `len` steps drawn from the
    /// current model. The generator depends only on the seed and the step.
    pub fn evaluate(&self, len: usize) -> Result<f64> {
        let mut rng = stream(self.config.seed, STREAM_EVAL + self.step);
        let observe = |u: &LinkField| Ok(vec![[0.0; 2]; u.batch()]);
        let rec = run_chain(&self.model, &self.action, &observe, len, self.config.proposal_batch, &mut rng)?;
        rec.acceptance_rate()
    }
}

fn batch_stats(acc: &Accumulated) -> String {
    let describe = |name: &str, v: &[f64]| {
        let bad = v.iter().filter(|x| !x.is_finite()).count();
        let fin: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        let (lo, hi) = fin.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let mean = fin.iter().sum::<f64>() / fin.len().max(1) as f64;
        format!("{name}: {bad}/{} non-finite, finite range [{lo:e}, {hi:e}], mean {mean:e}", v.len())
    };
    format!("loss {}; {}; {}", acc.loss, describe("log_q", &acc.log_q), describe("log_p", &acc.log_p))
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalRecord>,
    /// Completed steps at the end of the run.
    pub steps: u64,
    pub checkpoint: Option<PathBuf>,
}

/// Opens the metrics file. On resume, rows at or after `from_step` are
/// dropped so that the file matches an uninterrupted run.
fn open_metrics(path: &Path, from_step: u64) -> Result<std::fs::File> {
    let mut kept = vec![METRICS_HEADER.to_string()];
    if from_step > 0 && path.exists() {
        let old = std::fs::read_to_string(path)?;
        for line in old.lines().skip(1) {
            let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if step.is_some_and(|s| s < from_step) {
                kept.push(line.to_string());
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    for line in kept {
        writeln!(f, "{line}")?;
    }
    Ok(f)
}

/// Runs training to `config.n_steps` completed steps, optionally from a
/// checkpoint, writing metrics and checkpoints to the configured paths.
/// Progress lines go to `log`.
pub fn train(config: &RunConfig, resume: Option<&Path>, log: &mut dyn Write) -> Result<TrainReport> {
    let mut trainer = match resume {
        Some(p) => Trainer::resume(config, &Checkpoint::load(p)?)?,
        None => Trainer::new(config)?,
    };
    let mut report = TrainReport {
        checkpoint: config.checkpoint_path.clone(),
        ..TrainReport::default()
    };
    writeln!(
        log,
        "train: L={} estimator={} precision={} params={} batch={}x{} steps {}..{}",
        config.l,
        config.estimator,
        config.precision.name(),
        trainer.model.num_params(),
        config.n_batches,
        config.batch_size,
        trainer.step_count(),
        config.n_steps
    )?;
    let save = |t: &Trainer| -> Result<()> {
        match &config.checkpoint_path {
            Some(p) => t.checkpoint().save(p),
            None => Ok(()),
        }
    };
    if trainer.step_count() >= config.n_steps {
        save(&trainer)?;
        report.steps = trainer.step_count();
        return Ok(report);
    }
    let mut metrics = match &config.metrics_path {
        Some(p) => Some(open_metrics(p, trainer.step_count())?),
        None => None,
    };
    while trainer.step_count() < config.n_steps {
        let row = trainer.step()?;
        if let Some(f) = metrics.as_mut() {
            writeln!(f, "{}", row.csv())?;
        }
        report.metrics.push(row);
        let done = trainer.step_count();
        if config.eval_every > 0 && done % config.eval_every == 0 {
            let acceptance = trainer.evaluate(config.eval_chain_len)?;
            writeln!(
                log,
                "step {done}: loss {:.4} F_q {:.4} ± {:.4} ESS {:.4} acceptance {:.4}",
                row.loss, row.f_q_mean, row.f_q_stderr, row.ess, acceptance
            )?;
            report.evals.push(EvalRecord { step: done, acceptance });
        }
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.n_steps {
            save(&trainer)?;
        }
    }
    if let Some(f) = metrics.as_mut() {
        f.flush()?;
    }
    save(&trainer)?;
    report.steps = trainer.step_count();
    Ok(report)
}
