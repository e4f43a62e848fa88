use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schwinger_flow::driver::checkpoint::Checkpoint;
use schwinger_flow::driver::{sample, train, RunConfig, METRICS_HEADER};
use schwinger_flow::estimators::{Estimator, PriorTarget};
use schwinger_flow::flow::{Flow, FlowModel};
use schwinger_flow::sampler::{fermion_observer, run_chain};
use schwinger_flow::{DType, Error};

fn tiny(dir: &Path) -> RunConfig {
    let mut c = RunConfig::new(4, 2.0, 0.276, Estimator::Reinforce);
    c.n_layers = 2;
    c.hidden_channels = 2;
    c.knots = 3;
    c.batch_size = 4;
    c.n_steps = 4;
    c.eval_every = 2;
    c.eval_chain_len = 20;
    c.proposal_batch = 8;
    c.seed = 5;
    c.checkpoint_path = Some(dir.join("ck.bin"));
    c.metrics_path = Some(dir.join("metrics.csv"));
    c
}

fn rows_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn presets_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn zero_steps_writes_only_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.n_steps = 0;
    let report = train(&c, None, &mut std::io::sink()).unwrap();
    assert!(report.metrics.is_empty());
    assert!(!dir.path().join("metrics.csv").exists());
    let ck = Checkpoint::load(&dir.path().join("ck.bin")).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.config, c);
    assert_eq!(ck.adam.step, 0);
}

#[test]
fn checkpoint_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    train(&c, None, &mut std::io::sink()).unwrap();
    let a = std::fs::read(dir.path().join("ck.bin")).unwrap();
    let ck = Checkpoint::load(&dir.path().join("ck.bin")).unwrap();
    ck.save(&dir.path().join("again.bin")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("again.bin")).unwrap());
    assert_eq!(ck.config, c);
    assert_eq!(ck.step, 4);
}

#[test]
fn resumed_run_reproduces_the_metric_stream() {
    let full_dir = tempfile::tempdir().unwrap();
    let full = tiny(full_dir.path());
    let report = train(&full, None, &mut std::io::sink()).unwrap();
    assert_eq!(report.metrics.len(), 4);
    assert_eq!(report.evals.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let mut first = tiny(dir.path());
    first.n_steps = 2;
    train(&first, None, &mut std::io::sink()).unwrap();
    let second = tiny(dir.path());
    let resumed = train(&second, Some(&dir.path().join("ck.bin")), &mut std::io::sink()).unwrap();
    assert_eq!(resumed.metrics.len(), 2);
    assert_eq!(resumed.evals, report.evals[1..]);

    let a = rows_without_time(&full_dir.path().join("metrics.csv"));
    let b = rows_without_time(&dir.path().join("metrics.csv"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
    assert!(std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap().starts_with(METRICS_HEADER));
    let x = Checkpoint::load(&full_dir.path().join("ck.bin")).unwrap();
    let y = Checkpoint::load(&dir.path().join("ck.bin")).unwrap();
    assert_eq!((x.step, &x.rng, &x.params, &x.adam), (y.step, &y.rng, &y.params, &y.adam));
}

#[test]
fn resume_rejects_a_different_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    train(&c, None, &mut std::io::sink()).unwrap();
    let mut other = c.clone();
    other.n_layers = 4;
    let e = train(&other, Some(&dir.path().join("ck.bin")), &mut std::io::sink()).unwrap_err();
    assert!(matches!(e, Error::Mismatch { field: "n_layers", .. }), "{e}");
    let mut l8 = c.clone();
    l8.l = 8;
    assert!(matches!(
        sample(&l8, &dir.path().join("ck.bin"), 10, None),
        Err(Error::Mismatch { field: "L", .. })
    ));
}

#[test]
fn sampling_is_reproducible_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    train(&c, None, &mut std::io::sink()).unwrap();
    let ck = dir.path().join("ck.bin");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let ra = sample(&c, &ck, 300, Some(&a)).unwrap();
    sample(&c, &ck, 300, Some(&b)).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let flags: Vec<bool> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap() == "1").collect();
    assert_eq!(flags.len(), 300);
    let rate = flags.iter().filter(|&&f| f).count() as f64 / 300.0;
    assert_eq!(ra.summary.acceptance, rate);
    assert!(ra.summary.tau_condensate.is_some());
    let mut out = Vec::new();
    ra.write_summary(&mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("acceptance"));
}

#[test]
fn identity_model_on_prior_target_always_accepts() {
    let m = FlowModel::new(tiny(Path::new(".")).shape(), DType::Single, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let target = PriorTarget::new(4);
    let rec = run_chain(&m, &target, &fermion_observer(0.276), 200, 64, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(rec.acceptance_rate().unwrap(), 1.0);
    assert!(rec.steps.iter().all(|s| s.log_q == s.log_p));
    assert_eq!(m.parameters().flat_grads().iter().filter(|g| **g != 0.0).count(), 0);
}

#[test]
fn config_files_report_named_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "L = 4\nbeta = 2.0\nestimator = \"rt\"\n").unwrap();
    let e = RunConfig::load(&p).unwrap_err().to_string();
    assert!(e.contains("kappa") && e.contains("c.toml"), "{e}");
    std::fs::write(&p, "L = 4\nbeta = 2.0\nkappa = 0.2\nestimator = \"rt\"\nbogus = 1\n").unwrap();
    assert!(RunConfig::load(&p).unwrap_err().to_string().contains("bogus"));
}
