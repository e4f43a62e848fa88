use super::toy::{bias_ratio, ratio_of_means, GaussianTarget, ScaleFlow};
use super::*;
use crate::flow::{FlowModel, FlowShape};
use crate::tensor::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

const D: DType = DType::Double;
const S: DType = DType::Single;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn model(l: usize, n_layers: usize, hidden: usize, knots: usize, dtype: DType, seed: u64, scale: f64) -> FlowModel {
    let m = FlowModel::new(FlowShape { l, n_layers, hidden, knots }, dtype, &mut rng(seed)).unwrap();
    if scale > 0.0 {
        let mut r = rng(seed + 1);
        let v: Vec<f64> = (0..m.num_params()).map(|_| r.random_range(-scale..scale)).collect();
        m.parameters().set_flat_values(&v).unwrap();
    }
    m
}

fn schwinger() -> SchwingerAction {
    SchwingerAction::new(2.0, 0.276).unwrap()
}

#[test]
fn both_losses_estimate_the_same_free_energy() {
    let m = model(4, 4, 3, 4, D, 1, 0.2);
    let (z, lp) = m.sample_prior(3, &mut rng(2)).unwrap();
    let rt = grt_loss(&m, &schwinger(), &z, &lp).unwrap();
    let re = gre_loss(&m, &schwinger(), &z, &lp).unwrap();
    let s = re.signal();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!((rt.loss.item().unwrap() - mean).abs() < 1e-10);
    for (a, b) in rt.log_q.to_vec().iter().zip(re.log_q.to_vec()) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in rt.log_p.to_vec().iter().zip(re.log_p.to_vec()) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(!rt.log_q.has_node() && !rt.log_p.has_node());
    assert!(!re.log_q.has_node() && !re.log_p.has_node());
}

#[test]
fn identity_model_on_prior_target_has_zero_loss() {
    let m = model(4, 8, 3, 8, D, 3, 0.0);
    let target = PriorTarget::new(4);
    let (z, lp) = m.sample_prior(4, &mut rng(4)).unwrap();
    for est in [Estimator::Rt, Estimator::Reinforce] {
        let out = loss(est, &m, &target, &z, &lp).unwrap();
        assert_eq!(out.loss.item().unwrap(), 0.0, "{est}");
    }
    m.parameters().zero_grad();
    gre_loss(&m, &target, &z, &lp).unwrap().loss.backward().unwrap();
    assert!(m.parameters().flat_grads().iter().all(|&g| g == 0.0));
}

#[test]
fn reinforce_gradient_vanishes_when_q_equals_p() {
    let m = model(4, 8, 3, 6, D, 5, 0.2);
    let target = FlowTarget::new(&m).unwrap();
    let (z, lp) = m.sample_prior(4, &mut rng(6)).unwrap();
    let out = gre_loss(&m, &target, &z, &lp).unwrap();
    let s = out.signal();
    assert!(s.iter().all(|v| v.abs() < 1e-9), "{s:?}");
    m.parameters().zero_grad();
    out.loss.backward().unwrap();
    let g = m.parameters().flat_grads();
    assert!(g.iter().all(|v| v.abs() < 1e-8));

    m.parameters().zero_grad();
    grt_loss(&m, &schwinger(), &z, &lp).unwrap().loss.backward().unwrap();
    assert!(m.parameters().flat_grads().iter().any(|v| v.abs() > 1e-6));
}

#[test]
fn reinforce_never_differentiates_the_action() {
    let m = model(4, 2, 2, 4, D, 7, 0.2);
    let trap = Trap::new(schwinger());
    let (z, lp) = m.sample_prior(2, &mut rng(8)).unwrap();
    gre_loss(&m, &trap, &z, &lp).unwrap().loss.backward().unwrap();
    assert_eq!(trap.backward_calls(), 0);
    grt_loss(&m, &trap, &z, &lp).unwrap().loss.backward().unwrap();
    assert_eq!(trap.backward_calls(), 1);
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn micro_batches_match_a_single_batch() {
    let m = model(4, 4, 3, 4, D, 9, 0.2);
    let (z, lp) = m.sample_prior(6, &mut rng(10)).unwrap();
    let split = |lo: usize, hi: usize| {
        let idx: Vec<usize> = (lo..hi).collect();
        (
            LinkField::new(&z.theta().index_select(0, &idx).unwrap()).unwrap(),
            lp.index_select(0, &idx).unwrap(),
        )
    };
    for est in [Estimator::Rt, Estimator::Reinforce] {
        m.parameters().zero_grad();
        let whole = accumulate(est, &m, &schwinger(), &[(z.clone(), lp.clone())]).unwrap();
        let g1 = m.parameters().flat_grads();
        m.parameters().zero_grad();
        let parts = accumulate(est, &m, &schwinger(), &[split(0, 2), split(2, 4), split(4, 6)]).unwrap();
        let g2 = m.parameters().flat_grads();
        assert!(rel_err(&g2, &g1) < 1e-10, "{est}: {}", rel_err(&g2, &g1));
        assert!((whole.loss - parts.loss).abs() < 1e-10 * whole.loss.abs().max(1.0));
        assert_eq!(parts.log_q.len(), 6);
    }
    assert!(accumulate(Estimator::Rt, &m, &schwinger(), &[]).is_err());
}

#[test]
fn reparameterization_gradient_matches_finite_difference() {
    let m = model(2, 1, 1, 1, D, 11, 0.3);
    assert!(m.num_params() <= 100);
    let (z, lp) = m.sample_prior(3, &mut rng(12)).unwrap();
    let act = schwinger();
    m.parameters().zero_grad();
    grt_loss(&m, &act, &z, &lp).unwrap().loss.backward().unwrap();
    let g = m.parameters().flat_grads();
    let base = m.parameters().flat_values();
    let h = 1e-6;
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let eval = |dx: f64| {
            let mut v = base.clone();
            v[i] += dx;
            m.parameters().set_flat_values(&v).unwrap();
            grt_loss(&m, &act, &z, &lp).unwrap().loss.item().unwrap()
        };
        fd.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    m.parameters().set_flat_values(&base).unwrap();
    let err = rel_err(&g, &fd);
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn free_energy_closed_cases() {
    assert_eq!(free_energy_estimate(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
    let (m, se) = free_energy_estimate(&[1.5, 2.5, -1.0], &[1.0, 2.0, -1.5]).unwrap();
    assert!((m - 0.5).abs() < 1e-15 && se < 1e-15);
    let (m, se) = free_energy_estimate(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
    assert_eq!(m, 1.0);
    assert!((se - 1.0).abs() < 1e-15);
    assert!(free_energy_estimate(&[], &[]).is_err());
    assert!(free_energy_estimate(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn ess_closed_cases() {
    assert!((ess(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
    let w = [1.0f64, 1e-30, 1e-30];
    let lp: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    assert!((ess(&[0.0; 3], &lp).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let lq = [0.1, -0.7, 2.0, 4.0];
    let lp = [1.0, 0.3, -0.5, 2.0];
    let e = ess(&lq, &lp).unwrap();
    let shifted: Vec<f64> = lp.iter().map(|x| x + 1234.5).collect();
    assert!((ess(&lq, &shifted).unwrap() - e).abs() < 1e-12);
    let e2 = ess(&[4.0, 2.0, 0.1, -0.7], &[2.0, -0.5, 1.0, 0.3]).unwrap();
    assert!((e - e2).abs() < 1e-15);
    let huge: Vec<f64> = lp.iter().map(|x| x * 1e3).collect();
    let v = ess(&lq, &huge).unwrap();
    assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    assert!(ess(&[], &[]).is_err());
}

#[test]
fn estimator_names_round_trip() {
    for e in [Estimator::Rt, Estimator::Reinforce] {
        assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
    }
    assert!("path".parse::<Estimator>().is_err());
}

#[test]
fn toy_reparameterization_gradient_is_unbiased() {
    let flow = ScaleFlow::new(1, 0.2, D).unwrap();
    let target = GaussianTarget { sigma: 1.3 };
    let est = bias_ratio(&flow, &target, 4, 20_000, &mut rng(13)).unwrap();
    let exact = target.exact_gradient(1, 0.2);
    let mean_rt = est.mean_den;
    let se = (0.4f64).exp() / (1.3 * 1.3) * (2.0f64 / 4.0).sqrt() / (20_000f64).sqrt();
    assert!((mean_rt - exact).abs() < 3.0 * se, "{mean_rt} vs {exact} ± {se}");
    assert!((est.ratio - 0.75).abs() < 3.0 * est.stderr, "{est:?}");
}

#[test]
fn toy_flow_reverse_inverts_forward() {
    let flow = ScaleFlow::new(3, -0.4, D).unwrap();
    let (z, lp) = flow.sample_prior(5, &mut rng(14)).unwrap();
    let (phi, lq) = flow.forward(&z, &lp).unwrap();
    let (z2, lq2) = flow.reverse(&phi).unwrap();
    assert!(rel_err(&z2.to_vec(), &z.to_vec()) < 1e-14);
    assert!(rel_err(&lq2.to_vec(), &lq.to_vec()) < 1e-14);
}

#[test]
fn ratio_of_means_matches_exact_ratio() {
    let num = [2.0, 4.0, 6.0];
    let den = [1.0, 2.0, 3.0];
    let r = ratio_of_means(&num, &den).unwrap();
    assert!((r.ratio - 2.0).abs() < 1e-15 && r.stderr < 1e-12);
    assert!(ratio_of_means(&[1.0], &[1.0]).is_err());
}

#[test]
fn reinforce_graph_is_independent_of_lattice_size() {
    let mut re = Vec::new();
    let mut rt = Vec::new();
    for l in [4, 8] {
        let m = model(l, 2, 2, 4, S, 15, 0.0);
        let (z, lp) = m.sample_prior(2, &mut rng(16)).unwrap();
        re.push(gre_loss(&m, &schwinger(), &z, &lp).unwrap().loss.graph_stats().unwrap());
        rt.push(grt_loss(&m, &schwinger(), &z, &lp).unwrap().loss.graph_stats().unwrap());
    }
    assert_eq!(re[0].node_count, re[1].node_count);
    assert!(rt[1].node_count > rt[0].node_count);
    assert!(re[1].saved_tensor_bytes < rt[1].saved_tensor_bytes);
}

#[test]
fn single_link_free_energy_matches_quadrature() {
    let m = model(2, 1, 2, 8, D, 17, 0.0);
    let mut r = rng(18);
    let bias = m.parameters().get("layer0.conv2.bias").unwrap();
    let nb = bias.numel();
    bias.set_data((0..nb).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let target = PriorTarget::new(2);
    let link = m.layers[0].mask.links[0];

    let n = 4000;
    let mut values = Vec::with_capacity(n * 8);
    for i in 0..n {
        let mut v = vec![0.3; 8];
        v[link] = TAU * (i as f64 + 0.5) / n as f64;
        values.extend(v);
    }
    let (_, lq) = m.reverse(&LinkField::from_vec(values, n, 2, D).unwrap()).unwrap();
    let base = m.prior.log_density();
    let exact: f64 = lq
        .to_vec()
        .iter()
        .map(|v| {
            let q1 = (v - base).exp() / TAU;
            q1 * (TAU * q1).ln()
        })
        .sum::<f64>()
        * TAU
        / n as f64;
    assert!(exact > 1e-3);

    let (z, lp) = m.sample_prior(20_000, &mut r).unwrap();
    let prop = propose(&m, &target, &z, &lp).unwrap();
    let (f, se) = free_energy_estimate(&prop.log_q.to_vec(), &prop.log_p.to_vec()).unwrap();
    assert!((f - exact).abs() < 3.0 * se, "{f} ± {se} vs {exact}");
}
