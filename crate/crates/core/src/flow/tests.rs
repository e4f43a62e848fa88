use super::*;
use crate::gauge::{gauge_transform, plaquettes};
use crate::tensor::no_grad;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::TAU;

const D: DType = DType::Double;
const S: DType = DType::Single;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn model(l: usize, n_layers: usize, hidden: usize, knots: usize, dtype: DType, seed: u64) -> FlowModel {
    let shape = FlowShape { l, n_layers, hidden, knots };
    let m = FlowModel::new(shape, dtype, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1000);
    let v: Vec<f64> = (0..m.num_params()).map(|_| r.random_range(-0.2..0.2)).collect();
    m.parameters().set_flat_values(&v).unwrap();
    m
}

fn random_logits(shape: &[usize], knots: usize, scale: f64, dtype: DType, r: &mut ChaCha8Rng) -> Tensor {
    let mut full = shape.to_vec();
    full.push(spline_channels(knots));
    let n = full.iter().product();
    Tensor::from_vec((0..n).map(|_| r.random_range(-scale..scale)).collect(), &full, dtype).unwrap()
}

fn uniform(n: usize, r: &mut ChaCha8Rng, dtype: DType) -> Tensor {
    Tensor::from_vec((0..n).map(|_| r.random_range(0.0..TAU)).collect(), &[n], dtype).unwrap()
}

#[test]
fn prior_log_prob_is_closed_form() {
    let (u, lp) = Prior::new(4).sample(3, &mut rng(0), D).unwrap();
    assert_eq!(u.theta().shape(), &[3, 2, 4, 4]);
    for v in lp.to_vec() {
        assert!((v + 32.0 * TAU.ln()).abs() < 1e-12);
    }
    assert!(u.theta().to_vec().iter().all(|&t| (0.0..TAU).contains(&t)));
}

#[test]
fn prior_cos_mean_vanishes() {
    let n_cfg = 31_250;
    let (u, _) = Prior::new(4).sample(n_cfg, &mut rng(1), D).unwrap();
    let th = u.theta().to_vec();
    let n = th.len() as f64;
    let mean = th.iter().map(|t| t.cos()).sum::<f64>() / n;
    assert!(mean.abs() < 3.0 * (0.5 / n).sqrt(), "mean cos {mean}");
}

#[test]
fn prior_is_reproducible() {
    let a = Prior::new(4).sample(2, &mut rng(5), S).unwrap().0.theta().to_vec();
    let b = Prior::new(4).sample(2, &mut rng(5), S).unwrap().0.theta().to_vec();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn prior_rejects_empty_batch() {
    assert!(Prior::new(4).sample(0, &mut rng(0), D).is_err());
}

#[test]
fn mask_cycle_partitions_links() {
    for l in [2, 4, 8, 12] {
        let masks = MaskSet::new(l, 48).unwrap();
        let mut count = vec![0; 2 * l * l];
        for m in &masks.layers[..CYCLE] {
            for (i, &a) in m.active.iter().enumerate() {
                count[i] += usize::from(a);
            }
        }
        assert!(count.iter().all(|&c| c == 1), "L={l}");
        let mut six = vec![0; 2 * l * l];
        for m in &masks.layers {
            for &lk in &m.links {
                six[lk] += 1;
            }
        }
        assert!(six.iter().all(|&c| c == 6));
    }
}

#[test]
fn unsupported_sizes_are_rejected() {
    for l in [3, 5, 6, 10] {
        assert!(matches!(MaskSet::new(l, 8), Err(Error::UnsupportedLattice(_))));
    }
}

/// Links of the plaquette at `(x0, x1)` listed directly.
fn plaquette_links(l: usize, x0: usize, x1: usize) -> [usize; 4] {
    let f = |mu: usize, a: usize, b: usize| mu * l * l + (a % l) * l + b % l;
    [f(1, x0, x1), f(0, x0, x1 + 1), f(1, x0 + 1, x1), f(0, x0, x1)]
}

#[test]
fn active_links_do_not_interact() {
    for l in [4, 8] {
        for m in MaskSet::new(l, 8).unwrap().layers {
            for x0 in 0..l {
                for x1 in 0..l {
                    let n = plaquette_links(l, x0, x1).iter().filter(|&&k| m.active[k]).count();
                    assert!(n <= 1);
                    let s = x0 * l + x1;
                    assert_eq!(m.frozen_plaquettes[s], n == 0);
                    let mut r0 = plaquette_links(l, x0, x1).to_vec();
                    r0.extend(plaquette_links(l, x0 + 1, x1));
                    r0.retain(|&k| k != plaquette_links(l, x0, x1)[2]);
                    assert_eq!(m.frozen_loops0[s], r0.iter().all(|&k| !m.active[k]));
                    let mut r1 = plaquette_links(l, x0, x1).to_vec();
                    r1.extend(plaquette_links(l, x0, x1 + 1));
                    r1.retain(|&k| k != plaquette_links(l, x0, x1)[1]);
                    assert_eq!(m.frozen_loops1[s], r1.iter().all(|&k| !m.active[k]));
                }
            }
            for &s in &m.sites {
                assert!(plaquette_links(l, s / l, s % l).contains(&(m.mu * l * l + s)));
            }
        }
    }
}

#[test]
fn half_of_plaquettes_are_frozen() {
    let m = LayerMask::new(8, 3).unwrap();
    assert_eq!(m.num_active(), 16);
    assert_eq!(m.frozen_plaquettes.iter().filter(|&&f| f).count(), 32);
}

#[test]
fn zero_logits_give_identity_spline() {
    let mut r = rng(3);
    let theta = uniform(50, &mut r, D);
    let sp = CircularSpline::from_logits(&Tensor::zeros(&[50, spline_channels(8)], D), 8).unwrap();
    let (y, ld) = sp.forward(&theta).unwrap();
    for (a, b) in y.to_vec().iter().zip(theta.to_vec()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(ld.to_vec().iter().all(|&v| v == 0.0));
    let (x, li) = sp.inverse(&theta).unwrap();
    for (a, b) in x.to_vec().iter().zip(theta.to_vec()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(li.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn spline_knots_span_the_circle() {
    let mut r = rng(4);
    let sp = CircularSpline::from_logits(&random_logits(&[7], 8, 3.0, D, &mut r), 8).unwrap();
    let w = sp.w.to_vec();
    let h = sp.h.to_vec();
    for i in 0..7 {
        let sw: f64 = w[i * 8..(i + 1) * 8].iter().sum();
        let sh: f64 = h[i * 8..(i + 1) * 8].iter().sum();
        assert!((sw - TAU).abs() < 1e-12 && (sh - TAU).abs() < 1e-12);
        assert!(w[i * 8..(i + 1) * 8].iter().all(|&v| v >= TAU * MIN_BIN * 0.999));
    }
    assert!(sp.d.to_vec().iter().all(|&v| v > MIN_DERIV * 0.999));
}

#[test]
fn spline_round_trip_single() {
    let mut r = rng(6);
    let n = 400;
    let sp = CircularSpline::from_logits(&random_logits(&[n], 8, 1.0, S, &mut r), 8).unwrap();
    let theta = uniform(n, &mut r, S);
    let (y, ld) = sp.forward(&theta).unwrap();
    let y = y.wrap_angle();
    let (x, li) = sp.inverse(&y).unwrap();
    for (a, b) in x.to_vec().iter().zip(theta.to_vec()) {
        assert!(angle_gap(*a, b) < 1e-5, "{a} vs {b}");
    }
    for (a, b) in ld.to_vec().iter().zip(li.to_vec()) {
        assert!((a + b).abs() < 1e-5);
    }
}

#[test]
fn spline_round_trip_double() {
    let mut r = rng(7);
    let n = 400;
    let sp = CircularSpline::from_logits(&random_logits(&[n], 8, 3.0, D, &mut r), 8).unwrap();
    let y = uniform(n, &mut r, D);
    let (x, li) = sp.inverse(&y).unwrap();
    let (y2, ld) = sp.forward(&x.wrap_angle()).unwrap();
    for (a, b) in y2.to_vec().iter().zip(y.to_vec()) {
        assert!(angle_gap(*a, b) < 1e-11);
    }
    for (a, b) in ld.to_vec().iter().zip(li.to_vec()) {
        assert!((a + b).abs() < 1e-10);
    }
}

#[test]
fn spline_log_deriv_matches_finite_difference() {
    let mut r = rng(8);
    let n = 200;
    let logits = random_logits(&[n], 8, 2.0, D, &mut r);
    let sp = CircularSpline::from_logits(&logits, 8).unwrap();
    let theta: Vec<f64> = (0..n).map(|_| r.random_range(0.01..TAU - 0.01)).collect();
    let (_, ld) = sp.forward(&Tensor::from_vec(theta.clone(), &[n], D).unwrap()).unwrap();
    let h = 1e-6;
    let shifted = |dx: f64| {
        let t = Tensor::from_vec(theta.iter().map(|v| v + dx).collect(), &[n], D).unwrap();
        sp.forward(&t).unwrap().0.to_vec()
    };
    let (p, m) = (shifted(h), shifted(-h));
    for i in 0..n {
        let fd = (p[i] - m[i]) / (2.0 * h);
        let an = ld.to_vec()[i].exp();
        assert!((fd - an).abs() / an < 1e-5, "{i}: fd {fd} analytic {an}");
    }
}

#[test]
fn spline_is_monotone() {
    let mut r = rng(9);
    let lg = random_logits(&[1], 8, 3.0, D, &mut r).to_vec();
    let n = 500;
    let rows: Vec<f64> = (0..n).flat_map(|_| lg.clone()).collect();
    let logits = Tensor::from_vec(rows, &[n, spline_channels(8)], D).unwrap();
    let sp = CircularSpline::from_logits(&logits, 8).unwrap();
    let theta: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let (y, _) = sp.forward(&Tensor::from_vec(theta, &[n], D).unwrap()).unwrap();
    let y = y.to_vec();
    assert!(y.windows(2).all(|w| w[1] > w[0]));
    assert!(y[0].abs() < 1e-12 && y[n - 1] < TAU);
    let (x, _) = sp.inverse(&Tensor::from_vec(y, &[n], D).unwrap()).unwrap();
    assert!(x.to_vec().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn spline_is_smooth_across_the_seam() {
    let mut r = rng(10);
    let lg = random_logits(&[1], 8, 3.0, D, &mut r).to_vec();
    let logits = Tensor::from_vec([lg.clone(), lg].concat(), &[2, spline_channels(8)], D).unwrap();
    let sp = CircularSpline::from_logits(&logits, 8).unwrap();
    let (_, ld) = sp.forward(&Tensor::from_vec(vec![0.0, TAU - 1e-9], &[2], D).unwrap()).unwrap();
    let ld = ld.to_vec();
    assert!((ld[0] - ld[1]).abs() < 1e-6);
}

#[test]
fn spline_rejects_out_of_range() {
    let sp = CircularSpline::from_logits(&Tensor::zeros(&[2, spline_channels(4)], D), 4).unwrap();
    for bad in [-0.1, TAU + 0.1, f64::NAN] {
        let t = Tensor::from_vec(vec![1.0, bad], &[2], D).unwrap();
        assert!(matches!(sp.forward(&t), Err(Error::Domain { .. })));
        assert!(matches!(sp.inverse(&t), Err(Error::Domain { .. })));
    }
    assert!(CircularSpline::from_logits(&Tensor::zeros(&[2, 5], D), 4).is_err());
}

#[test]
fn spline_gradient_matches_finite_difference() {
    let mut r = rng(11);
    let knots = 3;
    let n = 4;
    let base = random_logits(&[n], knots, 1.5, D, &mut r).to_vec();
    let theta = uniform(n, &mut r, D);
    let weights: Vec<f64> = (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = |logits: &Tensor| -> Tensor {
        let sp = CircularSpline::from_logits(logits, knots).unwrap();
        let (y, ld) = sp.forward(&theta).unwrap();
        let (x, li) = sp.inverse(&theta).unwrap();
        let w = Tensor::from_vec(weights.clone(), &[2, n], D).unwrap();
        let a = Tensor::stack(&[y.add(&ld).unwrap(), x.add(&li).unwrap()], 0).unwrap();
        a.mul(&w).unwrap().sum()
    };
    let p = Tensor::parameter(base.clone(), &[n, spline_channels(knots)], D).unwrap();
    f(&p).backward().unwrap();
    let g = p.grad().unwrap();
    let h = 1e-6;
    let mut err = 0.0f64;
    let mut norm = 0.0f64;
    for i in 0..base.len() {
        let eval = |dx: f64| {
            let mut v = base.clone();
            v[i] += dx;
            f(&Tensor::from_vec(v, &[n, spline_channels(knots)], D).unwrap()).item().unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        err = err.max((fd - g[i]).abs());
        norm = norm.max(fd.abs());
    }
    assert!(err / norm < 1e-6, "rel err {}", err / norm);
}

#[test]
fn fresh_model_is_identity() {
    let m = FlowModel::new(FlowShape { l: 4, n_layers: 8, hidden: 4, knots: 8 }, D, &mut rng(12)).unwrap();
    let (z, lp) = m.sample_prior(3, &mut rng(13)).unwrap();
    let (phi, lq) = m.forward(&z, &lp).unwrap();
    for (a, b) in phi.theta().to_vec().iter().zip(z.theta().to_vec()) {
        assert!(angle_gap(*a, b) < 1e-12);
    }
    assert_eq!(lq.to_vec(), lp.to_vec());
    let (zp, lq2) = m.reverse(&phi).unwrap();
    for (a, b) in zp.theta().to_vec().iter().zip(z.theta().to_vec()) {
        assert!(angle_gap(*a, b) < 1e-12);
    }
    assert_eq!(lq2.to_vec(), lp.to_vec());
}

#[test]
fn coupling_leaves_inactive_links_untouched() {
    let m = model(4, 8, 4, 8, S, 14);
    let (z, _) = m.sample_prior(2, &mut rng(15)).unwrap();
    for layer in &m.layers {
        let (u, _) = layer.forward(&z).unwrap();
        let a = u.theta().to_vec();
        let b = z.theta().to_vec();
        let mut changed = 0;
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if layer.mask.active[i % 32] {
                changed += usize::from(x != y);
            } else {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(changed > 0);
    }
}

#[test]
fn coupling_updates_active_plaquette() {
    let m = model(4, 8, 4, 8, D, 16);
    let (z, _) = m.sample_prior(2, &mut rng(17)).unwrap();
    let layer = &m.layers[5];
    let (features, p) = layer.features(&z).unwrap();
    assert_eq!(features.shape(), &[2, FEATURE_CHANNELS, 4, 4]);
    let (u, _) = layer.forward(&z).unwrap();
    let p_new = plaquettes(&u).unwrap().to_vec();
    let p = p.to_vec();
    let (fu, _) = layer.features(&u).unwrap();
    assert_eq!(fu.to_vec(), features.to_vec());
    for b in 0..2 {
        for s in 0..16 {
            let frozen = layer.mask.frozen_plaquettes[s];
            if frozen {
                assert!(angle_gap(p[b * 16 + s], p_new[b * 16 + s]) < 1e-12);
            }
        }
    }
}

fn gauge(u: &LinkField, seed: u64) -> LinkField {
    let mut r = rng(seed);
    let n = u.batch() * u.volume();
    let om = Tensor::from_vec((0..n).map(|_| r.random_range(-5.0..5.0)).collect(), &[u.batch(), u.l(), u.l()], u.dtype())
        .unwrap();
    gauge_transform(u, &om).unwrap()
}

/// Same random gauge transformation applied to two fields.
fn gauge_pair(a: &LinkField, b: &LinkField, seed: u64) -> (LinkField, LinkField) {
    (gauge(a, seed), gauge(b, seed))
}

#[test]
fn flow_is_gauge_equivariant() {
    let m = model(4, 8, 4, 6, S, 18);
    let (z, lp) = m.sample_prior(2, &mut rng(19)).unwrap();
    let (phi, lq) = m.forward(&z, &lp).unwrap();
    let (gz, gphi) = gauge_pair(&z, &phi, 20);
    let (gphi2, lq_g) = m.forward(&gz, &lp).unwrap();
    for (a, b) in gphi2.theta().to_vec().iter().zip(gphi.theta().to_vec()) {
        assert!(angle_gap(*a, b) < 1e-4, "{a} vs {b}");
    }
    let (_, lq_rev) = m.reverse(&gphi).unwrap();
    for ((a, b), c) in lq.to_vec().iter().zip(lq_g.to_vec()).zip(lq_rev.to_vec()) {
        assert!((a - b).abs() < 1e-4 && (a - c).abs() < 1e-4, "{a} {b} {c}");
    }
}

fn round_trip(l: usize, dtype: DType, seed: u64) -> (f64, f64) {
    let m = model(l, 16, 4, 8, dtype, seed);
    let (z, lp) = m.sample_prior(3, &mut rng(seed + 1)).unwrap();
    let (phi, lq) = no_grad(|| m.forward(&z, &lp)).unwrap();
    let (zp, lq_rev) = no_grad(|| m.reverse(&phi)).unwrap();
    let gap = z
        .theta()
        .to_vec()
        .iter()
        .zip(zp.theta().to_vec())
        .map(|(a, b)| angle_gap(*a, b))
        .fold(0.0, f64::max);
    let dq = lq.to_vec().iter().zip(lq_rev.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (gap, dq)
}

#[test]
fn flow_round_trip_single() {
    let (gap, dq) = round_trip(8, S, 21);
    assert!(gap < 1e-4, "gap {gap}");
    assert!(dq < 1e-4, "log q gap {dq}");
}

#[test]
fn flow_round_trip_double() {
    let (gap, dq) = round_trip(8, D, 22);
    assert!(gap < 1e-8, "gap {gap}");
    assert!(dq < 1e-8, "log q gap {dq}");
}

#[test]
fn flow_reverse_then_forward_is_identity() {
    let m = model(4, 8, 4, 8, D, 23);
    let (phi, _) = m.sample_prior(2, &mut rng(24)).unwrap();
    let (z, lq) = m.reverse(&phi).unwrap();
    let (phi2, lq2) = m.forward(&z, &m.prior.log_prob(&z)).unwrap();
    for (a, b) in phi2.theta().to_vec().iter().zip(phi.theta().to_vec()) {
        assert!(angle_gap(*a, b) < 1e-9);
    }
    for (a, b) in lq.to_vec().iter().zip(lq2.to_vec()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn flow_log_q_matches_numerical_jacobian() {
    let m = model(2, 8, 3, 4, D, 25);
    let mut r = rng(26);
    let z: Vec<f64> = (0..8).map(|_| r.random_range(0.5..TAU - 0.5)).collect();
    let zf = LinkField::from_vec(z.clone(), 1, 2, D).unwrap();
    let (_, lq) = m.forward(&zf, &m.prior.log_prob(&zf)).unwrap();
    let eval = |v: &[f64]| {
        let u = LinkField::from_vec(v.to_vec(), 1, 2, D).unwrap();
        m.forward(&u, &m.prior.log_prob(&u)).unwrap().0.theta().to_vec()
    };
    let base = eval(&z);
    let h = 1e-6;
    let mut jac = DMatrix::<f64>::zeros(8, 8);
    for j in 0..8 {
        let mut p = z.clone();
        let mut q = z.clone();
        p[j] += h;
        q[j] -= h;
        let (fp, fq) = (eval(&p), eval(&q));
        for i in 0..8 {
            let mut d = fp[i] - fq[i];
            d -= TAU * (d / TAU).round();
            jac[(i, j)] = d / (2.0 * h);
        }
    }
    assert_eq!(base.len(), 8);
    let logdet = jac.determinant().abs().ln();
    let expect = m.prior.log_density() - logdet;
    assert!((lq.to_vec()[0] - expect).abs() < 1e-6, "{} vs {expect}", lq.to_vec()[0]);
}

#[test]
fn single_link_density_integrates_to_one() {
    let m = model(2, 1, 3, 8, D, 27);
    let link = m.layers[0].mask.links[0];
    let mut r = rng(28);
    let rest: Vec<f64> = (0..8).map(|_| r.random_range(0.0..TAU)).collect();
    let n = 4000;
    let mut values = Vec::with_capacity(n * 8);
    for i in 0..n {
        let mut v = rest.clone();
        v[link] = TAU * (i as f64 + 0.5) / n as f64;
        values.extend(v);
    }
    let phi = LinkField::from_vec(values, n, 2, D).unwrap();
    let (_, lq) = m.reverse(&phi).unwrap();
    let integral: f64 = lq.to_vec().iter().map(|v| v.exp()).sum::<f64>() * TAU / n as f64;
    let normalized = integral * TAU.powi(7);
    assert!((normalized - 1.0).abs() < 1e-4, "{normalized}");
    assert!(lq.to_vec().iter().any(|v| (v - m.prior.log_density()).abs() > 1e-3));
}

#[test]
fn flow_is_batch_permutation_equivariant() {
    let m = model(4, 8, 4, 8, D, 29);
    let (z, lp) = m.sample_prior(3, &mut rng(30)).unwrap();
    let (phi, lq) = m.forward(&z, &lp).unwrap();
    let perm = [2, 0, 1];
    let zp = LinkField::new(&z.theta().index_select(0, &perm).unwrap()).unwrap();
    let (phip, lqp) = m.forward(&zp, &lp).unwrap();
    assert_eq!(phip.theta().to_vec(), phi.theta().index_select(0, &perm).unwrap().to_vec());
    assert_eq!(lqp.to_vec(), lq.index_select(0, &perm).unwrap().to_vec());
}

#[test]
fn reverse_graph_size_is_independent_of_lattice() {
    let counts: Vec<usize> = [4, 8, 12]
        .iter()
        .map(|&l| {
            let m = model(l, 8, 2, 4, S, 31);
            let (phi, _) = m.sample_prior(2, &mut rng(32)).unwrap();
            let (_, lq) = m.reverse(&phi).unwrap();
            lq.sum().graph_stats().unwrap().node_count
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn frozen_copy_is_independent() {
    let m = model(4, 2, 2, 4, D, 33);
    let c = m.frozen_copy().unwrap();
    assert_eq!(c.parameters().flat_values(), m.parameters().flat_values());
    let v: Vec<f64> = vec![0.0; m.num_params()];
    m.parameters().set_flat_values(&v).unwrap();
    assert_ne!(c.parameters().flat_values(), v);
}

#[test]
fn wrong_lattice_is_rejected() {
    let m = model(4, 2, 2, 4, D, 34);
    let (z, lp) = Prior::new(8).sample(1, &mut rng(0), D).unwrap();
    assert!(m.forward(&z, &lp).is_err());
    assert!(m.reverse(&z).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spline_inverts_for_any_params(seed in 0u64..1000, knots in 1usize..9, scale in 0.1f64..4.0) {
        let mut r = rng(seed);
        let n = 32;
        let sp = CircularSpline::from_logits(&random_logits(&[n], knots, scale, D, &mut r), knots).unwrap();
        let theta = uniform(n, &mut r, D);
        let (y, ld) = sp.forward(&theta).unwrap();
        prop_assert!(y.to_vec().iter().all(|v| (-1e-12..TAU + 1e-9).contains(v)));
        let (x, li) = sp.inverse(&y.wrap_angle()).unwrap();
        for (a, b) in x.to_vec().iter().zip(theta.to_vec()) {
            prop_assert!(angle_gap(*a, b) < 1e-9);
        }
        for (a, b) in ld.to_vec().iter().zip(li.to_vec()) {
            prop_assert!((a + b).abs() < 1e-8);
        }
    }

    #[test]
    fn log_q_is_gauge_invariant(seed in 0u64..1000) {
        let m = model(4, 8, 3, 4, S, seed);
        let (phi, _) = m.sample_prior(2, &mut rng(seed + 7)).unwrap();
        let (_, a) = m.reverse(&phi).unwrap();
        let (_, b) = m.reverse(&gauge(&phi, seed + 9)).unwrap();
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            prop_assert!((x - y).abs() < 1e-4);
        }
    }
}

