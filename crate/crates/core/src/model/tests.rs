use super::*;
use crate::lie::{make_group, GroupId, GroupParams};
use crate::metrics::w2_exact;
use crate::rng::{normal_vec, seeded};
use crate::schedule::{make_schedule, NoiseSchedule, Schedule, ScheduleKind};
use crate::sde::{forward_with_eta, prior_batch};
use crate::Error;
use approx::assert_abs_diff_eq;
use ndarray::{Array2, ArrayView2};

fn group(id: GroupId) -> GroupAction {
    make_group(id, GroupParams::default()).unwrap()
}

#[test]
fn default_network_shape() {
    let g = group(GroupId::So3Dilation);
    let net = default_network(&g, 0).unwrap();
    assert_eq!(net.layer_sizes, vec![3 + 32, 128, 128, 128, 3]);
}

#[test]
fn empty_dataset_is_rejected() {
    let g = group(GroupId::So2Dilation);
    let sched = make_schedule(ScheduleKind::Cosine, 10).unwrap();
    let mut net = default_network(&g, 0).unwrap();
    let empty = Array2::<f64>::zeros((0, 2));
    let cfg = TrainConfig { steps: 1, ..Default::default() };
    assert!(matches!(train_score(&mut net, &g, &sched, empty.view(), &cfg), Err(Error::InvalidParams(_))));
    assert!(matches!(train_cfm(&mut net, &g, &sched, empty.view(), &cfg), Err(Error::InvalidParams(_))));
    let bad = TrainConfig { batch_size: 0, ..Default::default() };
    let one = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    assert!(train_score(&mut net, &g, &sched, one.view(), &bad).is_err());
}

#[test]
fn single_point_score_converges_to_conditional_score() {
    let g = group(GroupId::So2Dilation);
    let (a, s) = (0.8, 0.6);
    let sched = NoiseSchedule { kind: ScheduleKind::Cosine, steps: 1, beta: vec![0.5], alpha_bar: vec![a], sigma: vec![s] };
    let x0 = [1.5, 0.5];
    let data = Array2::from_shape_vec((1, 2), x0.to_vec()).unwrap();
    let mut net = ScoreNetwork::new(2, 2, &[64, 64], 8, Activation::Silu, &mut seeded(1)).unwrap();
    let cfg = TrainConfig { steps: 5000, batch_size: 128, seed: 2, ..Default::default() };
    let report = train_score(&mut net, &g, &sched, data.view(), &cfg).unwrap();
    assert!(report.tail_mean(500) < report.head_mean(500));
    let tau0 = g.to_flow_coords(&x0).unwrap().values;
    let score = network_score(&net, &sched);
    let mut rng = seeded(3);
    let n = 500;
    let mut gap = 0.0;
    for _ in 0..n {
        let eta = normal_vec(&mut rng, 2);
        let d = forward_with_eta(&g, &sched, &x0, 0, &eta).unwrap();
        // Near the principal-branch cut the wrapped score differs; stay clear of it.
        if d.tau_t[1].abs() > 2.5 {
            continue;
        }
        let x = Array2::from_shape_vec((1, 2), d.x_t.clone()).unwrap();
        let got = score(x.view(), 0);
        for c in 0..2 {
            let want = -(d.tau_t[c] - a * tau0[c]) / (s * s);
            gap += (got[[0, c]] - want).powi(2);
        }
    }
    gap /= n as f64;
    assert!(gap <= 1e-2, "mean squared gap {gap}");
}

#[test]
fn cfm_target_on_path_and_translation_reduction() {
    let sched = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let g = group(GroupId::So2Dilation);
    let tau0 = [0.2, 0.7];
    let s = 0.4;
    let (a, sig, da, dsig) = sched.continuous(s);
    let mu: Vec<f64> = tau0.iter().map(|t| a * t).collect();
    let x = g.from_flow_coords(&mu).unwrap();
    let u = cfm_target(&g, &sched, &x, &mu, &tau0, s).unwrap();
    let want = [da * tau0[0] * x[0] - da * tau0[1] * x[1], da * tau0[0] * x[1] + da * tau0[1] * x[0]];
    for k in 0..2 {
        assert_abs_diff_eq!(u[k], want[k], epsilon = 1e-12);
    }

    let t2 = group(GroupId::Translation { n: 2 });
    let x0 = [1.0, -2.0];
    let xt = [0.3, 0.4];
    let u = cfm_target(&t2, &sched, &xt, &xt, &x0, s).unwrap();
    for k in 0..2 {
        let mu = a * x0[k];
        assert_abs_diff_eq!(u[k], da * x0[k] + dsig / sig * (xt[k] - mu), epsilon = 1e-12);
    }
    let (_, sig0, ..) = sched.continuous(0.0);
    assert_eq!(sig0, 0.0);
    assert!(matches!(cfm_target(&t2, &sched, &xt, &xt, &x0, 0.0), Err(Error::DegenerateTime(_))));
}

#[test]
fn backward_conditional_flow_recovers_start() {
    let sched = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let mut rng = seeded(5);
    for id in [GroupId::So2Dilation, GroupId::Translation { n: 2 }] {
        let g = group(id);
        for x0 in [[1.2, 0.4], [-0.5, -2.0], [2.5, -0.1]] {
            let tau0 = g.to_flow_coords(&x0).unwrap().values;
            let eta = normal_vec(&mut rng, 2);
            let (a, sig, ..) = sched.continuous(1.0);
            let tau1: Vec<f64> = (0..2).map(|k| a * tau0[k] + sig * eta[k]).collect();
            let x1 = g.from_flow_coords(&tau1).unwrap();
            let back = integrate_conditional(&g, &sched, &x1, &tau0, 1000, 1e-8).unwrap();
            let err = ((back[0] - x0[0]).powi(2) + (back[1] - x0[1]).powi(2)).sqrt();
            assert!(err <= 1e-3, "{:?} x0={x0:?} err={err}", g.id);
        }
    }
}

#[test]
fn zero_velocity_keeps_prior() {
    let g = group(GroupId::So2Dilation);
    let prior = prior_batch(&g, 50, 9).unwrap();
    let zero = |x: ArrayView2<f64>, _s: f64| Array2::zeros((x.nrows(), 2));
    let out = ode_integrate(&g, prior.view(), &zero, 20, 1e-8).unwrap();
    assert_eq!(out.batch.x, prior);
}

#[test]
fn analytic_marginal_field_reaches_gaussian_target() {
    let sched = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let g = group(GroupId::So2Dilation);
    let (m, sd) = ([0.3, 1.0], [0.2, 0.3]);
    // τ_s ~ N(a m, a² sd² + σ²), transported by its own linear Gaussian flow.
    let coef = |x: ArrayView2<f64>, s: f64| {
        let (a, sig, da, dsig) = sched.continuous(s);
        let mut out = Array2::zeros((x.nrows(), 2));
        for i in 0..x.nrows() {
            let tau = g.to_flow_coords(&x.row(i).to_vec()).unwrap();
            let tau = tau.unwrap_near(&[a * m[0], a * m[1]]);
            for k in 0..2 {
                let std = (a * a * sd[k] * sd[k] + sig * sig).sqrt();
                let dstd = (a * da * sd[k] * sd[k] + sig * dsig) / std;
                out[[i, k]] = da * m[k] + dstd / std * (tau[k] - a * m[k]);
            }
        }
        out
    };
    let n = 1024;
    let prior = prior_batch(&g, n, 21).unwrap();
    let out = ode_integrate(&g, prior.view(), &coef, 200, 1e-8).unwrap();
    assert_eq!(out.dropped, 0);
    let mut rng = seeded(22);
    let truth = Array2::from_shape_fn((n, 2), |_| 0.0);
    let mut truth = truth;
    for i in 0..n {
        let e = normal_vec(&mut rng, 2);
        let p = g.from_flow_coords(&[m[0] + sd[0] * e[0], m[1] + sd[1] * e[1]]).unwrap();
        truth.row_mut(i).assign(&ndarray::ArrayView1::from(&p[..]));
    }
    let w2 = w2_exact(out.batch.x.view(), truth.view()).unwrap();
    assert!(w2 <= 0.1, "W2 {w2}");
}

#[test]
fn score_of_network_divides_by_sigma() {
    let g = group(GroupId::Translation { n: 2 });
    let sched = make_schedule(ScheduleKind::Cosine, 10).unwrap();
    let mut net = default_network(&g, 4).unwrap();
    let p: Vec<f64> = net.params_flat().iter().map(|v| v + 0.01).collect();
    net.set_params_flat(&p).unwrap();
    let x = Array2::from_shape_vec((2, 2), vec![0.1, 0.2, -0.3, 0.4]).unwrap();
    let raw = net.forward(x.view(), &[0.5, 0.5]);
    let s = network_score(&net, &sched)(x.view(), 4);
    for (r, v) in raw.iter().zip(s.iter()) {
        assert_abs_diff_eq!(*v, r / sched.sigma(4), epsilon = 1e-12);
    }
}
