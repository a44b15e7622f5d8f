//! Conditional flow matching in flow coordinates and the ODE sampler.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::constants::{CFM_ODE_END, CFM_ODE_STEPS, CFM_T_MIN};
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::lie::GroupAction;
use crate::model::net::{Adam, ScoreNetwork};
use crate::model::train::{check_network, dataset_coords, TrainConfig, TrainReport};
use crate::par;
use crate::rng::{normal_vec, seeded};
use crate::schedule::NoiseSchedule;
use crate::sde::{place_at, prior_batch, SampleOutcome};

/// Conditional velocity coefficients `μ'_s + (σ'_s/σ_s)(τ_s − μ_s)` with `μ_s = ᾱ_s τ₀`.
pub fn cfm_coefficients(sched: &NoiseSchedule, tau_t: &[f64], tau_0: &[f64], s: f64) -> Result<Vec<f64>> {
    let (a, sig, da, dsig) = sched.continuous(s);
    if sig <= 0.0 {
        return Err(Error::DegenerateTime(format!("s = {s}")));
    }
    Ok(tau_0.iter().zip(tau_t).map(|(t0, t)| da * t0 + dsig / sig * (t - a * t0)).collect())
}

/// Conditional target velocity `Π(x_t)·cfm_coefficients` in data space.
pub fn cfm_target(g: &GroupAction, sched: &NoiseSchedule, x_t: &[f64], tau_t: &[f64], tau_0: &[f64], s: f64) -> Result<Vec<f64>> {
    let c = cfm_coefficients(sched, tau_t, tau_0, s)?;
    let fields = g.fields(x_t)?;
    let mut u = vec![0.0; g.dim_x];
    for (ci, f) in c.iter().zip(&fields) {
        for (uk, fk) in u.iter_mut().zip(f) {
            *uk += ci * fk;
        }
    }
    Ok(u)
}

/// Flow matching with a coefficient head: the network output `c` gives the
/// velocity `Π(x)c`, and the loss is `mean ‖Π(x)(c − c*)‖²` in data space.
pub fn train_cfm(
    net: &mut ScoreNetwork,
    g: &GroupAction,
    sched: &NoiseSchedule,
    data: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_network(net, g)?;
    let coords = dataset_coords(g, data)?;
    let start = Instant::now();
    let mut rng = seeded(cfg.seed);
    let mut opt = Adam::new(net.n_params(), cfg.learning_rate, cfg.adam_betas, cfg.adam_eps);
    let mut losses = Vec::with_capacity(cfg.steps);
    let (b, dx, dg) = (cfg.batch_size, g.dim_x, g.dim_g);
    for step in 0..cfg.steps {
        let mut x = Array2::zeros((b, dx));
        let mut target = Array2::zeros((b, dg));
        let mut frames = Vec::with_capacity(b);
        let mut times = Vec::with_capacity(b);
        for r in 0..b {
            let i = rng.random_range(0..coords.len());
            let s = rng.random_range(CFM_T_MIN..=1.0);
            let eta = normal_vec(&mut rng, dg);
            let (a, sig, da, dsig) = sched.continuous(s);
            let tau_t: Vec<f64> = coords[i].iter().zip(&eta).map(|(t0, e)| a * t0 + sig * e).collect();
            let x_t = place_at(g, &data.row(i).to_vec(), &coords[i], &tau_t)?;
            for c in 0..dg {
                target[[r, c]] = da * coords[i][c] + dsig * eta[c];
            }
            frames.push(g.fields(&x_t)?);
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&x_t[..]));
            times.push(s);
        }
        let (out, cache) = net.forward_cached(x.view(), &times);
        let mut loss = 0.0;
        let mut d_out = Array2::zeros((b, dg));
        for r in 0..b {
            let diff: Vec<f64> = (0..dg).map(|c| out[[r, c]] - target[[r, c]]).collect();
            let mut v = vec![0.0; dx];
            for (dc, f) in diff.iter().zip(&frames[r]) {
                for (vk, fk) in v.iter_mut().zip(f) {
                    *vk += dc * fk;
                }
            }
            loss += v.iter().map(|t| t * t).sum::<f64>();
            for (c, f) in frames[r].iter().enumerate() {
                d_out[[r, c]] = 2.0 / b as f64 * f.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        let grads = net.backward(&cache, &d_out);
        opt.update(net, &grads);
        if !net.all_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        losses.push(loss);
    }
    Ok(TrainReport { final_loss: *losses.last().expect("steps >= 1"), losses, wall_time_s: start.elapsed().as_secs_f64(), seed: cfg.seed })
}

/// Batched velocity coefficients at time `s`.
pub type CoefficientFn<'a> = dyn Fn(ArrayView2<f64>, f64) -> Array2<f64> + Sync + 'a;

/// Time grid `s = u²` with `u` uniform from 1 down to `√end`.
pub fn ode_grid(steps: usize, end: f64) -> Vec<f64> {
    let u_end = end.sqrt();
    (0..=steps).map(|j| 1.0 - (1.0 - u_end) * j as f64 / steps as f64).collect()
}

/// Integrates `dx/ds = Π(x)c(x, s)` from `s = 1` towards zero with Heun's
/// method in `u = √s` (where the conditional paths are linear near zero
/// noise). Each stage is applied through the group exponential, so states
/// never cross the singular set.
pub fn ode_integrate(g: &GroupAction, x_init: ArrayView2<f64>, coef: &CoefficientFn, steps: usize, end: f64) -> Result<SampleOutcome> {
    if x_init.ncols() != g.dim_x {
        return Err(Error::SizeMismatch(format!("initial states have {} columns, dim_x = {}", x_init.ncols(), g.dim_x)));
    }
    if steps < 1 || !(end > 0.0 && end < 1.0) {
        return Err(Error::InvalidParams("ODE integration needs steps >= 1 and 0 < end < 1".into()));
    }
    let grid = ode_grid(steps, end);
    let mut x = x_init.to_owned();
    let mut alive = vec![true; x.nrows()];
    for w in grid.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        let h = u1 - u0;
        let c1 = coef(x.view(), u0 * u0);
        let stage = |x: &Array2<f64>, c: &Array2<f64>, scale: f64, alive: &[bool]| -> Vec<Option<Vec<f64>>> {
            par::map_range(x.nrows(), |i| {
                if !alive[i] {
                    return None;
                }
                let delta: Vec<f64> = c.row(i).iter().map(|v| scale * v).collect();
                g.group_exp_apply(&delta, &x.row(i).to_vec()).ok().filter(|p| p.iter().all(|v| v.is_finite()))
            })
        };
        let pred = stage(&x, &c1, h * 2.0 * u0, &alive);
        let mut x_pred = x.clone();
        for (i, p) in pred.iter().enumerate() {
            match p {
                Some(p) => x_pred.row_mut(i).assign(&ndarray::ArrayView1::from(&p[..])),
                None => alive[i] = false,
            }
        }
        let c2 = coef(x_pred.view(), u1 * u1);
        // Average of the u-derivatives 2u₀c₁ and 2u₁c₂.
        let mut avg = Array2::zeros(c1.raw_dim());
        for i in 0..avg.nrows() {
            for k in 0..avg.ncols() {
                avg[[i, k]] = u0 * c1[[i, k]] + u1 * c2[[i, k]];
            }
        }
        let next = stage(&x, &avg, h, &alive);
        for (i, p) in next.into_iter().enumerate() {
            match p {
                Some(p) => x.row_mut(i).assign(&ndarray::ArrayView1::from(&p[..])),
                None => alive[i] = false,
            }
        }
    }
    let kept: Vec<usize> = (0..x.nrows()).filter(|&i| alive[i]).collect();
    let mut out = Array2::zeros((kept.len(), g.dim_x));
    for (r, &i) in kept.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    Ok(SampleOutcome { batch: SampleBatch::new(out), dropped: x.nrows() - kept.len(), trajectories: vec![] })
}

/// Samples a trained flow-matching network from the flow-coordinate prior.
pub fn ode_sample(net: &ScoreNetwork, g: &GroupAction, n: usize, seed: u64) -> Result<SampleOutcome> {
    check_network(net, g)?;
    let prior = prior_batch(g, n, seed)?;
    let coef = |x: ArrayView2<f64>, s: f64| net.forward(x, &vec![s; x.nrows()]);
    let mut out = ode_integrate(g, prior.view(), &coef, CFM_ODE_STEPS, CFM_ODE_END)?;
    out.batch.group = Some(g.id.to_string());
    out.batch.seed = Some(seed);
    Ok(out)
}

/// Integrates the analytic conditional field of a single start point `τ₀`
/// backward from `x_init`; angles are unwrapped near the conditional mean.
pub fn integrate_conditional(
    g: &GroupAction,
    sched: &NoiseSchedule,
    x_init: &[f64],
    tau_0: &[f64],
    steps: usize,
    end: f64,
) -> Result<Vec<f64>> {
    let coef = |x: ArrayView2<f64>, s: f64| {
        let (a, ..) = sched.continuous(s);
        let mu: Vec<f64> = tau_0.iter().map(|t| a * t).collect();
        let mut out = Array2::zeros((x.nrows(), g.dim_g));
        for i in 0..x.nrows() {
            let c = g
                .to_flow_coords(&x.row(i).to_vec())
                .and_then(|fc| cfm_coefficients(sched, &fc.unwrap_near(&mu), tau_0, s))
                .unwrap_or_else(|_| vec![f64::NAN; g.dim_g]);
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&c[..]));
        }
        out
    };
    let init = Array2::from_shape_vec((1, g.dim_x), x_init.to_vec()).expect("one row");
    let out = ode_integrate(g, init.view(), &coef, steps, end)?;
    if out.dropped > 0 {
        return Err(Error::NonFiniteState { step: steps, detail: "conditional flow left the domain".into() });
    }
    Ok(out.batch.x.row(0).to_vec())
}
