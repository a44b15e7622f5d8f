//! Forward corruption, the Euler–Maruyama oracle, reverse-time sampling and
//! the zero-drift bridge.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::lie::{vecops, GroupAction};
use crate::par;
use crate::rng::{normal_vec, stream, Rng};
use crate::schedule::Schedule;

/// One draw from `p(τ_t | τ₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardDraw {
    pub x_t: Vec<f64>,
    pub tau_t: Vec<f64>,
    pub tau_0: Vec<f64>,
    pub eta: Vec<f64>,
    pub t: usize,
}

/// A stored integration path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Array2<f64>,
    pub times: Vec<f64>,
    pub seed: Option<u64>,
    /// Some state was pushed out of the singular set.
    pub clamped: bool,
}

/// Point with flow coordinates `tau_t`, reached from `x0` (whose coordinates are `tau_0`).
/// Constrained groups move `x0` by the group exponential of the coordinate change.
pub fn place_at(g: &GroupAction, x0: &[f64], tau_0: &[f64], tau_t: &[f64]) -> Result<Vec<f64>> {
    if g.is_density_model() {
        g.from_flow_coords(tau_t)
    } else {
        let delta: Vec<f64> = tau_t.iter().zip(tau_0).map(|(a, b)| a - b).collect();
        g.group_exp_apply(&delta, x0)
    }
}

/// `τ_t = mean_coeff·τ₀ + σ_t η` for a given `η`.
pub fn forward_with_eta(g: &GroupAction, sched: &dyn Schedule, x0: &[f64], t: usize, eta: &[f64]) -> Result<ForwardDraw> {
    if t >= sched.steps() {
        return Err(Error::InvalidParams(format!("time index {t} outside 0..{}", sched.steps())));
    }
    if eta.len() != g.dim_g {
        return Err(Error::SizeMismatch(format!("eta has {} entries, dim_g = {}", eta.len(), g.dim_g)));
    }
    let tau_0 = g.to_flow_coords(x0)?.values;
    let (a, s) = (sched.mean_coeff(t), sched.sigma(t));
    let tau_t: Vec<f64> = tau_0.iter().zip(eta).map(|(t0, e)| a * t0 + s * e).collect();
    let x_t = place_at(g, x0, &tau_0, &tau_t)?;
    Ok(ForwardDraw { x_t, tau_t, tau_0, eta: eta.to_vec(), t })
}

pub fn forward_sample(g: &GroupAction, sched: &dyn Schedule, x0: &[f64], t: usize, rng: &mut Rng) -> Result<ForwardDraw> {
    let eta = normal_vec(rng, g.dim_g);
    forward_with_eta(g, sched, x0, t, &eta)
}

/// Zero-drift corruption `τ_t = τ₀ + √(Σβ) η`; the schedule must carry no drift.
pub fn bridge_forward(g: &GroupAction, sched: &dyn Schedule, x0: &[f64], t: usize, rng: &mut Rng) -> Result<ForwardDraw> {
    if sched.has_drift() {
        return Err(Error::InvalidParams("bridge corruption needs a zero-drift schedule".into()));
    }
    forward_sample(g, sched, x0, t, rng)
}

/// One Euler–Maruyama step of `dx = [β Π f + ½γ² Ω x] dt + γ Π dW` with increment `√dt ξ`.
pub fn em_step(
    g: &GroupAction,
    x: &[f64],
    beta: f64,
    gamma: f64,
    f: &[f64],
    dt: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    let gens = g.generators(x)?;
    let mut out = x.to_vec();
    let sq = dt.sqrt();
    for (i, gen) in gens.iter().enumerate() {
        let field = gen.apply(x);
        vecops::add_scaled(&mut out, beta * f[i] * dt + gamma * sq * xi[i], &field);
        vecops::add_scaled(&mut out, 0.5 * gamma * gamma * dt, &gen.apply_linear(&field));
    }
    Ok(out)
}

/// Euler–Maruyama path of the forward SDE with externally supplied increments
/// `noise(step) ~ N(0, I_dim_g)`.
#[allow(clippy::too_many_arguments)]
pub fn euler_maruyama_with_noise(
    g: &GroupAction,
    x0: &[f64],
    beta_fn: &dyn Fn(f64) -> f64,
    gamma_fn: &dyn Fn(f64) -> f64,
    f_fn: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    t_end: f64,
    steps: usize,
    noise: &mut dyn FnMut(usize) -> Vec<f64>,
) -> Result<Trajectory> {
    if steps < 1 {
        return Err(Error::InvalidParams("Euler-Maruyama needs at least one step".into()));
    }
    let dt = t_end / steps as f64;
    let mut states = Array2::zeros((steps + 1, g.dim_x));
    let mut x = x0.to_vec();
    let mut clamped = false;
    states.row_mut(0).assign(&ndarray::ArrayView1::from(&x[..]));
    let mut times = vec![0.0];
    for k in 0..steps {
        let t = k as f64 * dt;
        clamped |= g.regularize(&mut x);
        let f = f_fn(&x)?;
        x = em_step(g, &x, beta_fn(t), gamma_fn(t), &f, dt, &noise(k))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k, detail: "Euler-Maruyama path diverged".into() });
        }
        states.row_mut(k + 1).assign(&ndarray::ArrayView1::from(&x[..]));
        times.push((k + 1) as f64 * dt);
    }
    Ok(Trajectory { states, times, seed: None, clamped })
}

#[allow(clippy::too_many_arguments)]
pub fn euler_maruyama_forward(
    g: &GroupAction,
    x0: &[f64],
    beta_fn: &dyn Fn(f64) -> f64,
    gamma_fn: &dyn Fn(f64) -> f64,
    f_fn: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    t_end: f64,
    steps: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let dim = g.dim_g;
    euler_maruyama_with_noise(g, x0, beta_fn, gamma_fn, f_fn, t_end, steps, &mut |_| normal_vec(rng, dim))
}

/// Conditional score `−η/σ_t` in flow coordinates.
pub fn conditional_score(sched: &dyn Schedule, t: usize, eta: &[f64]) -> Result<Vec<f64>> {
    let s = sched.sigma(t);
    if s == 0.0 {
        return Err(Error::DegenerateTime(format!("index {t}")));
    }
    Ok(eta.iter().map(|e| -e / s).collect())
}

/// Generalized score `Π_iᵀ∇ log p(x)` from a score in flow coordinates:
/// `s_x = s_τ − ∇·Π_i` (the Jacobian of the flow chart).
pub fn generalized_score(g: &GroupAction, x: &[f64], score_tau: &[f64]) -> Result<Vec<f64>> {
    let div = g.divergence_scalars(x)?;
    Ok(score_tau.iter().zip(div).map(|(s, d)| s - d).collect())
}

/// Inverse of [`generalized_score`].
pub fn flow_score(g: &GroupAction, x: &[f64], score_gen: &[f64]) -> Result<Vec<f64>> {
    let div = g.divergence_scalars(x)?;
    Ok(score_gen.iter().zip(div).map(|(s, d)| s + d).collect())
}

/// The three velocity components of a reverse step.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityParts {
    /// `Σ_i (½τ_i + s_i) Π_i(x)` (no `½τ` without drift).
    pub score: Vec<f64>,
    /// `Σ_i A_i² x`.
    pub casimir: Vec<f64>,
    /// `Σ_i (∇·Π_i) Π_i(x)`.
    pub divergence: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl VelocityParts {
    pub fn total(&self) -> Vec<f64> {
        (0..self.score.len())
            .map(|k| self.score[k] + 0.5 * self.casimir[k] + self.divergence[k])
            .collect()
    }
}

pub fn reverse_velocity(g: &GroupAction, drift: bool, x: &[f64], score_gen: &[f64]) -> Result<VelocityParts> {
    if score_gen.len() != g.dim_g {
        return Err(Error::SizeMismatch(format!("score has {} entries, dim_g = {}", score_gen.len(), g.dim_g)));
    }
    let gens = g.generators(x)?;
    let tau = if drift { g.to_flow_coords(x)?.values } else { vec![0.0; g.dim_g] };
    let div = g.divergence_scalars(x)?;
    let n = g.dim_x;
    let (mut vs, mut vc, mut vd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut fields = Vec::with_capacity(gens.len());
    for (i, gen) in gens.iter().enumerate() {
        let f = gen.apply(x);
        vecops::add_scaled(&mut vs, 0.5 * tau[i] + score_gen[i], &f);
        vecops::add_scaled(&mut vc, 1.0, &gen.apply_linear(&f));
        vecops::add_scaled(&mut vd, div[i], &f);
        fields.push(f);
    }
    Ok(VelocityParts { score: vs, casimir: vc, divergence: vd, fields })
}

/// Linear reverse update with a given noise vector `eta`:
/// `x' = x + β_t (v_s + ½v_c + v_d) + √β_t Σ η_i Π_i(x)`.
pub fn reverse_step_with_noise(
    g: &GroupAction,
    sched: &dyn Schedule,
    x_t: &[f64],
    t: usize,
    score_gen: &[f64],
    eta: &[f64],
) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    g.regularize(&mut x);
    let beta = sched.beta(t);
    let parts = reverse_velocity(g, sched.has_drift(), &x, score_gen)?;
    let v = parts.total();
    let mut out: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + beta * b).collect();
    for (e, f) in eta.iter().zip(&parts.fields) {
        vecops::add_scaled(&mut out, beta.sqrt() * e, f);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: t, detail: format!("reverse step from {x:?}") });
    }
    Ok(out)
}

/// One reverse update driven by the generalized score; noise is zero at the
/// final step when `deterministic_last`.
pub fn reverse_step(
    g: &GroupAction,
    sched: &dyn Schedule,
    x_t: &[f64],
    t: usize,
    score_gen: &[f64],
    rng: &mut Rng,
    deterministic_last: bool,
) -> Result<Vec<f64>> {
    let eta = if deterministic_last && t == 0 { vec![0.0; g.dim_g] } else { normal_vec(rng, g.dim_g) };
    reverse_step_with_noise(g, sched, x_t, t, score_gen, &eta)
}

/// Reverse update applied through the group exponential:
/// `x' = ∏ exp(Δτ_i A_i) x` with `Δτ = β_t (½τ + s_τ) + √β_t η`. Stays on the orbit of `x`.
pub fn reverse_step_exp_with_noise(
    g: &GroupAction,
    sched: &dyn Schedule,
    x_t: &[f64],
    t: usize,
    score_tau: &[f64],
    eta: &[f64],
) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    g.regularize(&mut x);
    let beta = sched.beta(t);
    let tau = if sched.has_drift() { g.to_flow_coords(&x)?.values } else { vec![0.0; g.dim_g] };
    let delta: Vec<f64> = (0..g.dim_g)
        .map(|i| beta * (0.5 * tau[i] + score_tau[i]) + beta.sqrt() * eta[i])
        .collect();
    let out = g.group_exp_apply(&delta, &x)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: t, detail: format!("exponential step from {x:?}") });
    }
    Ok(out)
}

/// How a reverse step is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Linear update with Casimir and divergence corrections.
    #[default]
    Euler,
    /// Flow-coordinate increment applied through the group exponential.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub rule: StepRule,
    pub deterministic_last: bool,
    pub seed: u64,
    /// Number of chains whose full paths are kept.
    pub record: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        SamplerConfig { rule: StepRule::Euler, deterministic_last: true, seed, record: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub batch: SampleBatch,
    pub dropped: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Batched score in flow coordinates: rows of states at time index `t` to rows of scores.
pub type ScoreFn<'a> = dyn Fn(ArrayView2<f64>, usize) -> Array2<f64> + Sync + 'a;

struct Chain {
    x: Vec<f64>,
    rng: Rng,
    alive: bool,
    clamped: bool,
    path: Option<Vec<Vec<f64>>>,
}

/// Prior draw `τ ~ N(0, I)` pushed through the flow chart, one RNG stream per chain.
pub fn prior_batch(g: &GroupAction, n: usize, seed: u64) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((n, g.dim_x));
    for i in 0..n {
        let mut rng = stream(seed, i as u64);
        let p = g.from_flow_coords(&normal_vec(&mut rng, g.dim_g))?;
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&p[..]));
    }
    Ok(x)
}

fn run_chains(
    g: &GroupAction,
    sched: &dyn Schedule,
    score_fn: &ScoreFn,
    mut chains: Vec<Chain>,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome> {
    let dim = g.dim_x;
    for k in (0..sched.steps()).rev() {
        let alive: Vec<usize> = (0..chains.len()).filter(|&i| chains[i].alive).collect();
        let mut xs = Array2::zeros((alive.len(), dim));
        let mut row_of = vec![usize::MAX; chains.len()];
        for (r, &i) in alive.iter().enumerate() {
            let mut x = chains[i].x.clone();
            if g.regularize(&mut x) {
                chains[i].clamped = true;
            }
            xs.row_mut(r).assign(&ndarray::ArrayView1::from(&x[..]));
            row_of[i] = r;
        }
        let scores = score_fn(xs.view(), k);
        par::for_each_mut(&mut chains, |i, c| {
            if !c.alive {
                return;
            }
            let s = scores.row(row_of[i]).to_vec();
            let eta = if cfg.deterministic_last && k == 0 { vec![0.0; g.dim_g] } else { normal_vec(&mut c.rng, g.dim_g) };
            let next = match cfg.rule {
                StepRule::Euler => generalized_score(g, &xs.row(row_of[i]).to_vec(), &s)
                    .and_then(|sg| reverse_step_with_noise(g, sched, &c.x, k, &sg, &eta)),
                StepRule::Exponential => reverse_step_exp_with_noise(g, sched, &c.x, k, &s, &eta),
            };
            match next {
                Ok(x) if x.iter().all(|v| v.is_finite()) => {
                    if let Some(p) = c.path.as_mut() {
                        p.push(x.clone());
                    }
                    c.x = x;
                }
                _ => c.alive = false,
            }
        });
    }
    let kept: Vec<&Chain> = chains.iter().filter(|c| c.alive).collect();
    let mut x = Array2::zeros((kept.len(), dim));
    for (r, c) in kept.iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&c.x[..]));
    }
    let times: Vec<f64> = std::iter::once(sched.steps() as f64).chain((0..sched.steps()).rev().map(|k| k as f64)).collect();
    let trajectories = chains
        .iter()
        .filter_map(|c| c.path.as_ref().map(|p| (p, c.clamped)))
        .map(|(p, clamped)| {
            let mut states = Array2::zeros((p.len(), dim));
            for (r, s) in p.iter().enumerate() {
                states.row_mut(r).assign(&ndarray::ArrayView1::from(&s[..]));
            }
            Trajectory { states, times: times[..p.len()].to_vec(), seed: Some(cfg.seed), clamped }
        })
        .collect();
    Ok(SampleOutcome {
        batch: SampleBatch { x, group: Some(g.id.to_string()), time_index: Some(0), seed: Some(cfg.seed) },
        dropped: chains.len() - kept.len(),
        trajectories,
    })
}

fn chains_from(x_init: ArrayView2<f64>, seed: u64, record: usize, mut rngs: Option<Vec<Rng>>) -> Vec<Chain> {
    (0..x_init.nrows())
        .map(|i| {
            let x = x_init.row(i).to_vec();
            let rng = rngs.as_mut().map(|r| r[i].clone()).unwrap_or_else(|| stream(seed, i as u64));
            let path = (i < record).then(|| vec![x.clone()]);
            Chain { x, rng, alive: true, clamped: false, path }
        })
        .collect()
}

/// Reverse-time sampling from given initial states.
pub fn sample_from(
    g: &GroupAction,
    sched: &dyn Schedule,
    score_fn: &ScoreFn,
    x_init: ArrayView2<f64>,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome> {
    if x_init.ncols() != g.dim_x {
        return Err(Error::SizeMismatch(format!("initial states have {} columns, dim_x = {}", x_init.ncols(), g.dim_x)));
    }
    run_chains(g, sched, score_fn, chains_from(x_init, cfg.seed, cfg.record, None), cfg)
}

/// Full sampler: prior draw in flow coordinates, then `T` reverse steps.
pub fn sample(g: &GroupAction, sched: &dyn Schedule, score_fn: &ScoreFn, n: usize, cfg: &SamplerConfig) -> Result<SampleOutcome> {
    let mut rngs = Vec::with_capacity(n);
    let mut x = Array2::zeros((n, g.dim_x));
    for i in 0..n {
        let mut rng = stream(cfg.seed, i as u64);
        let p = g.from_flow_coords(&normal_vec(&mut rng, g.dim_g))?;
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&p[..]));
        rngs.push(rng);
    }
    run_chains(g, sched, score_fn, chains_from(x.view(), cfg.seed, cfg.record, Some(rngs)), cfg)
}

/// Bridge transport from given source states, without drift; uses the
/// exponential update unless told otherwise.
pub fn bridge_sample(
    g: &GroupAction,
    sched: &dyn Schedule,
    score_fn: &ScoreFn,
    x_source: ArrayView2<f64>,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome> {
    if sched.has_drift() {
        return Err(Error::InvalidParams("bridge sampling needs a zero-drift schedule".into()));
    }
    sample_from(g, sched, score_fn, x_source, cfg)
}

/// Exact score in flow coordinates of a Gaussian-in-τ target `N(m, diag(s²))`
/// after corruption to step `t`: `−(τ − a m)/(a² s² + σ²)`.
pub fn gaussian_target_score(sched: &dyn Schedule, t: usize, tau: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    let (a, s) = (sched.mean_coeff(t), sched.sigma(t));
    (0..tau.len())
        .map(|i| -(tau[i] - a * mean[i]) / (a * a * std[i] * std[i] + s * s))
        .collect()
}
