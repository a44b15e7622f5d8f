//! Numerical certification of the structural identities: completeness,
//! commuting flows, the divergence identity, the chart Jacobian, exact
//! solvability of the forward process and the two-dimensional closed form.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{make_group, vecops, ChainSpec, GroupAction, GroupId, GroupParams};
use crate::metrics::w2_sliced;
use crate::par;
use crate::rng::{normal, normal_vec, seeded, stream, Rng};
use crate::schedule::{make_schedule, NoiseSchedule, Schedule, ScheduleKind};
use crate::sde::{em_step, forward_with_eta, generalized_score, reverse_velocity};

/// One verification outcome; `passed` is `max_error <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub group_id: String,
    pub n_points: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Negative controls are expected to fail.
    pub expected_pass: bool,
}

impl CheckRecord {
    pub fn new(check_id: &str, group_id: &str, n_points: usize, max_error: f64, tolerance: f64) -> Self {
        CheckRecord {
            check_id: check_id.into(),
            group_id: group_id.into(),
            n_points,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            expected_pass: true,
        }
    }

    fn control(mut self) -> Self {
        self.expected_pass = false;
        self
    }

    /// Whether the outcome is the expected one.
    pub fn ok(&self) -> bool {
        self.passed == self.expected_pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub records: Vec<CheckRecord>,
    pub seed: u64,
    pub float_bits: u32,
    pub all_ok: bool,
}

impl VerifyReport {
    pub fn new(records: Vec<CheckRecord>, seed: u64) -> Self {
        let all_ok = records.iter().all(CheckRecord::ok);
        VerifyReport { records, seed, float_bits: 64, all_ok }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Allowed fraction of rank-deficient points.
    pub completeness: f64,
    pub commutator: f64,
    pub divergence: f64,
    pub jacobian: f64,
    pub forward_w2: f64,
    pub so2_pathwise: f64,
    pub so2_terminal_w2: f64,
    pub exp_consistency: f64,
    pub reverse_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            completeness: 1e-3,
            commutator: 1e-3,
            divergence: 1e-4,
            jacobian: 1e-4,
            forward_w2: 0.05,
            so2_pathwise: 1e-6,
            so2_terminal_w2: 0.05,
            exp_consistency: 1e-9,
            reverse_drift: 1e-4,
        }
    }
}

/// A family of vector fields on ℝ^dim_x, one per generator.
pub trait FieldFamily: Sync {
    fn name(&self) -> String;
    fn dim_x(&self) -> usize;
    fn dim_g(&self) -> usize;
    fn fields(&self, x: &[f64]) -> Result<Vec<Vec<f64>>>;
}

impl FieldFamily for GroupAction {
    fn name(&self) -> String {
        self.id.to_string()
    }
    fn dim_x(&self) -> usize {
        self.dim_x
    }
    fn dim_g(&self) -> usize {
        self.dim_g
    }
    fn fields(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        GroupAction::fields(self, x)
    }
}

/// Fields of a group divided by `|x|`; on ℝ² with the dilation group this is
/// the classic non-commuting pair.
pub struct NormalizedFields(pub GroupAction);

impl FieldFamily for NormalizedFields {
    fn name(&self) -> String {
        format!("{}/|x|", self.0.id)
    }
    fn dim_x(&self) -> usize {
        self.0.dim_x
    }
    fn dim_g(&self) -> usize {
        self.0.dim_g
    }
    fn fields(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let r = vecops::norm(x);
        Ok(self.0.fields(x)?.into_iter().map(|f| f.iter().map(|v| v / r).collect()).collect())
    }
}

/// Only the rotation generator on ℝ²: rank one everywhere.
pub struct RotationOnly;

impl FieldFamily for RotationOnly {
    fn name(&self) -> String {
        "SO(2) on R2".into()
    }
    fn dim_x(&self) -> usize {
        2
    }
    fn dim_g(&self) -> usize {
        1
    }
    fn fields(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![-x[1], x[0]]])
    }
}

fn field_matrix(fields: &[Vec<f64>], dim_x: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim_x, fields.len(), |r, c| fields[c][r])
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > 1e-10 * top.max(1e-300)).count()
}

fn gaussian_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n).map(|i| normal_vec(&mut stream(seed, i as u64), dim)).collect()
}

fn rank_fraction(fam: &dyn FieldFamily, points: &[Vec<f64>], target: usize) -> f64 {
    let full = points
        .iter()
        .filter(|x| fam.fields(x).map(|f| numerical_rank(&field_matrix(&f, fam.dim_x())) == target).unwrap_or(false))
        .count();
    full as f64 / points.len() as f64
}

/// Fraction of standard-normal points where `Π(x)` has rank `dim_x`;
/// the recorded error is the deficient fraction.
pub fn check_completeness(fam: &dyn FieldFamily, n_points: usize, seed: u64, tol: f64) -> CheckRecord {
    let points = gaussian_points(n_points, fam.dim_x(), seed);
    let frac = rank_fraction(fam, &points, fam.dim_x());
    CheckRecord::new("completeness", &fam.name(), n_points, 1.0 - frac, tol)
}

/// For groups that act on orbits only: rank of `Π(x)` equals `dim_g`.
pub fn check_orbit_rank(fam: &dyn FieldFamily, n_points: usize, seed: u64, tol: f64) -> CheckRecord {
    let points = gaussian_points(n_points, fam.dim_x(), seed);
    let frac = rank_fraction(fam, &points, fam.dim_g());
    CheckRecord::new("orbit_rank", &fam.name(), n_points, 1.0 - frac, tol)
}

/// `f(x) = tanh(aᵀx + b)·(c + dᵀx + ½xᵀQx)` with bounded derivatives.
struct TestFunction {
    a: Vec<f64>,
    b: f64,
    c: f64,
    d: Vec<f64>,
    q: Vec<Vec<f64>>,
}

impl TestFunction {
    fn random(dim: usize, rng: &mut Rng) -> Self {
        let s = 1.0 / (dim as f64).sqrt();
        let mut q = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in 0..=i {
                let v = 0.5 * s * normal(rng);
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        TestFunction {
            a: (0..dim).map(|_| s * normal(rng)).collect(),
            b: normal(rng),
            c: normal(rng),
            d: (0..dim).map(|_| s * normal(rng)).collect(),
            q,
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let u = vecops::dot(&self.a, x) + self.b;
        let qx: Vec<f64> = self.q.iter().map(|row| vecops::dot(row, x)).collect();
        let p = self.c + vecops::dot(&self.d, x) + 0.5 * vecops::dot(x, &qx);
        let (t, sech2) = (u.tanh(), 1.0 - u.tanh().powi(2));
        (0..x.len()).map(|k| sech2 * self.a[k] * p + t * (self.d[k] + qx[k])).collect()
    }
}

/// `L_j f(y) = V_j(y)·∇f(y)`.
fn lie_derivative(fam: &dyn FieldFamily, f: &TestFunction, j: usize, y: &[f64]) -> Result<f64> {
    Ok(vecops::dot(&fam.fields(y)?[j], &f.gradient(y)))
}

/// Directional central difference of `L_j f` along `V_i(x)`.
fn directional(fam: &dyn FieldFamily, f: &TestFunction, i: usize, j: usize, x: &[f64], h: f64) -> Result<f64> {
    let v = &fam.fields(x)?[i];
    let len = vecops::norm(v);
    if len == 0.0 {
        return Ok(0.0);
    }
    let step = h * (1.0 + vecops::norm(x)) / len;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    vecops::add_scaled(&mut xp, step, v);
    vecops::add_scaled(&mut xm, -step, v);
    Ok((lie_derivative(fam, f, j, &xp)? - lie_derivative(fam, f, j, &xm)?) / (2.0 * step))
}

/// Max over points and generator pairs of `|[L_i, L_j] f|` on random smooth
/// test functions, with second derivatives by central differences.
pub fn check_commutators(fam: &dyn FieldFamily, n_points: usize, h: f64, seed: u64, tol: f64) -> CheckRecord {
    let dim = fam.dim_x();
    let errs = par::map_range(n_points, |p| {
        let mut rng = stream(seed, p as u64);
        let x = normal_vec(&mut rng, dim);
        let f = TestFunction::random(dim, &mut rng);
        let mut worst: f64 = 0.0;
        for i in 0..fam.dim_g() {
            for j in i + 1..fam.dim_g() {
                let c = directional(fam, &f, i, j, &x, h).and_then(|a| Ok(a - directional(fam, &f, j, i, &x, h)?));
                match c {
                    Ok(c) => worst = worst.max(c.abs()),
                    // Points in the singular set carry no information.
                    Err(_) => {}
                }
            }
        }
        worst
    });
    CheckRecord::new("commutators", &fam.name(), n_points, errs.into_iter().fold(0.0, f64::max), tol)
}

/// Points for a group: Gaussian in ℝ^dim_x (chains and clouds included).
fn group_points(g: &GroupAction, n: usize, seed: u64) -> Vec<Vec<f64>> {
    gaussian_points(n, g.dim_x, seed).into_iter().filter(|x| g.generators(x).is_ok()).collect()
}

/// `∇·(ΠΠᵀ)` by central differences against `Π (∇ᵀ·Π) + Σ_i A_i Π_i`;
/// error relative to `1 + |rhs|∞`.
pub fn check_divergence_identity(g: &GroupAction, n_points: usize, h: f64, seed: u64, tol: f64) -> CheckRecord {
    let points = group_points(g, n_points, seed);
    let errs = par::map_range(points.len(), |p| -> f64 {
        let x = &points[p];
        let n = g.dim_x;
        let step = h * (1.0 + vecops::norm(x));
        let outer = |y: &[f64]| -> Result<DMatrix<f64>> {
            let m = field_matrix(&g.fields(y)?, n);
            Ok(&m * m.transpose())
        };
        let mut lhs = vec![0.0; n];
        let mut y = x.clone();
        for j in 0..n {
            y[j] = x[j] + step;
            let Ok(mp) = outer(&y) else { return 0.0 };
            y[j] = x[j] - step;
            let Ok(mm) = outer(&y) else { return 0.0 };
            y[j] = x[j];
            for k in 0..n {
                lhs[k] += (mp[(k, j)] - mm[(k, j)]) / (2.0 * step);
            }
        }
        let (Ok(div), Ok(cas)) = (g.divergence_field(x), g.casimir_field(x)) else { return 0.0 };
        let rhs: Vec<f64> = div.iter().zip(&cas).map(|(a, b)| a + b).collect();
        let scale = 1.0 + rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        lhs.iter().zip(&rhs).map(|(l, r)| (l - r).abs() / scale).fold(0.0, f64::max)
    });
    CheckRecord::new("divergence_identity", &g.id.to_string(), points.len(), errs.into_iter().fold(0.0, f64::max), tol)
}

fn flow_jacobian(g: &GroupAction, x: &[f64]) -> Result<DMatrix<f64>> {
    let center = g.to_flow_coords(x)?.values;
    let n = g.dim_x;
    let h = 1e-5 * (1.0 + vecops::norm(x));
    let mut jac = DMatrix::zeros(g.dim_g, n);
    let mut y = x.to_vec();
    for k in 0..n {
        y[k] = x[k] + h;
        let tp = g.to_flow_coords(&y)?.unwrap_near(&center);
        y[k] = x[k] - h;
        let tm = g.to_flow_coords(&y)?.unwrap_near(&center);
        y[k] = x[k];
        for i in 0..g.dim_g {
            jac[(i, k)] = (tp[i] - tm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `|det ∂τ/∂x| · |det Π(x)| = 1` with the Jacobian by central differences.
pub fn check_jacobian_density(g: &GroupAction, n_points: usize, seed: u64, tol: f64) -> Result<CheckRecord> {
    if !g.is_density_model() {
        return Err(Error::InvalidParams("Jacobian check needs a density-modeling group".into()));
    }
    let points = group_points(g, n_points, seed);
    let errs = par::map_range(points.len(), |p| {
        let x = &points[p];
        match (flow_jacobian(g, x), g.fundamental_matrix(x)) {
            (Ok(j), Ok(pi)) => (j.determinant().abs() * pi.determinant().abs() - 1.0).abs(),
            _ => 0.0,
        }
    });
    Ok(CheckRecord::new("jacobian_density", &g.id.to_string(), points.len(), errs.into_iter().fold(0.0, f64::max), tol))
}

/// `∂/∂τ_i log|det Π(x(τ))| = ∇·Π_i(x)`, differentiating through the chart.
pub fn check_divergence_consistency(g: &GroupAction, n_points: usize, seed: u64, tol: f64) -> Result<CheckRecord> {
    if !g.is_density_model() {
        return Err(Error::InvalidParams("divergence consistency needs a density-modeling group".into()));
    }
    let points = group_points(g, n_points, seed);
    let errs = par::map_range(points.len(), |p| -> f64 {
        let x = &points[p];
        let Ok(tau) = g.to_flow_coords(x) else { return 0.0 };
        let Ok(div) = g.divergence_scalars(x) else { return 0.0 };
        let h = 1e-5;
        let logdet = |t: &[f64]| -> Result<f64> { Ok(g.fundamental_matrix(&g.from_flow_coords(t)?)?.determinant().abs().ln()) };
        let mut worst: f64 = 0.0;
        for i in 0..g.dim_g {
            let mut tp = tau.values.clone();
            let mut tm = tau.values.clone();
            tp[i] += h;
            tm[i] -= h;
            let (Ok(a), Ok(b)) = (logdet(&tp), logdet(&tm)) else { return 0.0 };
            worst = worst.max(((a - b) / (2.0 * h) - div[i]).abs() / (1.0 + div[i].abs()));
        }
        worst
    });
    Ok(CheckRecord::new("divergence_consistency", &g.id.to_string(), points.len(), errs.into_iter().fold(0.0, f64::max), tol))
}

/// Flow coordinates of a standard-normal point of the representation space.
fn interior_coords(g: &GroupAction, rng: &mut Rng) -> Result<Vec<f64>> {
    Ok(g.to_flow_coords(&normal_vec(rng, g.dim_x))?.values)
}

/// Frozen exponentials reproduce the chart: `∏ exp(Δτ_i A_i) x(τ_b) = x(τ_b + Δτ)`.
pub fn check_exp_consistency(g: &GroupAction, n_points: usize, seed: u64, tol: f64) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    for i in 0..n_points {
        let mut rng = stream(seed, i as u64);
        let base = interior_coords(g, &mut rng)?;
        let tau = interior_coords(g, &mut rng)?;
        let delta: Vec<f64> = tau.iter().zip(&base).map(|(a, b)| a - b).collect();
        let a = g.group_exp_apply(&delta, &g.from_flow_coords(&base)?)?;
        let b = g.from_flow_coords(&tau)?;
        let scale = 1.0 + vecops::norm(&b);
        worst = worst.max(a.iter().zip(&b).map(|(p, q)| (p - q).abs() / scale).fold(0.0, f64::max));
    }
    Ok(CheckRecord::new("exp_consistency", &g.id.to_string(), n_points, worst, tol))
}

/// Log-density of `x` when `τ(x) ~ N(mean, diag(var))`: the τ-density times
/// `|det ∂τ/∂x| = 1/|det Π(x)|`.
fn gaussian_log_density_x(g: &GroupAction, x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    let tau = g.to_flow_coords(x)?.unwrap_near(mean);
    let lp: f64 = (0..g.dim_g).map(|i| -0.5 * (tau[i] - mean[i]).powi(2) / var[i] - 0.5 * var[i].ln()).sum();
    Ok(lp - g.fundamental_matrix(x)?.determinant().abs().ln())
}

/// The sampler's update direction against the reverse-time drift of the
/// forward SDE computed independently:
/// `−b + ∇·(βΠΠᵀ) + βΠΠᵀ∇ log p_x` with `b = β(Π f + ½ρ(Ω))`, `f = −½τ`.
/// Targets are Gaussian in flow coordinates so every score is exact.
/// With `flip_casimir` the Casimir term enters with the opposite sign
/// (the sign as printed for forward-iterated time), which must disagree.
pub fn check_reverse_drift(g: &GroupAction, n_points: usize, seed: u64, tol: f64, flip_casimir: bool) -> Result<CheckRecord> {
    if !g.is_density_model() {
        return Err(Error::InvalidParams("reverse drift check needs a density-modeling group".into()));
    }
    let beta = 0.37;
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut rng = seeded(seed);
    while used < n_points {
        // Angular means sit well inside the chart, away from the polar axes.
        let mean: Vec<f64> = (0..g.dim_g).map(|i| if i == 0 { 0.2 } else { 1.2 + 0.1 * i as f64 }).collect();
        let var: Vec<f64> = (0..g.dim_g).map(|i| 0.03 + 0.01 * i as f64).collect();
        let eta = normal_vec(&mut rng, g.dim_g);
        let tau: Vec<f64> = (0..g.dim_g).map(|i| mean[i] + var[i].sqrt() * eta[i]).collect();
        let x = g.from_flow_coords(&tau)?;
        let tau_x = g.to_flow_coords(&x)?.unwrap_near(&mean);
        // Stay inside the chart so the τ-density is the density of x.
        if tau_x.iter().zip(&tau).any(|(a, b)| (a - b).abs() > 1e-9) {
            continue;
        }
        let score_tau: Vec<f64> = (0..g.dim_g).map(|i| -(tau_x[i] - mean[i]) / var[i]).collect();
        let s_gen = generalized_score(g, &x, &score_tau)?;
        let parts = reverse_velocity(g, true, &x, &s_gen)?;
        let sign = if flip_casimir { -1.0 } else { 1.0 };
        let sampler: Vec<f64> = (0..g.dim_x)
            .map(|k| beta * (parts.score[k] + sign * 0.5 * parts.casimir[k] + parts.divergence[k]))
            .collect();

        let n = g.dim_x;
        let h = 1e-5 * (1.0 + vecops::norm(&x));
        let pi = g.fundamental_matrix(&x)?;
        let d = &pi * pi.transpose();
        let mut div_d = vec![0.0; n];
        let mut grad_lp = vec![0.0; n];
        let mut y = x.clone();
        for j in 0..n {
            y[j] = x[j] + h;
            let mp = g.fundamental_matrix(&y)?;
            let lp_p = gaussian_log_density_x(g, &y, &mean, &var)?;
            y[j] = x[j] - h;
            let mm = g.fundamental_matrix(&y)?;
            let lp_m = gaussian_log_density_x(g, &y, &mean, &var)?;
            y[j] = x[j];
            let dp = &mp * mp.transpose();
            let dm = &mm * mm.transpose();
            for k in 0..n {
                div_d[k] += (dp[(k, j)] - dm[(k, j)]) / (2.0 * h);
            }
            grad_lp[j] = (lp_p - lp_m) / (2.0 * h);
        }
        let cas = g.casimir_field(&x)?;
        let f: Vec<f64> = tau_x.iter().map(|t| -0.5 * t).collect();
        let pif: Vec<f64> = (0..n).map(|k| (0..g.dim_g).map(|i| pi[(k, i)] * f[i]).sum()).collect();
        let anderson: Vec<f64> = (0..n)
            .map(|k| {
                let dg: f64 = (0..n).map(|j| d[(k, j)] * grad_lp[j]).sum();
                beta * (-(pif[k] + 0.5 * cas[k]) + div_d[k] + dg)
            })
            .collect();
        let scale = 1.0 + anderson.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = sampler.iter().zip(&anderson).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max);
        worst = worst.max(err);
        used += 1;
    }
    let id = if flip_casimir { "reverse_drift_flipped_casimir" } else { "reverse_drift" };
    Ok(CheckRecord::new(id, &g.id.to_string(), n_points, worst, tol))
}

/// How the closed-form samples relate to the simulated ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Independent draws on both sides.
    Independent,
    /// Common random numbers: each closed-form `η` is the exactly normalized
    /// OU-weighted sum of the Brownian increments that drove the simulated
    /// path, so each side keeps its own law while sampling noise cancels.
    #[default]
    CommonNoise,
}

/// Accumulates `Σ_k e^{−(λ−λ_{k+1})/2} ΔW_k` and its exact variance.
struct OuNoise {
    z: Vec<f64>,
    var: f64,
    decay: f64,
}

impl OuNoise {
    fn new(dim: usize, dl: f64) -> Self {
        OuNoise { z: vec![0.0; dim], var: 0.0, decay: (-0.5 * dl).exp() }
    }

    fn push(&mut self, xi: &[f64], dl: f64) {
        for (z, x) in self.z.iter_mut().zip(xi) {
            *z = self.decay * *z + dl.sqrt() * x;
        }
        self.var = self.decay * self.decay * self.var + dl;
    }

    /// A standard normal vector built from the increments.
    fn eta(&self) -> Vec<f64> {
        self.z.iter().map(|z| z / self.var.sqrt()).collect()
    }
}

fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), dim), |(i, k)| rows[i][k])
}

/// Closed-form forward marginals against Euler–Maruyama paths of the
/// Cartesian SDE `dx = [Π f + ½ρ(Ω)] dλ + Π dW`, `f = −½τ`, run in
/// `λ = −2 log ᾱ_t` time with `em_steps` steps per checkpoint. The drift uses
/// flow coordinates continued along each path, oriented by the chart
/// reflections met on the way. One record per time index.
#[allow(clippy::too_many_arguments)]
pub fn check_forward_equivalence(
    g: &GroupAction,
    sched: &NoiseSchedule,
    times: &[usize],
    n_samples: usize,
    em_steps: usize,
    coupling: Coupling,
    seed: u64,
    tol: f64,
) -> Result<Vec<CheckRecord>> {
    if !g.is_density_model() {
        return Err(Error::InvalidParams("forward equivalence needs a density-modeling group".into()));
    }
    let x0 = group_points(g, n_samples, seed);
    let mut records = Vec::new();
    for &k in times {
        let lambda = -2.0 * sched.mean_coeff(k).ln();
        let dl = lambda / em_steps as f64;
        let pairs = par::map_range(x0.len(), |i| -> Option<(Vec<f64>, Vec<f64>)> {
            let mut rng = stream(seed ^ 0x9e37_79b9, (k * n_samples + i) as u64);
            let mut x = x0[i].clone();
            let mut tau = g.to_flow_coords(&x).ok()?.values;
            let mut sign = vec![1.0; g.dim_g];
            let mut noise = OuNoise::new(g.dim_g, dl);
            for _ in 0..em_steps {
                let xi = normal_vec(&mut rng, g.dim_g);
                // Drift and noise act on the continued coordinates.
                let f: Vec<f64> = tau.iter().zip(&sign).map(|(t, s)| -0.5 * t * s).collect();
                let xi_x: Vec<f64> = xi.iter().zip(&sign).map(|(v, s)| v * s).collect();
                x = em_step(g, &x, 1.0, 1.0, &f, dl, &xi_x).ok()?;
                (tau, sign) = g.continue_flow_coords_oriented(&x, &tau).ok()?;
                noise.push(&xi, dl);
            }
            let eta = match coupling {
                Coupling::CommonNoise => noise.eta(),
                Coupling::Independent => normal_vec(&mut stream(seed ^ 0x5851_f42d, (k * n_samples + i) as u64), g.dim_g),
            };
            let closed = forward_with_eta(g, sched, &x0[i], k, &eta).ok()?.x_t;
            x.iter().chain(&closed).all(|v| v.is_finite()).then_some((x, closed))
        });
        let pairs: Vec<_> = pairs.into_iter().flatten().collect();
        let (em, closed): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let w2 = w2_sliced(
            rows_to_array(&em, g.dim_x).view(),
            rows_to_array(&closed, g.dim_x).view(),
            crate::constants::SLICED_PROJECTIONS,
            &mut seeded(seed),
        )?;
        // Lost paths count against the check.
        let err = if em.len() < x0.len() { f64::INFINITY } else { w2 };
        records.push(CheckRecord::new(&format!("forward_equivalence@t={}", k + 1), &g.id.to_string(), em.len(), err, tol));
    }
    Ok(records)
}

/// Plane rotation-dilation check: the OU process in flow coordinates
/// with drifts `f_r = −¼ log(x² + y²)`, `f_θ = −½θ` evaluated on the Cartesian
/// state, against the closed form `x(t) = e^{λ} R(φ) x(0)`.
pub fn check_so2_closed_form(n_samples: usize, coupling: Coupling, seed: u64, tol_path: f64, tol_w2: f64) -> Result<Vec<CheckRecord>> {
    let g = make_group(GroupId::So2Dilation, GroupParams::default())?;
    let name = g.id.to_string();
    let mut records = Vec::new();

    let q = g.group_exp_apply(&[0.0, std::f64::consts::FRAC_PI_2], &[1.0, 0.0])?;
    let err = (q[0].abs()).max((q[1] - 1.0).abs());
    records.push(CheckRecord::new("so2_quarter_rotation", &name, 1, err, 1e-12));

    // Pathwise: τ-OU Euler steps with f = −½τ versus Euler steps whose drift
    // is read off the reconstructed Cartesian state, same noise.
    let steps = 500;
    let t_end = 0.5;
    let dt = t_end / steps as f64;
    let starts = group_points(&g, n_samples.min(256), seed);
    let mut worst: f64 = 0.0;
    for (i, x0) in starts.iter().enumerate() {
        let mut rng = stream(seed, i as u64);
        let tau0 = g.to_flow_coords(x0)?.values;
        let mut tau = tau0.clone();
        let mut tau_c = tau0.clone();
        for _ in 0..steps {
            let xi = normal_vec(&mut rng, 2);
            let x_c = g.group_exp_apply(&[tau_c[0] - tau0[0], tau_c[1] - tau0[1]], x0)?;
            let theta = g.continue_flow_coords(&x_c, &tau_c)?[1];
            let f_c = [-0.25 * (x_c[0] * x_c[0] + x_c[1] * x_c[1]).ln(), -0.5 * theta];
            for k in 0..2 {
                tau[k] += -0.5 * tau[k] * dt + dt.sqrt() * xi[k];
                tau_c[k] += f_c[k] * dt + dt.sqrt() * xi[k];
            }
            let x_a = g.from_flow_coords(&tau)?;
            let x_b = g.group_exp_apply(&[tau_c[0] - tau0[0], tau_c[1] - tau0[1]], x0)?;
            let scale = 1.0 + vecops::norm(&x_a);
            worst = worst.max((x_a[0] - x_b[0]).abs().max((x_a[1] - x_b[1]).abs()) / scale);
        }
    }
    records.push(CheckRecord::new("so2_pathwise", &name, starts.len(), worst, tol_path));

    // Terminal law after a long run against the limit law
    // `(e^{η_r} cos η_θ, e^{η_r} sin η_θ)`.
    let t_long = 12.0;
    let long_steps = 1000;
    let dt = t_long / long_steps as f64;
    let starts = group_points(&g, n_samples, seed.wrapping_add(1));
    let pairs = par::map_range(starts.len(), |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = stream(seed.wrapping_add(2), i as u64);
        let tau0 = g.to_flow_coords(&starts[i])?.values;
        let mut tau = tau0.clone();
        let mut noise = OuNoise::new(2, dt);
        for _ in 0..long_steps {
            let xi = normal_vec(&mut rng, 2);
            for k in 0..2 {
                tau[k] += -0.5 * tau[k] * dt + dt.sqrt() * xi[k];
            }
            noise.push(&xi, dt);
        }
        let end = g.group_exp_apply(&[tau[0] - tau0[0], tau[1] - tau0[1]], &starts[i])?;
        let eta = match coupling {
            Coupling::CommonNoise => noise.eta(),
            Coupling::Independent => normal_vec(&mut stream(seed.wrapping_add(3), i as u64), 2),
        };
        Ok((end, vec![eta[0].exp() * eta[1].cos(), eta[0].exp() * eta[1].sin()]))
    });
    let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let w2 = w2_sliced(rows_to_array(&a, 2).view(), rows_to_array(&b, 2).view(), crate::constants::SLICED_PROJECTIONS, &mut seeded(seed))?;
    records.push(CheckRecord::new("so2_terminal_law", &name, a.len(), w2, tol_w2));
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub n_points: usize,
    /// Commutator finite-difference step.
    pub commutator_h: f64,
    /// First-order finite-difference step.
    pub divergence_h: f64,
    /// Include the Monte-Carlo checks (forward equivalence and the closed form).
    pub stochastic: bool,
    pub n_samples: usize,
    pub em_steps: usize,
    pub coupling: Coupling,
    pub tolerances: Tolerances,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            n_points: 1000,
            commutator_h: 1e-4,
            divergence_h: 1e-5,
            stochastic: true,
            n_samples: 4096,
            em_steps: 1000,
            coupling: Coupling::CommonNoise,
            tolerances: Tolerances::default(),
        }
    }
}

/// Density-modeling groups covered by the suite.
pub fn density_groups() -> Vec<GroupAction> {
    [
        GroupId::Translation { n: 2 },
        GroupId::Translation { n: 3 },
        GroupId::So2Dilation,
        GroupId::So3Dilation,
        GroupId::So4Dilation,
        GroupId::SonDilation { n: 5 },
    ]
    .into_iter()
    .map(|id| make_group(id, GroupParams::default()).expect("registered group"))
    .collect()
}

/// Orbit-only groups covered by the suite.
pub fn orbit_groups() -> Vec<GroupAction> {
    let chain = |index| ChainSpec { points: 6, index, variant: Default::default(), axis_scaling: Default::default() };
    [GroupId::GlobalSe3 { points: 5 }, GroupId::Torsion(chain(2)), GroupId::BondAngle(chain(2)), GroupId::So2Rotation]
        .into_iter()
        .map(|id| make_group(id, GroupParams::default()).expect("registered group"))
        .collect()
}

/// Every check over every registered group, negative controls included.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let tol = &opts.tolerances;
    let (n, seed) = (opts.n_points, opts.seed);
    let mut records = Vec::new();
    for g in density_groups() {
        records.push(check_completeness(&g, n, seed, tol.completeness));
        records.push(check_commutators(&g, n, opts.commutator_h, seed, tol.commutator));
        records.push(check_divergence_identity(&g, n, opts.divergence_h, seed, tol.divergence));
        records.push(check_jacobian_density(&g, n, seed, tol.jacobian)?);
        records.push(check_divergence_consistency(&g, n.min(200), seed, tol.divergence)?);
        records.push(check_exp_consistency(&g, n.min(200), seed, tol.exp_consistency)?);
        records.push(check_reverse_drift(&g, 50, seed, tol.reverse_drift, false)?);
    }
    for g in orbit_groups() {
        records.push(check_orbit_rank(&g, n, seed, tol.completeness));
        records.push(check_commutators(&g, n.min(200), opts.commutator_h, seed, tol.commutator));
        records.push(check_divergence_identity(&g, n.min(200), opts.divergence_h, seed, tol.divergence));
    }
    let so2 = make_group(GroupId::So2Dilation, GroupParams::default())?;
    let so3 = make_group(GroupId::So3Dilation, GroupParams::default())?;
    records.push(check_completeness(&RotationOnly, n, seed, tol.completeness).control());
    records.push(check_commutators(&NormalizedFields(so2.clone()), n, opts.commutator_h, seed, tol.commutator).control());
    records.push(check_reverse_drift(&so3, 50, seed, tol.reverse_drift, true)?.control());
    if opts.stochastic {
        let sched = make_schedule(ScheduleKind::Cosine, crate::constants::DIFFUSION_STEPS)?;
        let t = sched.steps();
        let times = [t / 4 - 1, t / 2 - 1, t - 1];
        for id in [GroupId::Translation { n: 2 }, GroupId::So2Dilation, GroupId::So3Dilation] {
            let g = make_group(id, GroupParams::default())?;
            records.extend(check_forward_equivalence(&g, &sched, &times, opts.n_samples, opts.em_steps, opts.coupling, seed, tol.forward_w2)?);
        }
        records.extend(check_so2_closed_form(opts.n_samples, opts.coupling, seed, tol.so2_pathwise, tol.so2_terminal_w2)?);
    }
    Ok(VerifyReport::new(records, seed))
}

/// Draws used by tests that need a generic RNG.
pub fn uniform_points(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect()).collect()
}
