//! Variance-preserving noise schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-step noise rate after clipping.
pub const MAX_BETA: f64 = 0.999;
/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Linear-schedule endpoints, quoted for a 1000-step discretization.
pub const LINEAR_BETA_RANGE: (f64, f64) = (1e-4, 2e-2);
/// Upper bound on the final signal coefficient.
pub const MAX_FINAL_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

/// Discretized schedule. Index `k` holds step `t = k + 1` of a T-step process:
/// `τ_t = ᾱ_t τ₀ + σ_t η` with `ᾱ_t² + σ_t² = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn cosine_f(s: f64) -> f64 {
    (((s + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2).cos().powi(2)
}

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidParams(format!("schedule needs T >= 2, got {steps}")));
    }
    let t = steps as f64;
    let beta: Vec<f64> = match kind {
        ScheduleKind::Cosine => (1..=steps)
            .map(|k| {
                let ratio = cosine_f(k as f64 / t) / cosine_f((k - 1) as f64 / t);
                (1.0 - ratio).clamp(0.0, MAX_BETA)
            })
            .collect(),
        ScheduleKind::Linear => {
            let scale = 1000.0 / t;
            let (lo, hi) = (LINEAR_BETA_RANGE.0 * scale, LINEAR_BETA_RANGE.1 * scale);
            (0..steps)
                .map(|k| (lo + (hi - lo) * k as f64 / (t - 1.0)).min(MAX_BETA))
                .collect()
        }
    };
    NoiseSchedule::from_betas(kind, beta)
}

impl NoiseSchedule {
    /// Build from per-step rates: `ᾱ_t² = ∏_{s≤t} (1 − β_s)`.
    pub fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidParams("betas must lie in (0, 1) and number at least 2".into()));
        }
        let mut prod = 1.0;
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut sigma = Vec::with_capacity(beta.len());
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod.sqrt());
            sigma.push((1.0 - prod).sqrt());
        }
        Ok(NoiseSchedule { kind, steps: beta.len(), beta, alpha_bar, sigma })
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Check the variance-preserving invariants; `final_alpha` bounds ᾱ_T.
    pub fn validate(&self, final_alpha: f64) -> Result<()> {
        let n = self.steps;
        let ok_len = self.beta.len() == n && self.alpha_bar.len() == n && self.sigma.len() == n;
        let vp = (0..n).all(|k| (self.alpha_bar[k].powi(2) + self.sigma[k].powi(2) - 1.0).abs() <= 1e-12);
        let mono = (1..n).all(|k| self.alpha_bar[k] < self.alpha_bar[k - 1] && self.sigma[k] > self.sigma[k - 1]);
        if !(ok_len && vp && mono && self.alpha_bar[n - 1] <= final_alpha) {
            return Err(Error::InvalidParams("schedule violates variance-preserving invariants".into()));
        }
        Ok(())
    }

    /// Continuous interpolant on `s ∈ [0, 1]`: `(ᾱ, σ, dᾱ/ds, dσ/ds)`.
    pub fn continuous(&self, s: f64) -> (f64, f64, f64, f64) {
        let (a, da) = match self.kind {
            ScheduleKind::Cosine => {
                let w = std::f64::consts::FRAC_PI_2 / (1.0 + COSINE_OFFSET);
                let th = (s + COSINE_OFFSET) * w;
                let c0 = (COSINE_OFFSET * w).cos();
                (th.cos() / c0, -th.sin() * w / c0)
            }
            ScheduleKind::Linear => {
                // β(s) = T(lo + (hi − lo)s) on the same 1000-step scale; ᾱ = exp(−½∫β).
                let t = self.steps as f64;
                let scale = 1000.0 / t;
                let (lo, hi) = (LINEAR_BETA_RANGE.0 * scale * t, LINEAR_BETA_RANGE.1 * scale * t);
                let integral = lo * s + 0.5 * (hi - lo) * s * s;
                let a = (-0.5 * integral).exp();
                (a, -0.5 * (lo + (hi - lo) * s) * a)
            }
        };
        let a = a.clamp(0.0, 1.0);
        let sig = (1.0 - a * a).max(0.0).sqrt();
        let dsig = if sig > 0.0 { -a * da / sig } else { f64::INFINITY };
        (a, sig, da, dsig)
    }
}

/// Noise levels seen by the trainer and the reverse sampler.
///
/// Step `k` (0-based) corrupts as `τ_k = mean_coeff(k) τ₀ + sigma(k) η`, and the
/// reverse update from `k` uses rate `beta(k)`.
pub trait Schedule: Sync {
    fn steps(&self) -> usize;
    fn beta(&self, k: usize) -> f64;
    fn mean_coeff(&self, k: usize) -> f64;
    fn sigma(&self, k: usize) -> f64;
    /// Whether the process carries the `−½τ` drift.
    fn has_drift(&self) -> bool;
}

impl Schedule for NoiseSchedule {
    fn steps(&self) -> usize {
        self.steps
    }
    fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }
    fn mean_coeff(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }
    fn sigma(&self, k: usize) -> f64 {
        self.sigma[k]
    }
    fn has_drift(&self) -> bool {
        true
    }
}

/// Zero-drift schedule: `τ_t = τ₀ + √(Σ_{s≤t} β_s) η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub cumulative_variance: Vec<f64>,
}

impl BridgeSchedule {
    /// Cumulative variance growing geometrically from `var_min` to `var_max`.
    pub fn geometric(steps: usize, var_min: f64, var_max: f64) -> Result<Self> {
        if steps < 2 || !(var_min > 0.0 && var_max > var_min) {
            return Err(Error::InvalidParams("bridge schedule needs T >= 2 and 0 < var_min < var_max".into()));
        }
        let ratio = (var_max / var_min).ln() / (steps - 1) as f64;
        let cumulative_variance: Vec<f64> = (0..steps).map(|k| var_min * (ratio * k as f64).exp()).collect();
        let beta = (0..steps)
            .map(|k| if k == 0 { cumulative_variance[0] } else { cumulative_variance[k] - cumulative_variance[k - 1] })
            .collect();
        Ok(BridgeSchedule { steps, beta, cumulative_variance })
    }
}

impl Schedule for BridgeSchedule {
    fn steps(&self) -> usize {
        self.steps
    }
    fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }
    fn mean_coeff(&self, _k: usize) -> f64 {
        1.0
    }
    fn sigma(&self, k: usize) -> f64 {
        self.cumulative_variance[k].sqrt()
    }
    fn has_drift(&self) -> bool {
        false
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Continuous-time OU moments `(e^{−∫β}, √(1 − e^{−∫β}))` in the form used by the
/// planar example, with `∫₀ᵗ β` by adaptive quadrature.
pub fn ou_solution(beta_fn: &dyn Fn(f64) -> f64, t: f64) -> (f64, f64) {
    let m = (-integrate(beta_fn, 0.0, t, 1e-10)).exp();
    (m, (1.0 - m).max(0.0).sqrt())
}

/// Moments of `dτ = −½β τ dt + √β dW`: `(e^{−½∫β}, √(1 − e^{−∫β}))`.
pub fn vp_ou_moments(beta_fn: &dyn Fn(f64) -> f64, t: f64) -> (f64, f64) {
    let i = integrate(beta_fn, 0.0, t, 1e-10);
    ((-0.5 * i).exp(), (1.0 - (-i).exp()).max(0.0).sqrt())
}
