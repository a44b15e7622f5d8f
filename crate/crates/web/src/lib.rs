//! Browser bindings for three small operations: forward corruption of a point,
//! exact-score sampling of a Gaussian target, and a torsion flow on a chain.
//!
//! Each export returns a flat array of coordinates. The plain Rust functions
//! underneath are what the native tests exercise.

use ndarray::{Array2, ArrayView1, ArrayView2};
use wasm_bindgen::prelude::*;

use lie_diffuse::lie::{AxisScaling, ChainSpec, OperatorVariant};
use lie_diffuse::rng::stream;
use lie_diffuse::sde::{forward_sample, gaussian_target_score, sample, SamplerConfig};
use lie_diffuse::{make_group, make_schedule, GroupId, GroupParams, Result, ScheduleKind};

/// Number of diffusion steps used by every demo operation.
pub const DEMO_STEPS: usize = 100;
/// Upper bound on points per call, to keep the page responsive.
pub const MAX_POINTS: usize = 4096;

/// Six-point chain used by the torsion demo.
pub const DEMO_CHAIN: [f64; 18] = [
    0.0, 0.0, 0.0, //
    1.5, 0.0, 0.0, //
    2.2, 1.3, 0.0, //
    3.7, 1.3, 0.2, //
    4.4, 2.6, 0.6, //
    5.9, 2.7, 0.9,
];
/// Bond whose dihedral the demo rotates.
pub const DEMO_BOND: usize = 2;

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_POINTS {
        return Err(lie_diffuse::Error::InvalidParams(format!("point count must be in 1..={MAX_POINTS}, got {n}")));
    }
    Ok(())
}

/// `n` corrupted copies of `(x, y)` at step `t` under a plane group (`so2` or `t2`).
pub fn forward_cloud_native(group: &str, x: f64, y: f64, t: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_n(n)?;
    let id: GroupId = group.parse()?;
    let g = make_group(id, GroupParams::default())?;
    if g.dim_x != 2 {
        return Err(lie_diffuse::Error::InvalidParams(format!("demo groups act on the plane, '{group}' does not")));
    }
    let sched = make_schedule(ScheduleKind::Cosine, DEMO_STEPS)?;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut rng = stream(seed, i as u64);
        out.extend(forward_sample(&g, &sched, &[x, y], t, &mut rng)?.x_t);
    }
    Ok(out)
}

/// Reverse-time samples of a target that is Gaussian in the flow coordinates
/// (radial, angle) of plane rotations and dilations, driven by its exact score.
pub fn oracle_sample_native(mean: [f64; 2], std: [f64; 2], n: usize, seed: u64) -> Result<Vec<f64>> {
    check_n(n)?;
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(lie_diffuse::Error::InvalidParams("standard deviations must be positive".into()));
    }
    let g = make_group(GroupId::So2Dilation, GroupParams::default())?;
    let sched = make_schedule(ScheduleKind::Cosine, DEMO_STEPS)?;
    let score = |x: ArrayView2<f64>, t: usize| -> Array2<f64> {
        let mut s = Array2::zeros((x.nrows(), 2));
        for (i, row) in x.outer_iter().enumerate() {
            let tau = match g.to_flow_coords(&row.to_vec()) {
                Ok(c) => c.unwrap_near(&mean),
                Err(_) => continue,
            };
            s.row_mut(i).assign(&ArrayView1::from(&gaussian_target_score(&sched, t, &tau, &mean, &std)[..]));
        }
        s
    };
    let out = sample(&g, &sched, &score, n, &SamplerConfig::new(seed))?;
    Ok(out.batch.x.iter().copied().collect())
}

/// The demo chain after turning its middle dihedral by `angle` radians.
pub fn torsion_chain_native(angle: f64) -> Result<Vec<f64>> {
    let spec = ChainSpec { points: 6, index: DEMO_BOND, variant: OperatorVariant::Centered, axis_scaling: AxisScaling::Normalized };
    let params = GroupParams { reference: Some(DEMO_CHAIN.to_vec()), ..Default::default() };
    let g = make_group(GroupId::Torsion(spec), params)?;
    g.group_exp_apply(&[angle], &DEMO_CHAIN)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Flat `[x0, y0, x1, y1, ...]` of forward-corrupted points.
#[wasm_bindgen]
pub fn forward_cloud(group: &str, x: f64, y: f64, t: usize, n: usize, seed: u32) -> std::result::Result<Vec<f64>, JsValue> {
    js(forward_cloud_native(group, x, y, t, n, seed as u64))
}

/// Flat `[x0, y0, ...]` of samples from the exact-score sampler.
#[wasm_bindgen]
pub fn oracle_sample(mean_radial: f64, mean_angle: f64, std_radial: f64, std_angle: f64, n: usize, seed: u32) -> std::result::Result<Vec<f64>, JsValue> {
    js(oracle_sample_native([mean_radial, mean_angle], [std_radial, std_angle], n, seed as u64))
}

/// Flat `[x0, y0, z0, ...]` of the rotated six-point chain.
#[wasm_bindgen]
pub fn torsion_chain(angle: f64) -> std::result::Result<Vec<f64>, JsValue> {
    js(torsion_chain_native(angle))
}
