//! Global rotations and translations of a point cloud about its center of mass.

use super::generator::{Generator, StructuredOperator};
use super::vecops::{point, rotate, set_point, sub3};
use super::EPS_SING;
use crate::error::{Error, Result};

pub fn center_of_mass(x: &[f64], n: usize) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in 0..n {
        let p = point(x, j);
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    [c[0] / n as f64, c[1] / n as f64, c[2] / n as f64]
}

/// Euler angles `(φ1, θ1, φ2)` with `x - c = R_z(φ1) R_y(θ1) R_z(φ2) x̂`, where the
/// canonical frame `x̂` puts point 0 on +z and point 1 in the xz half-plane x > 0.
pub fn euler_angles(x: &[f64], n: usize) -> Result<[f64; 3]> {
    let c = center_of_mass(x, n);
    let y1 = sub3(point(x, 0), c);
    let rho1 = y1[0].hypot(y1[1]);
    if rho1 < EPS_SING {
        return Err(Error::GimbalDegeneracy(0));
    }
    let phi1 = y1[1].atan2(y1[0]);
    let theta1 = rho1.atan2(y1[2]);
    let y2 = sub3(point(x, 1), c);
    let t = rotate(rotate(y2, [0.0, 0.0, 1.0], -phi1), [0.0, 1.0, 0.0], -theta1);
    if t[0].hypot(t[1]) < EPS_SING {
        return Err(Error::GimbalDegeneracy(1));
    }
    let phi2 = t[1].atan2(t[0]);
    Ok([phi1, theta1, phi2])
}

/// `R_z(φ1) R_y(θ1) R_z(φ2) v`.
pub fn euler_rotate(angles: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let v = rotate(v, [0.0, 0.0, 1.0], angles[2]);
    let v = rotate(v, [0.0, 1.0, 0.0], angles[1]);
    rotate(v, [0.0, 0.0, 1.0], angles[0])
}

/// Inverse of [`euler_rotate`].
pub fn euler_unrotate(angles: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let v = rotate(v, [0.0, 0.0, 1.0], -angles[0]);
    let v = rotate(v, [0.0, 1.0, 0.0], -angles[1]);
    rotate(v, [0.0, 0.0, 1.0], -angles[2])
}

/// Cloud expressed in its canonical frame (centered, zero Euler angles).
pub fn canonical_frame(x: &[f64], n: usize) -> Result<Vec<f64>> {
    let angles = euler_angles(x, n)?;
    let c = center_of_mass(x, n);
    let mut out = vec![0.0; 3 * n];
    for j in 0..n {
        set_point(&mut out, j, euler_unrotate(angles, sub3(point(x, j), c)));
    }
    Ok(out)
}

/// Generators `[φ1, θ1, φ2, t_x, t_y, t_z]` evaluated at `x`.
pub fn generators(x: &[f64], n: usize) -> Result<Vec<Generator>> {
    let c = center_of_mass(x, n);
    let y1 = sub3(point(x, 0), c);
    let r1 = (y1[0] * y1[0] + y1[1] * y1[1] + y1[2] * y1[2]).sqrt();
    let rho1 = y1[0].hypot(y1[1]);
    if rho1 < EPS_SING {
        return Err(Error::GimbalDegeneracy(0));
    }
    let (sp, cp) = (y1[1] / rho1, y1[0] / rho1);
    let block = |axis: [f64; 3]| {
        Generator::Blocks(StructuredOperator { points: n, first: 0, axis, center: c, point_dependent: true })
    };
    let mut gens = vec![
        block([0.0, 0.0, 1.0]),
        block([-sp, cp, 0.0]),
        block([y1[0] / r1, y1[1] / r1, y1[2] / r1]),
    ];
    for k in 0..3 {
        let mut v = vec![0.0; 3 * n];
        for j in 0..n {
            v[3 * j + k] = 1.0;
        }
        gens.push(Generator::Translation(v));
    }
    Ok(gens)
}
