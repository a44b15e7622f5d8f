//! Internal coordinates of point chains and the torsion / bond-angle operators.

use serde::{Deserialize, Serialize};

use super::generator::StructuredOperator;
use super::vecops::{cross, dot3, norm3, point, scale3, sub3};
use super::EPS_SING;
use crate::error::{Error, Result};

/// Where a chain rotation is anchored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorVariant {
    /// Rotation axis through the origin.
    Uncentered,
    /// Rotation axis through the bond (torsion) or vertex (bond angle) point.
    #[default]
    Centered,
}

/// Scaling of the bond-angle rotation axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScaling {
    /// Unit axis oriented so the flow parameter equals the angle increment.
    #[default]
    Normalized,
    /// Raw `x_{i+1,i} × x_{i-1,i}`; the angle changes at rate `-|cross|`.
    CrossProduct,
}

/// A single internal coordinate of an N-point chain (0-based indices).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub points: usize,
    /// Torsion: bond `(index, index+1)`, `1 <= index <= N-3`.
    /// Bond angle: vertex `index`, `1 <= index <= N-2`.
    pub index: usize,
    #[serde(default)]
    pub variant: OperatorVariant,
    #[serde(default)]
    pub axis_scaling: AxisScaling,
}

/// Signed dihedral of four points, in (-π, π].
pub fn dihedral(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> f64 {
    let b1 = sub3(p1, p0);
    let b2 = sub3(p2, p1);
    let b3 = sub3(p3, p2);
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let y = norm3(b2) * dot3(b1, n2);
    let x = dot3(n1, n2);
    y.atan2(x)
}

/// Angle at `v` between `a - v` and `b - v`.
pub fn bond_angle(a: [f64; 3], v: [f64; 3], b: [f64; 3]) -> f64 {
    let u = sub3(a, v);
    let w = sub3(b, v);
    norm3(cross(u, w)).atan2(dot3(u, w))
}

/// Dihedral about bond `(i, i+1)` of a flattened point cloud.
pub fn chain_dihedral(x: &[f64], i: usize) -> f64 {
    dihedral(point(x, i - 1), point(x, i), point(x, i + 1), point(x, i + 2))
}

/// Bond angle at vertex `i` of a flattened point cloud.
pub fn chain_bond_angle(x: &[f64], i: usize) -> f64 {
    bond_angle(point(x, i - 1), point(x, i), point(x, i + 1))
}

fn check_len(positions: &[f64], n: usize) -> Result<()> {
    if positions.len() != 3 * n {
        return Err(Error::SizeMismatch(format!(
            "expected {} coordinates for {n} points, got {}",
            3 * n,
            positions.len()
        )));
    }
    Ok(())
}

/// Rotation of all points after bond `(i, i+1)` about that bond's direction.
pub fn torsion_operator(
    positions: &[f64],
    n: usize,
    i: usize,
    variant: OperatorVariant,
) -> Result<StructuredOperator> {
    check_len(positions, n)?;
    if n < 4 || i < 1 || i + 3 > n {
        return Err(Error::InvalidParams(format!(
            "torsion bond index must satisfy 1 <= i <= N-3 (N = {n}, i = {i})"
        )));
    }
    let b = sub3(point(positions, i + 1), point(positions, i));
    let len = norm3(b);
    if len < EPS_SING {
        return Err(Error::DegenerateBond(i, i + 1));
    }
    let center = match variant {
        OperatorVariant::Uncentered => [0.0; 3],
        OperatorVariant::Centered => point(positions, i + 1),
    };
    Ok(StructuredOperator {
        points: n,
        first: i + 2,
        axis: scale3(b, 1.0 / len),
        center,
        point_dependent: true,
    })
}

/// Rotation of all points after vertex `i` in the plane of its two bonds.
pub fn bond_angle_operator(
    positions: &[f64],
    n: usize,
    i: usize,
    variant: OperatorVariant,
    scaling: AxisScaling,
) -> Result<StructuredOperator> {
    check_len(positions, n)?;
    if n < 3 || i < 1 || i + 2 > n {
        return Err(Error::InvalidParams(format!(
            "bond-angle vertex must satisfy 1 <= i <= N-2 (N = {n}, i = {i})"
        )));
    }
    let vertex = point(positions, i);
    let next = sub3(point(positions, i + 1), vertex);
    let prev = sub3(point(positions, i - 1), vertex);
    let c = cross(next, prev);
    let len = norm3(c);
    if len < EPS_SING {
        return Err(Error::DegenerateAngle(i));
    }
    let axis = match scaling {
        AxisScaling::Normalized => scale3(c, -1.0 / len),
        AxisScaling::CrossProduct => c,
    };
    let center = match variant {
        OperatorVariant::Uncentered => [0.0; 3],
        OperatorVariant::Centered => vertex,
    };
    Ok(StructuredOperator { points: n, first: i + 1, axis, center, point_dependent: true })
}
