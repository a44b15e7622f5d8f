//! Lie algebra generators and their action on vectors.

use nalgebra::{DMatrix, DVector};

use super::vecops::{self, cross, dot, point, set_point, sub3};
use crate::error::{Error, Result};

/// Largest point count for which a block operator may be materialized densely.
pub const MAX_DENSE_POINTS: usize = 64;

/// Per-point 3×3 rotation blocks on a 3N point cloud.
///
/// Block `j` is `[axis]×` for `j >= first` and zero otherwise; the generator
/// acts on `x_j - center`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredOperator {
    pub points: usize,
    pub first: usize,
    pub axis: [f64; 3],
    pub center: [f64; 3],
    /// Axis or center were computed from the positions the operator acts on.
    pub point_dependent: bool,
}

impl StructuredOperator {
    pub fn dim(&self) -> usize {
        3 * self.points
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for j in self.first..self.points {
            set_point(&mut out, j, cross(self.axis, sub3(point(x, j), self.center)));
        }
        out
    }

    /// Linear part only (no center shift).
    pub fn apply_linear(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for j in self.first..self.points {
            set_point(&mut out, j, cross(self.axis, point(v, j)));
        }
        out
    }

    /// Exact flow by `tau`: rotation by `tau·|axis|` about the axis through `center`.
    pub fn exp_apply(&self, tau: f64, x: &[f64]) -> Vec<f64> {
        let len = vecops::norm3(self.axis);
        let mut out = x.to_vec();
        if len == 0.0 || tau == 0.0 {
            return out;
        }
        let k = vecops::scale3(self.axis, 1.0 / len);
        for j in self.first..self.points {
            let r = vecops::rotate(sub3(point(x, j), self.center), k, tau * len);
            set_point(&mut out, j, [r[0] + self.center[0], r[1] + self.center[1], r[2] + self.center[2]]);
        }
        out
    }

    /// Dense `(M, b)` with `A x = M x + b`.
    pub fn dense(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.points > MAX_DENSE_POINTS {
            return Err(Error::TooLarge(format!(
                "dense materialization limited to {MAX_DENSE_POINTS} points, got {}",
                self.points
            )));
        }
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let [a, b, c] = self.axis;
        let block = [[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]];
        for j in self.first..self.points {
            for r in 0..3 {
                for s in 0..3 {
                    m[(3 * j + r, 3 * j + s)] = block[r][s];
                }
            }
        }
        let mut centers = DVector::zeros(n);
        for j in 0..self.points {
            for r in 0..3 {
                centers[3 * j + r] = self.center[r];
            }
        }
        let offset = -(&m * centers);
        Ok((m, offset))
    }
}

/// One generator evaluated at a point, `Π_i(x) = A_i x` (possibly affine).
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// Constant field `v`.
    Translation(Vec<f64>),
    /// `A = I`.
    Dilation,
    /// `A = v uᵀ − u vᵀ` for orthonormal `u`, `v`.
    PlaneRotation { u: Vec<f64>, v: Vec<f64> },
    /// Block rotations on a point cloud.
    Blocks(StructuredOperator),
}

impl Generator {
    pub fn plane(dim: usize, i: usize, j: usize) -> Self {
        let mut u = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        u[i] = 1.0;
        v[j] = 1.0;
        Generator::PlaneRotation { u, v }
    }

    /// Field value `Π(x)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Generator::Translation(v) => v.clone(),
            Generator::Dilation => x.to_vec(),
            Generator::PlaneRotation { u, v } => {
                let (ux, vx) = (dot(u, x), dot(v, x));
                v.iter().zip(u).map(|(vi, ui)| vi * ux - ui * vx).collect()
            }
            Generator::Blocks(op) => op.apply(x),
        }
    }

    /// Linear part `M v`, with translations contributing zero.
    pub fn apply_linear(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Generator::Translation(_) => vec![0.0; w.len()],
            Generator::Blocks(op) => op.apply_linear(w),
            other => other.apply(w),
        }
    }

    /// `exp(τA) x` with the generator frozen.
    pub fn exp_apply(&self, tau: f64, x: &[f64]) -> Vec<f64> {
        match self {
            Generator::Translation(v) => x.iter().zip(v).map(|(a, b)| a + tau * b).collect(),
            Generator::Dilation => x.iter().map(|a| a * tau.exp()).collect(),
            Generator::PlaneRotation { u, v } => {
                // A³ = −A, so exp(τA) = I + sin τ A + (1 − cos τ) A².
                let (s, c) = tau.sin_cos();
                let (ux, vx) = (dot(u, x), dot(v, x));
                let mut out = x.to_vec();
                for k in 0..x.len() {
                    let ax = v[k] * ux - u[k] * vx;
                    let aax = -(u[k] * ux + v[k] * vx);
                    out[k] += s * ax + (1.0 - c) * aax;
                }
                out
            }
            Generator::Blocks(op) => op.exp_apply(tau, x),
        }
    }

    /// Dense `(M, b)` with `Π(x) = M x + b`.
    pub fn dense(&self, dim: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok(match self {
            Generator::Translation(v) => (DMatrix::zeros(dim, dim), DVector::from_column_slice(v)),
            Generator::Dilation => (DMatrix::identity(dim, dim), DVector::zeros(dim)),
            Generator::PlaneRotation { u, v } => {
                let u = DVector::from_column_slice(u);
                let v = DVector::from_column_slice(v);
                (&v * u.transpose() - &u * v.transpose(), DVector::zeros(dim))
            }
            Generator::Blocks(op) => op.dense()?,
        })
    }
}
