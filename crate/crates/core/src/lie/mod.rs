//! Lie group actions on ℝⁿ: fundamental fields, flow coordinates, Casimir and
//! divergence fields.

pub mod chain;
pub mod generator;
pub mod se3;
pub mod vecops;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use chain::{
    bond_angle, bond_angle_operator, chain_bond_angle, chain_dihedral, dihedral, torsion_operator,
    AxisScaling, ChainSpec, OperatorVariant,
};
pub use generator::{Generator, StructuredOperator};

use crate::error::{Error, Result};
use vecops::{norm, point, wrap_angle};

/// Width of the singular set in ambient units.
pub const EPS_SING: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusConvention {
    /// Radial flow coordinate is `log ‖x‖`.
    #[default]
    LogRadius,
    /// Radial flow coordinate is `‖x‖` (coordinate reporting only; fields are unchanged).
    RawRadius,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordDomain {
    Unbounded,
    Angular,
}

/// Flow coordinates of a point; angular entries are plain reals.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCoords {
    pub values: Vec<f64>,
    pub domains: Vec<CoordDomain>,
}

impl FlowCoords {
    /// Shift every angular entry by a multiple of 2π to lie nearest `reference`.
    pub fn unwrap_near(&self, reference: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.domains)
            .zip(reference)
            .map(|((&v, d), &r)| match d {
                CoordDomain::Angular => r + wrap_angle(v - r),
                CoordDomain::Unbounded => v,
            })
            .collect()
    }
}

/// Which group acts on the data space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupId {
    /// Translations of ℝⁿ.
    Translation { n: usize },
    /// Rotations and dilations of the plane.
    So2Dilation,
    /// Rotations of the plane only (constrained; radius is kept).
    So2Rotation,
    /// Spherical rotations and dilations of ℝ³.
    So3Dilation,
    /// Hyperspherical rotations and dilations of ℝ⁴.
    So4Dilation,
    /// Hyperspherical rotations and dilations of ℝⁿ, n ≥ 4.
    SonDilation { n: usize },
    /// One chain dihedral.
    Torsion(ChainSpec),
    /// One chain bond angle.
    BondAngle(ChainSpec),
    /// Global rotations about the center of mass plus translations of N points.
    GlobalSe3 { points: usize },
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Translation { n } => write!(f, "T({n})"),
            GroupId::So2Dilation => write!(f, "SO(2)xR+"),
            GroupId::So2Rotation => write!(f, "SO(2)"),
            GroupId::So3Dilation => write!(f, "SO(3)xR+"),
            GroupId::So4Dilation => write!(f, "SO(4)xR+"),
            GroupId::SonDilation { n } => write!(f, "SO({n})xR+"),
            GroupId::Torsion(c) => write!(f, "Torsion(N={}, bond={})", c.points, c.index),
            GroupId::BondAngle(c) => write!(f, "BondAngle(N={}, vertex={})", c.points, c.index),
            GroupId::GlobalSe3 { points } => write!(f, "SE(3)^{points}"),
        }
    }
}

impl FromStr for GroupId {
    type Err = Error;

    /// Short names: `t<n>`, `so2`, `so2rot`, `so3`, `so4`, `son<n>`, `se3:<N>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidParams(format!("unknown group name '{s}'"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        Ok(match s.as_str() {
            "so2" => GroupId::So2Dilation,
            "so2rot" => GroupId::So2Rotation,
            "so3" => GroupId::So3Dilation,
            "so4" => GroupId::So4Dilation,
            _ if s.starts_with("se3:") => GroupId::GlobalSe3 { points: num(&s[4..])? },
            _ if s.starts_with("son") => GroupId::SonDilation { n: num(&s[3..])? },
            _ if s.starts_with('t') => GroupId::Translation { n: num(&s[1..])? },
            _ => return Err(bad()),
        })
    }
}

/// Construction parameters shared by all groups.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    #[serde(default)]
    pub radius_convention: RadiusConvention,
    /// Reference configuration for constrained groups (the point reached at τ = 0).
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
}

/// Immutable descriptor of a group action on ℝ^dim_x.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAction {
    pub id: GroupId,
    pub dim_x: usize,
    pub dim_g: usize,
    pub radius_convention: RadiusConvention,
    pub constrained: bool,
    reference: Option<Vec<f64>>,
}

pub fn make_group(id: GroupId, params: GroupParams) -> Result<GroupAction> {
    let invalid = |m: String| Err(Error::InvalidParams(m));
    let (dim_x, dim_g, constrained) = match &id {
        GroupId::Translation { n } => {
            if *n < 1 {
                return invalid("translation group needs n >= 1".into());
            }
            (*n, *n, false)
        }
        GroupId::So2Dilation => (2, 2, false),
        GroupId::So2Rotation => (2, 1, true),
        GroupId::So3Dilation => (3, 3, false),
        GroupId::So4Dilation => (4, 4, false),
        GroupId::SonDilation { n } => {
            if *n < 4 {
                return invalid(format!("hyperspherical group needs n >= 4, got {n}"));
            }
            (*n, *n, false)
        }
        GroupId::Torsion(c) => {
            if c.points < 4 || c.index < 1 || c.index + 3 > c.points {
                return invalid(format!(
                    "torsion needs N >= 4 and 1 <= bond <= N-3 (N = {}, bond = {})",
                    c.points, c.index
                ));
            }
            (3 * c.points, 1, true)
        }
        GroupId::BondAngle(c) => {
            if c.points < 3 || c.index < 1 || c.index + 2 > c.points {
                return invalid(format!(
                    "bond angle needs N >= 3 and 1 <= vertex <= N-2 (N = {}, vertex = {})",
                    c.points, c.index
                ));
            }
            (3 * c.points, 1, true)
        }
        GroupId::GlobalSe3 { points } => {
            if *points < 2 {
                return invalid(format!("global SE(3) needs N >= 2 points, got {points}"));
            }
            (3 * points, 6, true)
        }
    };
    let mut g = GroupAction {
        id,
        dim_x,
        dim_g,
        radius_convention: params.radius_convention,
        constrained,
        reference: None,
    };
    if let Some(r) = params.reference {
        g = g.with_reference(r)?;
    } else if g.id == GroupId::So2Rotation {
        g.reference = Some(vec![1.0, 0.0]);
    }
    Ok(g)
}

/// Global SE(3) acting on `n` points.
pub fn global_se3_group(n: usize) -> Result<GroupAction> {
    make_group(GroupId::GlobalSe3 { points: n }, GroupParams::default())
}

/// Angles and center of mass of a point cloud: `(φ1, θ1, φ2, c_x, c_y, c_z)`.
pub fn angles_from_positions(g: &GroupAction, positions: &[f64]) -> Result<FlowCoords> {
    match g.id {
        GroupId::GlobalSe3 { .. } => g.to_flow_coords(positions),
        _ => Err(Error::InvalidParams("angles_from_positions needs a global SE(3) group".into())),
    }
}

impl GroupAction {
    /// Attach the configuration reached at τ = 0 (used by constrained groups).
    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        self.check_dim(&reference)?;
        let stored = match &self.id {
            GroupId::GlobalSe3 { points } => se3::canonical_frame(&reference, *points)?,
            GroupId::Torsion(_) | GroupId::BondAngle(_) | GroupId::So2Rotation => {
                self.generators(&reference)?;
                reference
            }
            _ => reference,
        };
        self.reference = Some(stored);
        Ok(self)
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    fn require_reference(&self) -> Result<&[f64]> {
        self.reference
            .as_deref()
            .ok_or_else(|| Error::InvalidParams(format!("group {} needs a reference configuration", self.id)))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_x {
            return Err(Error::SizeMismatch(format!(
                "state has {} entries, group {} acts on {}",
                x.len(),
                self.id,
                self.dim_x
            )));
        }
        Ok(())
    }

    /// Whether the group can model densities on all of ℝ^dim_x.
    pub fn is_density_model(&self) -> bool {
        !self.constrained
    }

    pub fn domains(&self) -> Vec<CoordDomain> {
        use CoordDomain::*;
        match &self.id {
            GroupId::Translation { n } => vec![Unbounded; *n],
            GroupId::So2Rotation | GroupId::Torsion(_) | GroupId::BondAngle(_) => vec![Angular],
            GroupId::GlobalSe3 { .. } => vec![Angular, Angular, Angular, Unbounded, Unbounded, Unbounded],
            _ => {
                let mut d = vec![Angular; self.dim_g];
                d[0] = Unbounded;
                d
            }
        }
    }

    /// Order in which frozen exponentials compose exactly.
    pub fn exp_order(&self) -> Vec<usize> {
        match self.id {
            GroupId::GlobalSe3 { .. } => vec![2, 1, 0, 3, 4, 5],
            _ => (0..self.dim_g).collect(),
        }
    }

    /// Index of the dilation generator, if any.
    pub fn dilation_index(&self) -> Option<usize> {
        match self.id {
            GroupId::So2Dilation | GroupId::So3Dilation | GroupId::So4Dilation | GroupId::SonDilation { .. } => {
                Some(0)
            }
            _ => None,
        }
    }

    fn singular(&self, what: &str) -> Error {
        Error::SingularPoint(format!("{what} for group {}", self.id))
    }

    /// Generators `A_i` evaluated at `x` (point-dependent ones use the chart at `x`).
    pub fn generators(&self, x: &[f64]) -> Result<Vec<Generator>> {
        self.check_dim(x)?;
        let n = self.dim_x;
        match &self.id {
            GroupId::Translation { n } => Ok((0..*n)
                .map(|k| {
                    let mut v = vec![0.0; *n];
                    v[k] = 1.0;
                    Generator::Translation(v)
                })
                .collect()),
            GroupId::So2Dilation | GroupId::So2Rotation => {
                if norm(x) < EPS_SING {
                    return Err(self.singular("origin"));
                }
                let rot = Generator::plane(2, 0, 1);
                Ok(if self.id == GroupId::So2Rotation { vec![rot] } else { vec![Generator::Dilation, rot] })
            }
            GroupId::So3Dilation => {
                let rho = x[0].hypot(x[1]);
                if rho < EPS_SING {
                    return Err(self.singular("z axis"));
                }
                Ok(vec![
                    Generator::Dilation,
                    Generator::PlaneRotation { u: vec![0.0, 0.0, 1.0], v: vec![x[0] / rho, x[1] / rho, 0.0] },
                    Generator::plane(3, 0, 1),
                ])
            }
            GroupId::So4Dilation | GroupId::SonDilation { .. } => {
                if x[n - 2].hypot(x[n - 1]) < EPS_SING {
                    return Err(self.singular("hyperspherical chart boundary"));
                }
                let mut gens = vec![Generator::Dilation];
                for j in 0..n - 2 {
                    let rho = norm(&x[j + 1..]);
                    let mut u = vec![0.0; n];
                    u[j] = 1.0;
                    let mut v = vec![0.0; n];
                    for k in j + 1..n {
                        v[k] = x[k] / rho;
                    }
                    gens.push(Generator::PlaneRotation { u, v });
                }
                gens.push(Generator::plane(n, n - 2, n - 1));
                Ok(gens)
            }
            GroupId::Torsion(c) => Ok(vec![Generator::Blocks(torsion_operator(x, c.points, c.index, c.variant)?)]),
            GroupId::BondAngle(c) => Ok(vec![Generator::Blocks(bond_angle_operator(
                x,
                c.points,
                c.index,
                c.variant,
                c.axis_scaling,
            )?)]),
            GroupId::GlobalSe3 { points } => se3::generators(x, *points),
        }
    }

    /// Columns `Π_i(x)`.
    pub fn fields(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.generators(x)?.iter().map(|g| g.apply(x)).collect())
    }

    /// Π(x) as a dim_x × dim_g matrix.
    pub fn fundamental_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let cols = self.fields(x)?;
        Ok(DMatrix::from_fn(self.dim_x, self.dim_g, |r, c| cols[c][r]))
    }

    /// `Σ_i A_i(x)² x`, the Casimir drift.
    pub fn casimir_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_x];
        for g in self.generators(x)? {
            let v = g.apply_linear(&g.apply(x));
            vecops::add_scaled(&mut out, 1.0, &v);
        }
        Ok(out)
    }

    /// Per-generator divergences `∇·Π_i(x)`.
    pub fn divergence_scalars(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.id {
            GroupId::Translation { n } => {
                self.check_dim(x)?;
                Ok(vec![0.0; n])
            }
            GroupId::So2Dilation | GroupId::So2Rotation => {
                self.generators(x)?;
                Ok(if self.id == GroupId::So2Rotation { vec![0.0] } else { vec![2.0, 0.0] })
            }
            GroupId::So3Dilation => {
                self.generators(x)?;
                Ok(vec![3.0, x[2] / x[0].hypot(x[1]), 0.0])
            }
            _ => self.divergence_scalars_fd(x),
        }
    }

    /// Central-difference divergences with `h = 1e-6 (1 + ‖x‖)`.
    pub fn divergence_scalars_fd(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.generators(x)?;
        let h = 1e-6 * (1.0 + norm(x));
        let mut div = vec![0.0; self.dim_g];
        let mut xp = x.to_vec();
        for k in 0..self.dim_x {
            xp[k] = x[k] + h;
            let fp = self.fields(&xp)?;
            xp[k] = x[k] - h;
            let fm = self.fields(&xp)?;
            xp[k] = x[k];
            for i in 0..self.dim_g {
                div[i] += (fp[i][k] - fm[i][k]) / (2.0 * h);
            }
        }
        Ok(div)
    }

    /// `Π(x) (∇ᵀ·Π(x))`.
    pub fn divergence_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let div = self.divergence_scalars(x)?;
        let mut out = vec![0.0; self.dim_x];
        for (d, f) in div.iter().zip(self.fields(x)?) {
            vecops::add_scaled(&mut out, *d, &f);
        }
        Ok(out)
    }

    fn radial(&self, x: &[f64]) -> f64 {
        match self.radius_convention {
            RadiusConvention::LogRadius => norm(x).ln(),
            RadiusConvention::RawRadius => norm(x),
        }
    }

    fn radius_from(&self, r: f64) -> f64 {
        match self.radius_convention {
            RadiusConvention::LogRadius => r.exp(),
            RadiusConvention::RawRadius => r,
        }
    }

    /// Flow coordinates of `x`; angles in their principal branch.
    pub fn to_flow_coords(&self, x: &[f64]) -> Result<FlowCoords> {
        self.check_dim(x)?;
        let values = match &self.id {
            GroupId::Translation { .. } => x.to_vec(),
            GroupId::So2Dilation => {
                self.generators(x)?;
                vec![self.radial(x), x[1].atan2(x[0])]
            }
            GroupId::So2Rotation => {
                self.generators(x)?;
                let r = self.require_reference()?;
                vec![wrap_angle(x[1].atan2(x[0]) - r[1].atan2(r[0]))]
            }
            GroupId::So3Dilation => {
                self.generators(x)?;
                let rho = x[0].hypot(x[1]);
                vec![self.radial(x), rho.atan2(x[2]), x[1].atan2(x[0])]
            }
            GroupId::So4Dilation | GroupId::SonDilation { .. } => {
                self.generators(x)?;
                let n = self.dim_x;
                let mut v = vec![self.radial(x)];
                for j in 0..n - 2 {
                    v.push(norm(&x[j + 1..]).atan2(x[j]));
                }
                v.push(x[n - 1].atan2(x[n - 2]));
                v
            }
            GroupId::Torsion(c) => {
                self.generators(x)?;
                if c.variant != OperatorVariant::Centered {
                    return Err(Error::InvalidParams("torsion flow coordinates need the centered variant".into()));
                }
                let r = self.require_reference()?;
                vec![wrap_angle(chain_dihedral(x, c.index) - chain_dihedral(r, c.index))]
            }
            GroupId::BondAngle(c) => {
                self.generators(x)?;
                if c.variant != OperatorVariant::Centered || c.axis_scaling != AxisScaling::Normalized {
                    return Err(Error::InvalidParams(
                        "bond-angle flow coordinates need the centered, normalized operator".into(),
                    ));
                }
                let r = self.require_reference()?;
                vec![chain_bond_angle(x, c.index) - chain_bond_angle(r, c.index)]
            }
            GroupId::GlobalSe3 { points } => {
                let a = se3::euler_angles(x, *points)?;
                let c = se3::center_of_mass(x, *points);
                vec![a[0], a[1], a[2], c[0], c[1], c[2]]
            }
        };
        Ok(FlowCoords { values, domains: self.domains() })
    }

    /// The point reached from the reference by the flow with coordinates `tau`.
    pub fn from_flow_coords(&self, tau: &[f64]) -> Result<Vec<f64>> {
        if tau.len() != self.dim_g {
            return Err(Error::SizeMismatch(format!("{} flow coordinates for dim_g = {}", tau.len(), self.dim_g)));
        }
        Ok(match &self.id {
            GroupId::Translation { .. } => tau.to_vec(),
            GroupId::So2Dilation => {
                let r = self.radius_from(tau[0]);
                vec![r * tau[1].cos(), r * tau[1].sin()]
            }
            GroupId::So2Rotation => Generator::plane(2, 0, 1).exp_apply(tau[0], self.require_reference()?),
            GroupId::So3Dilation => {
                let r = self.radius_from(tau[0]);
                let (st, ct) = tau[1].sin_cos();
                let (sp, cp) = tau[2].sin_cos();
                vec![r * st * cp, r * st * sp, r * ct]
            }
            GroupId::So4Dilation | GroupId::SonDilation { .. } => {
                let n = self.dim_x;
                let mut x = vec![0.0; n];
                let mut s = self.radius_from(tau[0]);
                for j in 0..n - 1 {
                    x[j] = s * tau[j + 1].cos();
                    s *= tau[j + 1].sin();
                }
                x[n - 1] = s;
                x
            }
            GroupId::Torsion(_) | GroupId::BondAngle(_) => {
                let r = self.require_reference()?;
                self.generators(r)?[0].exp_apply(tau[0], r)
            }
            GroupId::GlobalSe3 { points } => {
                let canon = self.require_reference()?;
                let mut x = vec![0.0; 3 * points];
                for j in 0..*points {
                    let p = se3::euler_rotate([tau[0], tau[1], tau[2]], point(canon, j));
                    vecops::set_point(&mut x, j, [p[0] + tau[3], p[1] + tau[4], p[2] + tau[5]]);
                }
                x
            }
        })
    }

    /// `∏_i exp(τ_i A_i) x` with the generators frozen at `x`, composed in [`Self::exp_order`].
    pub fn group_exp_apply(&self, tau: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if tau.len() != self.dim_g {
            return Err(Error::SizeMismatch(format!("{} flow coordinates for dim_g = {}", tau.len(), self.dim_g)));
        }
        let gens = self.generators(x)?;
        let mut y = x.to_vec();
        for i in self.exp_order() {
            if tau[i] != 0.0 {
                y = gens[i].exp_apply(tau[i], &y);
            }
        }
        Ok(y)
    }

    /// Push `x` out of the singular set; returns whether it was moved.
    pub fn regularize(&self, x: &mut [f64]) -> bool {
        let push = |v: &mut [f64]| {
            let r = norm(v);
            if r >= EPS_SING {
                return false;
            }
            if r == 0.0 {
                v[0] = EPS_SING;
            } else {
                for a in v.iter_mut() {
                    *a *= EPS_SING / r;
                }
            }
            true
        };
        let n = x.len();
        match self.id {
            GroupId::So2Dilation | GroupId::So2Rotation => push(x),
            GroupId::So3Dilation => push(&mut x[..2]),
            GroupId::So4Dilation | GroupId::SonDilation { .. } => push(&mut x[n - 2..]),
            _ => false,
        }
    }
}

impl GroupAction {
    /// Flow coordinates of `x` continued from `prev` along a path: among the
    /// chart representations of `x` (angle shifts by 2π and, for the
    /// hyperspherical charts, reflections through the polar axes) the one
    /// closest to `prev`.
    pub fn continue_flow_coords(&self, x: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        Ok(self.continue_flow_coords_oriented(x, prev)?.0)
    }

    /// As [`Self::continue_flow_coords`], also returning `∂τ_cont/∂τ_principal`,
    /// which is `±1` per coordinate. Fields `Π_i(x)` follow the principal
    /// chart, so a drift or noise written in continued coordinates is
    /// multiplied by these signs before it is applied in x-space.
    pub fn continue_flow_coords_oriented(&self, x: &[f64], prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fc = self.to_flow_coords(x)?;
        let base = fc.unwrap_near(prev);
        let ones = vec![1.0; self.dim_g];
        let polar: Vec<usize> = match self.id {
            GroupId::So3Dilation | GroupId::So4Dilation | GroupId::SonDilation { .. } => (1..self.dim_g - 1).collect(),
            _ => return Ok((base, ones)),
        };
        let last = self.dim_g - 1;
        let mut best = (base.clone(), ones);
        let mut best_d = dist2(&base, prev);
        for mask in 1u32..(1 << polar.len()) {
            let mut v = fc.values.clone();
            let mut sign = vec![1.0; self.dim_g];
            for (bit, &j) in polar.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    // x_{j+1:} -> -x_{j+1:} leaves x unchanged when p_j -> -p_j.
                    v[j] = -v[j];
                    sign[j] = -sign[j];
                    for k in j + 1..last {
                        v[k] = std::f64::consts::PI - v[k];
                        sign[k] = -sign[k];
                    }
                    v[last] += std::f64::consts::PI;
                }
            }
            let cand = FlowCoords { values: v, domains: fc.domains.clone() }.unwrap_near(prev);
            let d = dist2(&cand, prev);
            if d < best_d {
                best_d = d;
                best = (cand, sign);
            }
        }
        Ok(best)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
