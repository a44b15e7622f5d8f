//! Seeded toy distributions and CSV persistence.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::constants as c;
use crate::error::{Error, Result};
use crate::rng::{normal, seeded};

/// States (one per row) in Cartesian coordinates plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub x: Array2<f64>,
    pub group: Option<String>,
    pub time_index: Option<usize>,
    pub seed: Option<u64>,
}

impl SampleBatch {
    pub fn new(x: Array2<f64>) -> Self {
        SampleBatch { x, group: None, time_index: None, seed: None }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Self {
        let mut x = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                x[[i, j]] = *v;
            }
        }
        SampleBatch::new(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mog2d,
    Mog3d,
    Mog4d,
    Circles2d,
    Line2d,
    Torus3d,
    Moebius3d,
    Angular1d,
    Radial1d,
    BridgePair,
}

impl DatasetName {
    pub const ALL: [DatasetName; 10] = [
        DatasetName::Mog2d,
        DatasetName::Mog3d,
        DatasetName::Mog4d,
        DatasetName::Circles2d,
        DatasetName::Line2d,
        DatasetName::Torus3d,
        DatasetName::Moebius3d,
        DatasetName::Angular1d,
        DatasetName::Radial1d,
        DatasetName::BridgePair,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mog2d => "mog2d",
            DatasetName::Mog3d => "mog3d",
            DatasetName::Mog4d => "mog4d",
            DatasetName::Circles2d => "circles2d",
            DatasetName::Line2d => "line2d",
            DatasetName::Torus3d => "torus3d",
            DatasetName::Moebius3d => "moebius3d",
            DatasetName::Angular1d => "angular1d",
            DatasetName::Radial1d => "radial1d",
            DatasetName::BridgePair => "bridge_pair",
        }
    }

    /// Columns per row (bridge pairs store source then target).
    pub fn dim(&self) -> usize {
        match self {
            DatasetName::Mog3d | DatasetName::Torus3d | DatasetName::Moebius3d => 3,
            DatasetName::Mog4d | DatasetName::BridgePair => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown dataset '{s}'")))
    }
}

/// Shape parameters; fields a dataset does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    /// Mode centres, one per row of length `dim`.
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Mode standard deviation (mixtures) or isotropic jitter (manifolds).
    pub std: f64,
    /// Radii (circles, radial mixture) or (ring, tube) / (radius, half width).
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n: usize,
    pub seed: u64,
    pub params: DatasetParams,
}

fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

impl DatasetSpec {
    /// Spec with the documented default parameters.
    pub fn new(name: DatasetName, n: usize, seed: u64) -> Self {
        let p = |means: Vec<Vec<f64>>, std: f64, radii: Vec<f64>| {
            let k = means.len().max(radii.len()).max(1);
            DatasetParams { weights: uniform_weights(k), means, std, radii }
        };
        let params = match name {
            DatasetName::Mog2d => p(
                (0..c::MOG2D_MODES)
                    .map(|k| {
                        let a = TAU * k as f64 / c::MOG2D_MODES as f64;
                        vec![c::MOG2D_RADIUS * a.cos(), c::MOG2D_RADIUS * a.sin()]
                    })
                    .collect(),
                c::MOG2D_STD,
                vec![],
            ),
            DatasetName::Mog3d => {
                let s = c::MOG3D_RADIUS / 3f64.sqrt();
                let mut means = vec![];
                for a in [-s, s] {
                    for b in [-s, s] {
                        for d in [-s, s] {
                            means.push(vec![a, b, d]);
                        }
                    }
                }
                p(means, c::MOG3D_STD, vec![])
            }
            DatasetName::Mog4d => {
                let mut means = vec![];
                for k in 0..4 {
                    for s in [-1.0, 1.0] {
                        let mut m = vec![0.0; 4];
                        m[k] = s * c::MOG4D_RADIUS;
                        means.push(m);
                    }
                }
                p(means, c::MOG4D_STD, vec![])
            }
            DatasetName::Circles2d => p(vec![], c::CIRCLES_JITTER, c::CIRCLES_RADII.to_vec()),
            DatasetName::Line2d => p(vec![c::LINE_END.to_vec()], c::LINE_JITTER, vec![]),
            DatasetName::Torus3d => p(vec![], c::TORUS_JITTER, vec![c::TORUS_RING_RADIUS, c::TORUS_TUBE_RADIUS]),
            DatasetName::Moebius3d => {
                p(vec![], c::MOEBIUS_JITTER, vec![c::MOEBIUS_RADIUS, c::MOEBIUS_HALF_WIDTH])
            }
            DatasetName::Angular1d => p(
                (0..c::ANGULAR_MODES).map(|k| vec![TAU * k as f64 / c::ANGULAR_MODES as f64]).collect(),
                c::ANGULAR_STD,
                vec![c::ANGULAR_RADIUS, c::ANGULAR_RADIAL_JITTER],
            ),
            DatasetName::Radial1d => p(vec![], c::RADIAL_STD, c::RADIAL_RADII.to_vec()),
            DatasetName::BridgePair => {
                p(vec![], 0.0, vec![c::BRIDGE_RADIUS_RANGE.0, c::BRIDGE_RADIUS_RANGE.1])
            }
        };
        DatasetSpec { name, n, seed, params }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("{}: {m}", self.name)));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        let p = &self.params;
        if !(p.std >= 0.0 && p.std.is_finite()) {
            return bad("std must be finite and non-negative");
        }
        if !p.weights.is_empty() && ((p.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.weights.iter().any(|w| *w < 0.0)) {
            return bad("mixture weights must be non-negative and sum to 1");
        }
        let needs_means = matches!(
            self.name,
            DatasetName::Mog2d | DatasetName::Mog3d | DatasetName::Mog4d | DatasetName::Angular1d | DatasetName::Line2d
        );
        if needs_means && p.means.is_empty() {
            return bad("means must not be empty");
        }
        let mixtures = matches!(self.name, DatasetName::Mog2d | DatasetName::Mog3d | DatasetName::Mog4d | DatasetName::Angular1d);
        if mixtures && p.weights.len() != p.means.len() {
            return bad("one weight per mode required");
        }
        if matches!(self.name, DatasetName::Circles2d | DatasetName::Radial1d) && p.weights.len() != p.radii.len() {
            return bad("one weight per radius required");
        }
        let mean_dim = match self.name {
            DatasetName::Angular1d => 1,
            DatasetName::Line2d => 2,
            other => other.dim(),
        };
        if needs_means && p.means.iter().any(|m| m.len() != mean_dim) {
            return bad("mode dimension mismatch");
        }
        let radii_needed = match self.name {
            DatasetName::Torus3d | DatasetName::Moebius3d | DatasetName::Angular1d | DatasetName::BridgePair => 2,
            DatasetName::Circles2d | DatasetName::Radial1d => 1,
            _ => 0,
        };
        if p.radii.len() < radii_needed {
            return bad("missing radius parameters");
        }
        Ok(())
    }
}

fn pick(rng: &mut impl rand::Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Draw `spec.n` rows; deterministic in the seed.
pub fn generate(spec: &DatasetSpec) -> Result<SampleBatch> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let p = &spec.params;
    let dim = spec.name.dim();
    let mut x = Array2::zeros((spec.n, dim));
    for i in 0..spec.n {
        let row: Vec<f64> = match spec.name {
            DatasetName::Mog2d | DatasetName::Mog3d | DatasetName::Mog4d => {
                let m = &p.means[pick(&mut rng, &p.weights)];
                m.iter().map(|v| v + p.std * normal(&mut rng)).collect()
            }
            DatasetName::Circles2d => {
                let r = p.radii[pick(&mut rng, &p.weights)];
                let a = rng.random::<f64>() * TAU;
                vec![r * a.cos() + p.std * normal(&mut rng), r * a.sin() + p.std * normal(&mut rng)]
            }
            DatasetName::Line2d => {
                let s = 2.0 * rng.random::<f64>() - 1.0;
                let e = &p.means[0];
                vec![s * e[0] + p.std * normal(&mut rng), s * e[1] + p.std * normal(&mut rng)]
            }
            DatasetName::Torus3d => {
                let (u, v) = (rng.random::<f64>() * TAU, rng.random::<f64>() * TAU);
                let w = p.radii[0] + p.radii[1] * v.cos();
                vec![
                    w * u.cos() + p.std * normal(&mut rng),
                    w * u.sin() + p.std * normal(&mut rng),
                    p.radii[1] * v.sin() + p.std * normal(&mut rng),
                ]
            }
            DatasetName::Moebius3d => {
                let u = rng.random::<f64>() * TAU;
                let v = (2.0 * rng.random::<f64>() - 1.0) * p.radii[1];
                let w = p.radii[0] + v * (0.5 * u).cos();
                vec![
                    w * u.cos() + p.std * normal(&mut rng),
                    w * u.sin() + p.std * normal(&mut rng),
                    v * (0.5 * u).sin() + p.std * normal(&mut rng),
                ]
            }
            DatasetName::Angular1d => {
                let a = p.means[pick(&mut rng, &p.weights)][0] + p.std * normal(&mut rng);
                let r = p.radii[0] + p.radii[1] * normal(&mut rng);
                vec![r * a.cos(), r * a.sin()]
            }
            DatasetName::Radial1d => {
                let r = p.radii[pick(&mut rng, &p.weights)] + p.std * normal(&mut rng);
                let a = rng.random::<f64>() * TAU;
                vec![r * a.cos(), r * a.sin()]
            }
            DatasetName::BridgePair => {
                let r = p.radii[0] + (p.radii[1] - p.radii[0]) * rng.random::<f64>();
                let a = (2.0 * rng.random::<f64>() - 1.0) * PI;
                vec![r * a.cos(), r * a.sin(), r, 0.0]
            }
        };
        for (j, v) in row.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok(SampleBatch { x, group: None, time_index: None, seed: Some(spec.seed) })
}

/// Split a bridge-pair batch into `(source, target)`.
pub fn split_pair(batch: &SampleBatch) -> Result<(SampleBatch, SampleBatch)> {
    if batch.dim() != 4 {
        return Err(Error::SizeMismatch("bridge pairs have 4 columns".into()));
    }
    let src = batch.x.slice(ndarray::s![.., 0..2]).to_owned();
    let tgt = batch.x.slice(ndarray::s![.., 2..4]).to_owned();
    Ok((SampleBatch { x: src, ..batch.clone() }, SampleBatch { x: tgt, ..batch.clone() }))
}

/// Write `bytes` to a temporary sibling and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn csv_bytes(batch: &SampleBatch) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record((1..=batch.dim()).map(|k| format!("x{k}"))).map_err(fmt_err)?;
    for row in batch.x.rows() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(fmt_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn save_csv(batch: &SampleBatch, path: &Path) -> Result<()> {
    write_atomic(path, &csv_bytes(batch)?)
}

pub fn parse_csv(text: &[u8]) -> Result<SampleBatch> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let header = r.headers().map_err(|e| Error::Schema { line: 1, msg: e.to_string() })?.clone();
    let dim = header.len();
    for (k, h) in header.iter().enumerate() {
        if h.trim() != format!("x{}", k + 1) {
            return Err(Error::Schema { line: 1, msg: format!("expected column x{}, found '{h}'", k + 1) });
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Schema { line, msg: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows + 2);
        if rec.len() != dim {
            return Err(Error::Schema { line, msg: format!("expected {dim} fields, found {}", rec.len()) });
        }
        for f in rec.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Schema { line, msg: format!("not a number: '{f}'") })?;
            values.push(v);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok(SampleBatch::new(x))
}

pub fn load_csv(path: &Path) -> Result<SampleBatch> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(b: &SampleBatch) -> (Vec<f64>, Array2<f64>) {
        let n = b.len() as f64;
        let mean: Vec<f64> = (0..b.dim()).map(|j| b.x.column(j).sum() / n).collect();
        let mut cov = Array2::zeros((b.dim(), b.dim()));
        for row in b.x.rows() {
            for a in 0..b.dim() {
                for c in 0..b.dim() {
                    cov[[a, c]] += (row[a] - mean[a]) * (row[c] - mean[c]) / n;
                }
            }
        }
        (mean, cov)
    }

    /// Compare empirical first/second moments against closed forms within 5 standard errors.
    fn check(name: DatasetName, mean: &[f64], cov_diag: &[f64], fourth: &[f64]) {
        let n = 100_000;
        let b = generate(&DatasetSpec::new(name, n, 11)).unwrap();
        let (m, c) = moments(&b);
        for j in 0..b.dim() {
            let se_mean = (cov_diag[j] / n as f64).sqrt();
            assert!((m[j] - mean[j]).abs() < 5.0 * se_mean, "{name} mean[{j}] = {}", m[j]);
            let se_var = ((fourth[j] - cov_diag[j].powi(2)) / n as f64).sqrt();
            assert!((c[[j, j]] - cov_diag[j]).abs() < 5.0 * se_var, "{name} var[{j}] = {} vs {}", c[[j, j]], cov_diag[j]);
        }
    }

    #[test]
    fn moment_sanity() {
        let (r, s) = (c::MOG2D_RADIUS, c::MOG2D_STD);
        // E x⁴ for 8 equally spaced modes: E[(R cos a + s z)^4] = R⁴·3/8 + 6R²s²/2 + 3s⁴
        let v = r * r / 2.0 + s * s;
        let m4 = r.powi(4) * 3.0 / 8.0 + 3.0 * r * r * s * s + 3.0 * s.powi(4);
        check(DatasetName::Mog2d, &[0.0, 0.0], &[v, v], &[m4, m4]);

        let (r, s) = (c::MOG4D_RADIUS, c::MOG4D_STD);
        let v = r * r / 4.0 + s * s;
        let m4 = r.powi(4) / 4.0 + 6.0 * r * r * s * s / 4.0 + 3.0 * s.powi(4);
        check(DatasetName::Mog4d, &[0.0; 4], &[v; 4], &[m4; 4]);

        let j = c::CIRCLES_JITTER;
        let er2: f64 = c::CIRCLES_RADII.iter().map(|r| r * r).sum::<f64>() / 2.0;
        let er4: f64 = c::CIRCLES_RADII.iter().map(|r| r.powi(4)).sum::<f64>() / 2.0;
        let v = er2 / 2.0 + j * j;
        let m4 = er4 * 3.0 / 8.0 + 6.0 * (er2 / 2.0) * j * j + 3.0 * j.powi(4);
        check(DatasetName::Circles2d, &[0.0, 0.0], &[v, v], &[m4, m4]);

        let [ex, ey] = c::LINE_END;
        let j = c::LINE_JITTER;
        let var = |e: f64| e * e / 3.0 + j * j;
        let m4 = |e: f64| e.powi(4) / 5.0 + 6.0 * e * e / 3.0 * j * j + 3.0 * j.powi(4);
        check(DatasetName::Line2d, &[0.0, 0.0], &[var(ex), var(ey)], &[m4(ex), m4(ey)]);
    }

    #[test]
    fn torus_moments() {
        let (big, small, j) = (c::TORUS_RING_RADIUS, c::TORUS_TUBE_RADIUS, c::TORUS_JITTER);
        let vxy = 0.5 * (big * big + small * small / 2.0) + j * j;
        let vz = small * small / 2.0 + j * j;
        // generous fourth moments (upper bounds) keep the test a 5-SE check
        let bound = (big + small + 4.0 * j).powi(4);
        check(DatasetName::Torus3d, &[0.0; 3], &[vxy, vxy, vz], &[bound; 3]);
    }

    #[test]
    fn seed_determinism_and_single_row() {
        for name in DatasetName::ALL {
            let a = generate(&DatasetSpec::new(name, 1, 5)).unwrap();
            let b = generate(&DatasetSpec::new(name, 1, 5)).unwrap();
            assert_eq!(a.len(), 1);
            assert_eq!(a.x, b.x, "{name}");
            assert!(a.x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn mog2d_modes_on_circle() {
        let spec = DatasetSpec::new(DatasetName::Mog2d, 10, 0);
        assert_eq!(spec.params.means.len(), 8);
        for m in &spec.params.means {
            assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 3.0).abs() < 1e-12);
        }
        assert_eq!(spec.params.std, 0.3);
    }

    #[test]
    fn bridge_pairs_share_radii() {
        let b = generate(&DatasetSpec::new(DatasetName::BridgePair, 100, 3)).unwrap();
        let (s, t) = split_pair(&b).unwrap();
        for i in 0..100 {
            let rs = s.x[[i, 0]].hypot(s.x[[i, 1]]);
            assert!((rs - t.x[[i, 0]]).abs() < 1e-12 && t.x[[i, 1]] == 0.0);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = DatasetSpec::new(DatasetName::Mog2d, 0, 0);
        assert!(generate(&s).is_err());
        s.n = 5;
        s.params.weights[0] += 0.5;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut b = generate(&DatasetSpec::new(DatasetName::Torus3d, 50, 9)).unwrap();
        b.x[[0, 0]] = 1.0 / 3.0;
        b.x[[1, 1]] = -2.2250738585072014e-308;
        b.x[[2, 2]] = 1.7976931348623157e308;
        let back = parse_csv(&csv_bytes(&b).unwrap()).unwrap();
        assert_eq!(back.x.shape(), b.x.shape());
        for (a, c) in back.x.iter().zip(b.x.iter()) {
            assert_eq!(a.to_bits(), c.to_bits());
        }
    }

    #[test]
    fn empty_batch_is_header_only() {
        let b = SampleBatch::new(Array2::zeros((0, 3)));
        let bytes = csv_bytes(&b).unwrap();
        assert_eq!(String::from_utf8(bytes.clone()).unwrap(), "x1,x2,x3\n");
        assert_eq!(parse_csv(&bytes).unwrap().x.shape(), &[0, 3]);
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_csv(b"x1,x2\n1.0,2.0\n3.0,abc\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");
        let err = parse_csv(b"x1,y\n1.0,2.0\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
        let err = parse_csv(b"x1,x2\n1.0,2.0\n3.0\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");
    }
}
