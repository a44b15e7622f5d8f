//! Wasserstein-2 distances between sample batches.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::constants::{EXACT_W2_MAX, SLICED_PROJECTIONS};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{normal_vec, seeded, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    ExactAssignment,
    Sliced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    pub raw_w2: f64,
    /// `raw_w2` divided by the prior-to-target distance.
    pub normalized_w2: f64,
    pub n_samples: usize,
    pub method: W2Method,
}

fn check_shapes(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::SizeMismatch(format!(
            "batches are {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Minimum-cost perfect assignment for a square cost matrix, by shortest
/// augmenting paths with dual potentials. Returns `assign[row] = col`.
pub fn solve_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = cost.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta || j1 == 0 {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            // Non-finite reductions still advance to an unused column, so the loop terminates.
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((n, n), rows.concat()).expect("square cost matrix")
}

/// Exact W2: square root of the optimal-assignment mean squared distance.
pub fn w2_exact(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.nrows();
    if n > EXACT_W2_MAX {
        return Err(Error::TooLarge(format!("exact W2 is limited to {EXACT_W2_MAX} samples, got {n}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let cost = sq_dist(a, b);
    if cost.iter().any(|c| !c.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let assign = solve_assignment(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

fn w2_1d_sq(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Random orthonormal frames (Gram–Schmidt on Gaussian draws) covering at
/// least `count` directions.
fn orthonormal_directions(d: usize, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count.div_ceil(d) * d);
    while dirs.len() < count {
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d);
        while frame.len() < d {
            let mut u = normal_vec(rng, d);
            for e in &frame {
                let c: f64 = u.iter().zip(e).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
            }
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                frame.push(u.iter().map(|v| v / norm).collect());
            }
        }
        dirs.extend(frame);
    }
    dirs
}

/// Sliced W2 scaled by `√d`: `sqrt(d · mean_u W2²(⟨u,a⟩, ⟨u,b⟩))` over random
/// orthonormal frames, with `n_projections` rounded up to whole frames. The
/// scaling makes it agree with exact W2 for translations and isotropic
/// Gaussians; in one dimension it is the exact sorted formula.
pub fn w2_sliced(a: ArrayView2<f64>, b: ArrayView2<f64>, n_projections: usize, rng: &mut Rng) -> Result<f64> {
    check_shapes(a, b)?;
    if n_projections == 0 {
        return Err(Error::InvalidParams("sliced W2 needs at least one projection".into()));
    }
    let (n, d) = (a.nrows(), a.ncols());
    if n == 0 {
        return Ok(0.0);
    }
    let dirs = orthonormal_directions(d, n_projections, rng);
    let n_projections = dirs.len();
    let per = par::map_range(n_projections, |p| {
        let u = ndarray::ArrayView1::from(&dirs[p][..]);
        w2_1d_sq(a.dot(&u).to_vec(), b.dot(&u).to_vec())
    });
    Ok((d as f64 * per.iter().sum::<f64>() / n_projections as f64).sqrt())
}

/// Exact W2 when `n ≤ EXACT_W2_MAX`, sliced with the default projection count otherwise.
pub fn w2_auto(a: ArrayView2<f64>, b: ArrayView2<f64>, seed: u64) -> Result<(f64, W2Method)> {
    if a.nrows() <= EXACT_W2_MAX {
        Ok((w2_exact(a, b)?, W2Method::ExactAssignment))
    } else {
        Ok((w2_sliced(a, b, SLICED_PROJECTIONS, &mut seeded(seed))?, W2Method::Sliced))
    }
}

/// W2 of `samples` against `target`, normalized by W2 of `prior` against `target`.
/// Batches are truncated to their common length.
pub fn normalized_w2(samples: ArrayView2<f64>, target: ArrayView2<f64>, prior: ArrayView2<f64>, seed: u64) -> Result<W2Result> {
    let n = samples.nrows().min(target.nrows()).min(prior.nrows());
    if n == 0 {
        return Err(Error::InvalidParams("normalized W2 needs non-empty batches".into()));
    }
    let cut = |m: ArrayView2<'_, f64>| m.slice_axis(Axis(0), (0..n).into()).to_owned();
    let (s, t, p) = (cut(samples), cut(target), cut(prior));
    let (raw, method) = w2_auto(s.view(), t.view(), seed)?;
    let (base, _) = w2_auto(p.view(), t.view(), seed)?;
    if base <= 0.0 {
        return Err(Error::InvalidParams("prior coincides with the target; normalization undefined".into()));
    }
    Ok(W2Result { raw_w2: raw, normalized_w2: raw / base, n_samples: n, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, mean: &[f64], std: f64, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((n, d), |(_, k)| mean[k] + std * crate::rng::normal(&mut rng))
    }

    fn brute_force(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = vec![];
            for p in perms(n - 1) {
                for pos in 0..n {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = a.nrows();
        perms(n)
            .into_iter()
            .map(|p| {
                (0..n).map(|i| a.row(i).iter().zip(b.row(p[i])).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    #[test]
    fn exact_examples() {
        let a = gaussian(20, 2, &[0.0, 0.0], 1.0, 1);
        assert_abs_diff_eq!(w2_exact(a.view(), a.view()).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w2_exact(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view()).unwrap(), 5.0, epsilon = 1e-12);
        let a = array![[0.0, 0.0], [1.0, 0.0]];
        let b = array![[1.0, 0.0], [0.0, 0.0]];
        assert_abs_diff_eq!(w2_exact(a.view(), b.view()).unwrap(), 0.0, epsilon = 1e-12);
        assert!(matches!(w2_exact(a.view(), array![[1.0, 0.0]].view()), Err(Error::SizeMismatch(_))));
        let big = Array2::zeros((EXACT_W2_MAX + 1, 1));
        assert!(matches!(w2_exact(big.view(), big.view()), Err(Error::TooLarge(_))));
    }

    #[test]
    fn exact_matches_brute_force() {
        for seed in 0..30 {
            let n = 1 + (seed as usize % 7);
            let a = gaussian(n, 3, &[0.0; 3], 1.0, seed);
            let b = gaussian(n, 3, &[0.5, 0.0, -0.2], 1.3, seed + 100);
            assert_abs_diff_eq!(w2_exact(a.view(), b.view()).unwrap(), brute_force(&a, &b), epsilon = 1e-10);
        }
    }

    #[test]
    fn overflowing_costs_terminate() {
        let mut a = gaussian(30, 2, &[0.0, 0.0], 1.0, 7);
        let b = gaussian(30, 2, &[0.0, 0.0], 1.0, 8);
        a[[3, 0]] = 1e200;
        assert_eq!(w2_exact(a.view(), b.view()).unwrap(), f64::INFINITY);
        let cost = Array2::from_shape_fn((6, 6), |(i, j)| if i == j { f64::INFINITY } else { 1e300 * (i + j) as f64 });
        let assign = solve_assignment(&cost);
        let mut cols = assign.clone();
        cols.sort();
        assert_eq!(cols, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn exact_is_symmetric_and_satisfies_triangle_inequality() {
        for seed in 0..10 {
            let a = gaussian(40, 2, &[0.0, 0.0], 1.0, seed);
            let b = gaussian(40, 2, &[1.0, 0.5], 0.7, seed + 50);
            let c = gaussian(40, 2, &[-0.5, 2.0], 1.4, seed + 90);
            let ab = w2_exact(a.view(), b.view()).unwrap();
            assert_abs_diff_eq!(ab, w2_exact(b.view(), a.view()).unwrap(), epsilon = 1e-12);
            let bc = w2_exact(b.view(), c.view()).unwrap();
            let ac = w2_exact(a.view(), c.view()).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn sliced_examples() {
        let a = gaussian(100, 3, &[0.0; 3], 1.0, 2);
        assert_abs_diff_eq!(w2_sliced(a.view(), a.view(), 16, &mut seeded(0)).unwrap(), 0.0, epsilon = 1e-12);
        let x = gaussian(300, 1, &[0.0], 1.0, 3);
        let y = gaussian(300, 1, &[0.4], 2.0, 4);
        let exact = w2_exact(x.view(), y.view()).unwrap();
        for p in [1, 7] {
            assert_abs_diff_eq!(w2_sliced(x.view(), y.view(), p, &mut seeded(5)).unwrap(), exact, epsilon = 1e-12);
        }
        assert!(w2_sliced(x.view(), y.view(), 0, &mut seeded(5)).is_err());
    }

    #[test]
    fn sliced_tracks_exact_on_gaussian_batches() {
        let a = gaussian(512, 3, &[0.0; 3], 1.0, 6);
        // The empirical exact W2 carries a positive finite-sample bias, so the
        // separation has to dominate it for a 5% comparison.
        let b = gaussian(512, 3, &[4.0, 2.0, 0.0], 1.5, 7);
        let exact = w2_exact(a.view(), b.view()).unwrap();
        let sliced = w2_sliced(a.view(), b.view(), SLICED_PROJECTIONS, &mut seeded(8)).unwrap();
        assert!((sliced - exact).abs() <= 0.05 * exact, "sliced {sliced} exact {exact}");
    }

    #[test]
    fn sliced_offset_scaling() {
        let d = 4;
        let delta = 3.0;
        let mut mean = vec![0.0; d];
        mean[0] = delta;
        let a = gaussian(2048, d, &vec![0.0; d], 1.0, 9);
        let b = gaussian(2048, d, &mean, 1.0, 10);
        let exact = w2_exact(a.slice(ndarray::s![..1024, ..]), b.slice(ndarray::s![..1024, ..])).unwrap();
        let sliced = w2_sliced(a.view(), b.view(), SLICED_PROJECTIONS, &mut seeded(11)).unwrap();
        assert!((sliced - exact).abs() <= 0.1 * exact, "sliced {sliced} exact {exact}");
        // Each projection alone sees about Δ/√d of the offset.
        let unscaled = sliced / (d as f64).sqrt();
        assert!((unscaled - delta / (d as f64).sqrt()).abs() < 0.1 * delta / (d as f64).sqrt());
    }

    #[test]
    fn normalized_prior_is_one() {
        let t = gaussian(300, 2, &[3.0, 0.0], 0.3, 12);
        let p = gaussian(300, 2, &[0.0, 0.0], 1.0, 13);
        let r = normalized_w2(p.view(), t.view(), p.view(), 0).unwrap();
        assert_abs_diff_eq!(r.normalized_w2, 1.0, epsilon = 1e-12);
        let p2 = gaussian(300, 2, &[0.0, 0.0], 1.0, 14);
        let r2 = normalized_w2(p2.view(), t.view(), p.view(), 0).unwrap();
        assert!((r2.normalized_w2 - 1.0).abs() < 0.1);
        assert_eq!(r2.method, W2Method::ExactAssignment);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sliced_is_symmetric(seed in 0u64..1000) {
            let a = gaussian(50, 3, &[0.0; 3], 1.0, seed);
            let b = gaussian(50, 3, &[0.3, 0.0, 1.0], 0.5, seed + 1);
            let ab = w2_sliced(a.view(), b.view(), 32, &mut seeded(seed)).unwrap();
            let ba = w2_sliced(b.view(), a.view(), 32, &mut seeded(seed)).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
        }
    }
}
