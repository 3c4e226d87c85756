//! Minimum covariance determinant estimation: exhaustive search for small
//! n, randomized concentration-step search for realistic n, and the
//! consistency correction recovering V from sigma_gamma^2 V.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blocks::{BlockStructure, ScatterMatrix};
use crate::elliptical::RobustConstants;
use crate::error::{Error, Result};

/// Enumeration cap for `exhaustive_mcd`.
pub const SUBSET_CAP: u128 = 2_000_000;

/// Result of an MCD search over h-subsets.
#[derive(Debug, Clone)]
pub struct McdFit {
    pub location: DVector<f64>,
    pub raw_scatter: ScatterMatrix,
    /// Sorted row indices of the optimal subset.
    pub subset: Vec<usize>,
    /// log det of the raw scatter.
    pub objective: f64,
    pub h: usize,
    pub n: usize,
}

impl McdFit {
    /// raw_scatter / sigma_gamma^2, a consistent estimate of V.
    pub fn corrected_scatter(&self, c: &RobustConstants) -> ScatterMatrix {
        consistency_correct(self, c)
    }
}

/// Subset size h_n = ceil(n * gamma).
pub fn subset_size(n: usize, gamma: f64) -> usize {
    (n as f64 * gamma).ceil() as usize
}

/// Mean and (1/h)-normalized centered scatter of the given rows.
pub fn subset_stats(data: &DMatrix<f64>, subset: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n = data.nrows();
    let q = data.ncols();
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, k: n });
        }
    }
    let h = subset.len() as f64;
    let mut mean = DVector::zeros(q);
    for &i in subset {
        mean += data.row(i).transpose();
    }
    mean /= h;
    let mut scatter = DMatrix::zeros(q, q);
    for &i in subset {
        let d = data.row(i).transpose() - &mean;
        scatter += &d * d.transpose();
    }
    scatter /= h;
    Ok((mean, scatter))
}

/// log det of an SPD matrix via Cholesky; None when the factorization fails.
fn log_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(a.clone())?;
    let mut ld = 0.0;
    for i in 0..a.nrows() {
        let d = chol.l()[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        ld += d.ln();
    }
    Some(2.0 * ld)
}

/// One concentration step: under the stats of `subset`, return the h row
/// indices with smallest Mahalanobis distance (ties broken by row index).
pub fn c_step(data: &DMatrix<f64>, subset: &[usize], h: usize) -> Result<Vec<usize>> {
    let (mean, scatter) = subset_stats(data, subset)?;
    let chol = Cholesky::new(scatter).ok_or(Error::SingularScatter)?;
    let n = data.nrows();
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let d = data.row(i).transpose() - &mean;
            let y = chol.solve(&d);
            (d.dot(&y), i)
        })
        .collect();
    dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut pick: Vec<usize> = dist[..h].iter().map(|&(_, i)| i).collect();
    pick.sort_unstable();
    Ok(pick)
}

/// Iterate c_step from `start` to a fixed point; returns the fit of the
/// terminal subset, or None if the first factorization is singular.
fn concentrate(data: &DMatrix<f64>, start: &[usize], h: usize) -> Option<(Vec<usize>, f64)> {
    let mut current = c_step(data, start, h).ok()?;
    for _ in 0..200 {
        let next = c_step(data, &current, h).ok()?;
        if next == current {
            break;
        }
        current = next;
    }
    let (_, scatter) = subset_stats(data, &current).ok()?;
    let obj = log_det_spd(&scatter)?;
    Some((current, obj))
}

fn fit_from_subset(
    data: &DMatrix<f64>,
    subset: Vec<usize>,
    bs: &BlockStructure,
) -> Result<McdFit> {
    let (location, scatter) = subset_stats(data, &subset)?;
    let objective = log_det_spd(&scatter).ok_or(Error::SingularScatter)?;
    let raw_scatter = ScatterMatrix::new(scatter, bs.clone())?;
    Ok(McdFit {
        location,
        raw_scatter,
        h: subset.len(),
        n: data.nrows(),
        subset,
        objective,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > SUBSET_CAP.saturating_mul(1000) {
            return u128::MAX;
        }
    }
    acc
}

/// Enumerate all h-subsets in lexicographic order and return the one with
/// minimal determinant (first minimizer wins, so ties break lexicographically).
pub fn exhaustive_mcd(data: &DMatrix<f64>, h: usize, bs: &BlockStructure) -> Result<McdFit> {
    let n = data.nrows();
    let q = data.ncols();
    if h > n || h <= q {
        return Err(Error::InvalidArgument(format!(
            "need q < h <= n, got h={h}, n={n}, q={q}"
        )));
    }
    let count = binomial(n, h);
    if count > SUBSET_CAP {
        return Err(Error::TooManySubsets { count, cap: SUBSET_CAP });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subset: Vec<usize> = (0..h).collect();
    loop {
        let (_, scatter) = subset_stats(data, &subset)?;
        if let Some(obj) = log_det_spd(&scatter) {
            if best.as_ref().map_or(true, |(b, _)| obj < b - 1e-14) {
                best = Some((obj, subset.clone()));
            }
        }
        // next lexicographic combination of {0..n} choose h
        let mut i = h;
        loop {
            if i == 0 {
                match best {
                    Some((_, s)) => return fit_from_subset(data, s, bs),
                    None => return Err(Error::SingularAllSubsets),
                }
            }
            i -= 1;
            if subset[i] != i + n - h {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..h {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Randomized MCD: from `restarts` random (q+1)-element starts, run
/// concentration steps to a fixed point and keep the best objective.
/// Deterministic given the seed; restarts run in parallel.
pub fn fast_mcd(
    data: &DMatrix<f64>,
    h: usize,
    restarts: usize,
    seed: u64,
    bs: &BlockStructure,
) -> Result<McdFit> {
    let n = data.nrows();
    let q = data.ncols();
    if !(n > h && h > q) {
        return Err(Error::InvalidArgument(format!(
            "need q < h < n for randomized search, got h={h}, n={n}, q={q}"
        )));
    }
    let best = (0..restarts)
        .into_par_iter()
        .filter_map(|restart| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            // a restart may land on a degenerate start; retry a few times
            for _ in 0..10 {
                let start: Vec<usize> = sample_indices(&mut rng, n, q + 1).into_vec();
                if let Some((subset, obj)) = concentrate(data, &start, h) {
                    return Some((obj, restart, subset));
                }
            }
            None
        })
        // min by objective, tie-break by restart index: order-independent
        .reduce_with(|a, b| {
            if (b.0, b.1) < (a.0, a.1) {
                b
            } else {
                a
            }
        });
    match best {
        Some((_, _, subset)) => fit_from_subset(data, subset, bs),
        None => Err(Error::SingularScatter),
    }
}

/// raw_scatter / sigma_gamma^2, consistent for V under the elliptical model.
pub fn consistency_correct(fit: &McdFit, c: &RobustConstants) -> ScatterMatrix {
    fit.raw_scatter.scaled(1.0 / c.sigma2_gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptical::{compute_constants, EllipticalModel};
    use rand::Rng;

    fn bs2(p: usize) -> BlockStructure {
        BlockStructure::new(vec![p, p]).unwrap()
    }

    fn gaussian_data(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let bs = bs2(q / 2);
        let m = EllipticalModel::gaussian(ScatterMatrix::identity(bs)).unwrap();
        m.sample(n, seed).unwrap()
    }

    #[test]
    fn full_subset_is_sample_covariance() {
        let data = gaussian_data(30, 4, 1);
        let all: Vec<usize> = (0..30).collect();
        let (mean, scatter) = subset_stats(&data, &all).unwrap();
        let m = data.row_mean().transpose();
        assert!((mean - &m).norm() < 1e-12);
        let mut cov = DMatrix::zeros(4, 4);
        for i in 0..30 {
            let d = data.row(i).transpose() - &m;
            cov += &d * d.transpose();
        }
        cov /= 30.0;
        assert!((scatter - cov).norm() < 1e-12);
    }

    #[test]
    fn duplicated_row_gives_zero_scatter() {
        let mut data = DMatrix::zeros(5, 2);
        for i in 0..5 {
            data.row_mut(i).copy_from_slice(&[1.5, -2.0]);
        }
        let (_, scatter) = subset_stats(&data, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(scatter.amax(), 0.0);
    }

    #[test]
    fn two_point_subset_matches_direct_formula() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, -1.0, 0.0, 0.0]);
        let (_, scatter) = subset_stats(&data, &[0, 1]).unwrap();
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        let d = &a - &b;
        let expect = &d * d.transpose() / 4.0;
        assert!((scatter - expect).norm() < 1e-14);
    }

    #[test]
    fn empty_subset_rejected() {
        let data = gaussian_data(10, 4, 2);
        assert!(matches!(subset_stats(&data, &[]), Err(Error::EmptySubset)));
    }

    #[test]
    fn exhaustive_full_subset_case() {
        let data = gaussian_data(8, 4, 3);
        let fit = exhaustive_mcd(&data, 8, &bs2(2)).unwrap();
        assert_eq!(fit.subset, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn exhaustive_excludes_gross_outlier() {
        let mut data = gaussian_data(12, 4, 4);
        data.row_mut(5).copy_from_slice(&[50.0, -50.0, 50.0, -50.0]);
        let fit = exhaustive_mcd(&data, 11, &bs2(2)).unwrap();
        assert!(!fit.subset.contains(&5));
    }

    #[test]
    fn exhaustive_rejects_too_many_subsets() {
        let data = gaussian_data(80, 4, 5);
        assert!(matches!(
            exhaustive_mcd(&data, 40, &bs2(2)),
            Err(Error::TooManySubsets { .. })
        ));
    }

    #[test]
    fn c_step_fixed_point_and_monotone() {
        let data = gaussian_data(60, 4, 6);
        let h = 45;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let start: Vec<usize> = sample_indices(&mut rng, 60, 5).into_vec();
            let mut current = match c_step(&data, &start, h) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let mut prev_obj = f64::INFINITY;
            for _ in 0..100 {
                let (_, scatter) = subset_stats(&data, &current).unwrap();
                let obj = log_det_spd(&scatter).unwrap();
                assert!(obj <= prev_obj + 1e-12, "objective increased");
                prev_obj = obj;
                let next = c_step(&data, &current, h).unwrap();
                if next == current {
                    break;
                }
                current = next;
            }
            // fixed point: one more step is a no-op
            assert_eq!(c_step(&data, &current, h).unwrap(), current);
        }
    }

    #[test]
    fn c_step_with_h_equals_n_returns_everything() {
        let data = gaussian_data(15, 4, 7);
        let all: Vec<usize> = (0..15).collect();
        assert_eq!(c_step(&data, &all, 15).unwrap(), all);
    }

    #[test]
    fn fast_matches_exhaustive_objective() {
        let data = gaussian_data(20, 4, 8);
        let ex = exhaustive_mcd(&data, 15, &bs2(2)).unwrap();
        let fast = fast_mcd(&data, 15, 200, 11, &bs2(2)).unwrap();
        assert!(ex.objective <= fast.objective + 1e-12);
        assert!((ex.objective - fast.objective).abs() < 1e-10);
    }

    #[test]
    fn fast_mcd_seed_deterministic() {
        let data = gaussian_data(100, 4, 9);
        let a = fast_mcd(&data, 75, 50, 3, &bs2(2)).unwrap();
        let b = fast_mcd(&data, 75, 50, 3, &bs2(2)).unwrap();
        assert_eq!(a.subset, b.subset);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn exhaustive_permutation_invariant_objective() {
        let data = gaussian_data(14, 4, 10);
        let fit = exhaustive_mcd(&data, 11, &bs2(2)).unwrap();
        // reverse the row order
        let mut shuffled = DMatrix::zeros(14, 4);
        for i in 0..14 {
            shuffled.row_mut(i).copy_from(&data.row(13 - i));
        }
        let fit2 = exhaustive_mcd(&shuffled, 11, &bs2(2)).unwrap();
        assert!((fit.objective - fit2.objective).abs() < 1e-12);
        assert!((fit.raw_scatter.entries() - fit2.raw_scatter.entries()).amax() < 1e-12);
    }

    #[test]
    fn exhaustive_affine_equivariant() {
        let data = gaussian_data(14, 4, 12);
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.2, 0.0, 0.0, //
                0.0, 0.8, 0.1, 0.0, //
                0.3, 0.0, 1.2, 0.0, //
                0.0, 0.0, 0.0, 0.9,
            ],
        );
        let transformed = &data * a.transpose();
        let f1 = exhaustive_mcd(&data, 11, &bs2(2)).unwrap();
        let f2 = exhaustive_mcd(&transformed, 11, &bs2(2)).unwrap();
        assert_eq!(f1.subset, f2.subset);
        let expect = &a * f1.raw_scatter.entries() * a.transpose();
        assert!((f2.raw_scatter.entries() - expect).amax() < 1e-8);
    }

    #[test]
    fn consistency_correction_scales_by_sigma2() {
        let bs = bs2(2);
        let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
        let c = compute_constants(0.75, &model).unwrap();
        let data = gaussian_data(200, 4, 13);
        let fit = fast_mcd(&data, subset_size(200, 0.75), 100, 5, &bs).unwrap();
        let corrected = consistency_correct(&fit, &c);
        let expect = fit.raw_scatter.entries() / c.sigma2_gamma;
        assert!((corrected.entries() - expect).amax() < 1e-14);
        // gamma near 1: correction close to identity map
        let c999 = compute_constants(0.999, &model).unwrap();
        assert!((c999.sigma2_gamma - 1.0).abs() < 0.02);
    }

    #[test]
    fn corrected_scatter_near_truth_on_clean_data() {
        let bs = bs2(2);
        let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
        let c = compute_constants(0.75, &model).unwrap();
        let data = model.sample(2000, 21).unwrap();
        let fit = fast_mcd(&data, subset_size(2000, 0.75), 100, 17, &bs).unwrap();
        let corrected = consistency_correct(&fit, &c);
        let err = (corrected.entries() - DMatrix::identity(4, 4)).norm() / 2.0;
        assert!(err < 0.15, "relative error {err}");
    }

    #[test]
    fn robust_to_point_contamination() {
        let bs = bs2(2);
        let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
        let c = compute_constants(0.75, &model).unwrap();
        let mut data = model.sample(500, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..100 {
            let row = i * 5;
            for j in 0..4 {
                data[(row, j)] = 10.0 + rng.gen_range(-0.5..0.5);
            }
        }
        let fit = fast_mcd(&data, subset_size(500, 0.75), 100, 23, &bs).unwrap();
        let corrected = consistency_correct(&fit, &c);
        let robust_err = (corrected.entries() - DMatrix::identity(4, 4)).norm();
        let all: Vec<usize> = (0..500).collect();
        let (_, classical) = subset_stats(&data, &all).unwrap();
        let classical_err = (classical - DMatrix::identity(4, 4)).norm();
        assert!(robust_err < classical_err / 3.0);
    }
}
