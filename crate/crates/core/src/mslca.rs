//! Multiple-set linear canonical analysis: build the operator T from a
//! scatter matrix, classical and robust fits, and the spectral
//! decomposition into canonical coefficients and directions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{f_map, g_map, inv_sqrt_psd, BlockStructure, ScatterMatrix};
use crate::error::{Error, Result};
use crate::mcd::{exhaustive_mcd, fast_mcd, subset_size, McdFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Classical,
    Mcd,
}

/// Options for the randomized MCD search inside `robust_fit`.
#[derive(Debug, Clone)]
pub struct McdOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Subset size override; defaults to ceil(n * gamma).
    pub h: Option<usize>,
}

impl Default for McdOptions {
    fn default() -> Self {
        Self { restarts: 500, seed: 0, h: None }
    }
}

/// A fitted canonical analysis.
#[derive(Debug, Clone)]
pub struct MslcaFit {
    pub t: DMatrix<f64>,
    /// Canonical coefficients, sorted non-increasing.
    pub rho: DVector<f64>,
    /// Orthonormal eigenvectors of T as columns.
    pub beta: DMatrix<f64>,
    /// Canonical directions alpha^{(j)} = Phi^{-1/2} beta^{(j)} as columns.
    pub alpha: DMatrix<f64>,
    /// Phi = f(V), the block-diagonal part of the scatter used.
    pub phi: ScatterMatrix,
    pub scatter_used: ScatterMatrix,
    pub estimator: Estimator,
    pub gamma: Option<f64>,
}

/// JSON form of a fit: {estimator, gamma?, rho[], beta[][], alpha[][], dims[]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub estimator: Estimator,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub rho: Vec<f64>,
    /// Columns beta^{(j)}.
    pub beta: Vec<Vec<f64>>,
    /// Columns alpha^{(j)}.
    pub alpha: Vec<Vec<f64>>,
    pub dims: Vec<usize>,
}

impl MslcaFit {
    pub fn summary(&self) -> FitSummary {
        let cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.ncols()).map(|j| m.column(j).iter().cloned().collect()).collect()
        };
        FitSummary {
            estimator: self.estimator,
            gamma: self.gamma,
            rho: self.rho.iter().cloned().collect(),
            beta: cols(&self.beta),
            alpha: cols(&self.alpha),
            dims: self.scatter_used.structure().dims().to_vec(),
        }
    }
}

/// T = f(V)^{-1/2} g(V) f(V)^{-1/2}, symmetrized. Scale invariant in V.
pub fn build_t(v: &ScatterMatrix) -> Result<DMatrix<f64>> {
    let bs = v.structure();
    let phi = f_map(v.entries(), bs)?;
    let phi_is = inv_sqrt_psd(&phi)?;
    let t = &phi_is * g_map(v.entries(), bs)? * &phi_is;
    Ok((&t + t.transpose()) * 0.5)
}

/// Full symmetric eigendecomposition of T with eigenvalues sorted
/// non-increasing; each beta column has its largest-magnitude entry
/// positive; alpha = phi_inv_sqrt * beta.
pub fn spectral(
    t: &DMatrix<f64>,
    phi: &ScatterMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let q = t.nrows();
    let eig = ((t + t.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut rho = DVector::zeros(q);
    let mut beta = DMatrix::zeros(q, q);
    for (j, &src) in order.iter().enumerate() {
        rho[j] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        // sign convention: largest-magnitude entry positive
        let lead = col.iter().enumerate().fold((0usize, 0.0f64), |acc, (i, &v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if col[lead.0] < 0.0 {
            col = -col;
        }
        beta.set_column(j, &col);
    }
    let phi_is = inv_sqrt_psd(phi.entries())?;
    let alpha = &phi_is * &beta;
    Ok((rho, beta, alpha))
}

fn fit_from_scatter(
    scatter: ScatterMatrix,
    estimator: Estimator,
    gamma: Option<f64>,
) -> Result<MslcaFit> {
    let bs = scatter.structure().clone();
    let t = build_t(&scatter)?;
    let phi = ScatterMatrix::new(f_map(scatter.entries(), &bs)?, bs)?;
    let (rho, beta, alpha) = spectral(&t, &phi)?;
    Ok(MslcaFit { t, rho, beta, alpha, phi, scatter_used: scatter, estimator, gamma })
}

/// Empirical covariance with divisor n, centered at the sample mean.
pub fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let q = data.ncols();
    let mean = data.row_mean();
    let mut cov = DMatrix::zeros(q, q);
    for i in 0..n {
        let d = data.row(i) - &mean;
        cov += d.transpose() * &d;
    }
    cov / n as f64
}

/// Canonical analysis from the empirical covariance.
pub fn classical_fit(data: &DMatrix<f64>, bs: &BlockStructure) -> Result<MslcaFit> {
    if data.ncols() != bs.q() {
        return Err(Error::DimensionMismatch { expected: bs.q(), got: data.ncols() });
    }
    let scatter = ScatterMatrix::new(sample_covariance(data), bs.clone())?;
    fit_from_scatter(scatter, Estimator::Classical, None)
}

/// Canonical analysis from the raw MCD scatter. build_t is scale
/// invariant, so the sigma_gamma^2 correction does not change T.
pub fn robust_fit(
    data: &DMatrix<f64>,
    bs: &BlockStructure,
    gamma: f64,
    options: &McdOptions,
) -> Result<MslcaFit> {
    if data.ncols() != bs.q() {
        return Err(Error::DimensionMismatch { expected: bs.q(), got: data.ncols() });
    }
    let fit = robust_scatter(data, bs, gamma, options)?;
    fit_from_scatter(fit.raw_scatter.clone(), Estimator::Mcd, Some(gamma))
}

/// The MCD fit backing `robust_fit`; h = n falls back to the exhaustive
/// search (single subset).
pub fn robust_scatter(
    data: &DMatrix<f64>,
    bs: &BlockStructure,
    gamma: f64,
    options: &McdOptions,
) -> Result<McdFit> {
    let n = data.nrows();
    let h = options.h.unwrap_or_else(|| subset_size(n, gamma));
    if h == n {
        exhaustive_mcd(data, h, bs)
    } else {
        fast_mcd(data, h, options.restarts, options.seed, bs)
    }
}

/// Outcome of the random-direction dominance check of the first canonical
/// direction.
#[derive(Debug, Clone, Serialize)]
pub struct MaximizationReport {
    pub fit_objective: f64,
    pub best_random_objective: f64,
    pub trials: usize,
    pub dominated: bool,
}

/// Sample `trials` random directions in the empirical constraint set
/// (block variance sum normalized to 1) and check none beats alpha^{(1)}.
pub fn maximization_check(
    fit: &MslcaFit,
    data: &DMatrix<f64>,
    trials: usize,
    seed: u64,
) -> MaximizationReport {
    let v = sample_covariance(data);
    let bs = fit.scatter_used.structure();
    let phi = f_map(&v, bs).expect("dims match fit");
    let objective = |alpha: &DVector<f64>| -> f64 { (alpha.transpose() * &v * alpha)[(0, 0)] };
    let constraint = |alpha: &DVector<f64>| -> f64 { (alpha.transpose() * &phi * alpha)[(0, 0)] };
    let fit_alpha = fit.alpha.column(0).into_owned();
    let fit_objective = objective(&fit_alpha) / constraint(&fit_alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trials {
        let dir = DVector::from_fn(bs.q(), |_, _| rng.gen_range(-1.0..1.0));
        let c = constraint(&dir);
        if c <= 0.0 {
            continue;
        }
        best = best.max(objective(&dir) / c);
    }
    MaximizationReport {
        fit_objective,
        best_random_objective: best,
        trials,
        dominated: trials == 0 || best <= fit_objective + 1e-8,
    }
}
