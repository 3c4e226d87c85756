//! Monte Carlo validation harness: contaminated data generation, a
//! finite-difference oracle for the classical influence functions,
//! samplers for the asymptotic random operators, empirical-vs-theoretical
//! covariance comparison, and size/power experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::blocks::{extract, f_map, g_map, inv_sqrt_psd, operator_norm, pi_block};
use crate::blocks::{BlockStructure, ScatterMatrix};
use crate::elliptical::{weight_w, EllipticalModel};
use crate::error::{Error, Result};
use crate::influence::{if_t, IfContext};
use crate::mslca::{build_t, robust_scatter, spectral, McdOptions};
use crate::noncorr::{run_test, run_test_classical, REPORT_LEVELS};

/// Random scatter with identity diagonal blocks: V = I + G where G has
/// only off-diagonal blocks and operator norm `strength` < 1.
pub fn random_a2_scatter(dims: &[usize], seed: u64, strength: f64) -> ScatterMatrix {
    assert!(strength < 1.0, "strength must keep V positive definite");
    let bs = BlockStructure::new(dims.to_vec()).expect("valid dims");
    let q = bs.q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(q, q, |_, _| rng.gen_range(-1.0..1.0));
    let sym = (&raw + raw.transpose()) * 0.5;
    let mut g = g_map(&sym, &bs).expect("dims match");
    let norm = operator_norm(&g);
    if norm > 0.0 {
        g *= strength / norm;
    }
    let v = DMatrix::identity(q, q) + g;
    ScatterMatrix::new(v, bs).expect("symmetric by construction")
}

/// How contaminated rows replace clean ones.
#[derive(Debug, Clone)]
pub enum ContaminationMode {
    /// Every contaminated row becomes x0.
    PointMass { x0: DVector<f64> },
    /// Contaminated rows are fresh model draws scaled and shifted.
    ShiftedCluster { offset: DVector<f64>, cov_scale: f64 },
}

#[derive(Debug, Clone)]
pub struct ContaminationSpec {
    pub eps: f64,
    pub mode: ContaminationMode,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn new(eps: f64, mode: ContaminationMode, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "contamination fraction must lie in [0, 0.5), got {eps}"
            )));
        }
        Ok(Self { eps, mode, seed })
    }

    /// Replace the first floor(eps * n) rows of `data`. A zero fraction
    /// leaves the data bit-identical.
    pub fn apply(&self, data: &mut DMatrix<f64>, model: &EllipticalModel) -> Result<()> {
        let m = (self.eps * data.nrows() as f64).floor() as usize;
        if m == 0 {
            return Ok(());
        }
        match &self.mode {
            ContaminationMode::PointMass { x0 } => {
                if x0.len() != data.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: data.ncols(),
                        got: x0.len(),
                    });
                }
                for i in 0..m {
                    data.row_mut(i).copy_from(&x0.transpose());
                }
            }
            ContaminationMode::ShiftedCluster { offset, cov_scale } => {
                if offset.len() != data.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: data.ncols(),
                        got: offset.len(),
                    });
                }
                let cluster = model.sample(m, self.seed)?;
                for i in 0..m {
                    let row = cluster.row(i) * cov_scale.sqrt() + offset.transpose();
                    data.row_mut(i).copy_from(&row);
                }
            }
        }
        Ok(())
    }
}

/// Which classical functional the finite-difference oracle differentiates.
#[derive(Debug, Clone, Copy)]
pub enum FdTarget {
    T,
    Rho(usize),
    Alpha(usize),
}

#[derive(Debug, Clone)]
pub enum FdValue {
    Matrix(DMatrix<f64>),
    Scalar(f64),
    Vector(DVector<f64>),
}

/// Match the eigenvector of `t` with maximal overlap with column `j` of
/// `reference` and align its sign to the reference.
fn tracked_eigenpair(
    t: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    j: usize,
) -> Result<(f64, DVector<f64>)> {
    let eig = ((t + t.transpose()) * 0.5).symmetric_eigen();
    let target = reference.column(j);
    let mut best = (0usize, 0.0f64);
    for c in 0..t.ncols() {
        let overlap = eig.eigenvectors.column(c).dot(&target);
        if overlap.abs() > best.1.abs() {
            best = (c, overlap);
        }
    }
    if best.1 * best.1 < 0.5 {
        return Err(Error::DegenerateSpectrum { j, m: best.0 });
    }
    let mut vec = eig.eigenvectors.column(best.0).into_owned();
    if best.1 < 0.0 {
        vec = -vec;
    }
    Ok((eig.eigenvalues[best.0], vec))
}

fn functional_at_eps(
    x: &DVector<f64>,
    ctx: &IfContext,
    target: FdTarget,
    eps: f64,
) -> Result<FdValue> {
    // exact covariance of the mixture (1 - eps) P + eps delta_x for a
    // mean-zero P with scatter V
    let v_eps = ctx.v().entries() * (1.0 - eps) + x * x.transpose() * (eps * (1.0 - eps));
    let scatter = ScatterMatrix::new(v_eps.clone(), ctx.structure().clone())?;
    let t = build_t(&scatter)?;
    match target {
        FdTarget::T => Ok(FdValue::Matrix(t)),
        FdTarget::Rho(j) => {
            let (rho, _) = tracked_eigenpair(&t, &ctx.fit().beta, j)?;
            Ok(FdValue::Scalar(rho))
        }
        FdTarget::Alpha(j) => {
            let (_, beta) = tracked_eigenpair(&t, &ctx.fit().beta, j)?;
            let phi_is = inv_sqrt_psd(&f_map(&v_eps, ctx.structure())?)?;
            Ok(FdValue::Vector(phi_is * beta))
        }
    }
}

/// Central finite difference of the chosen functional along the exact
/// mixture-covariance path, step `eps_fd`.
pub fn fd_oracle(
    x: &DVector<f64>,
    ctx: &IfContext,
    target: FdTarget,
    eps_fd: f64,
) -> Result<FdValue> {
    if !(eps_fd > 0.0 && eps_fd <= 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in (0, 1e-3], got {eps_fd}"
        )));
    }
    let plus = functional_at_eps(x, ctx, target, eps_fd)?;
    let minus = functional_at_eps(x, ctx, target, -eps_fd)?;
    let scale = 1.0 / (2.0 * eps_fd);
    Ok(match (plus, minus) {
        (FdValue::Matrix(a), FdValue::Matrix(b)) => FdValue::Matrix((a - b) * scale),
        (FdValue::Scalar(a), FdValue::Scalar(b)) => FdValue::Scalar((a - b) * scale),
        (FdValue::Vector(a), FdValue::Vector(b)) => FdValue::Vector((a - b) * scale),
        _ => unreachable!("both paths use the same target"),
    })
}

/// The random operator whose covariance is the limit of sqrt(n)(T_n - T):
/// Z = sigma^{-2} kappa3 1_E(X) [if_T-shaped term in X]
///   + (sigma^{-2} - 1) w(||V^{-1/2}X||) g(V).
pub fn z_gamma_draw(x: &DVector<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    let c = ctx.constants()?;
    let d = ctx.mahalanobis(x);
    let gv = g_map(ctx.v().entries(), ctx.structure())?;
    let mut z = gv * ((1.0 / c.sigma2_gamma - 1.0) * weight_w(d, c));
    if d <= c.r_gamma {
        z += if_t(x, ctx)? * (c.kappa3 / c.sigma2_gamma);
    }
    Ok(z)
}

/// The scalar component Y_{m,r} of the limiting coefficient process.
pub fn y_mr(x: &DVector<f64>, ctx: &IfContext, m: usize, r: usize) -> Result<f64> {
    let c = ctx.constants()?;
    let bs = ctx.structure();
    let beta_m = ctx.fit().beta.column(m).into_owned();
    let beta_r = ctx.fit().beta.column(r).into_owned();
    let d = ctx.mahalanobis(x);
    let inside = d <= c.r_gamma;
    let s2inv = 1.0 / c.sigma2_gamma;
    let w_centered = weight_w(d, c) - (c.kappa1 * c.gamma + c.kappa2 * c.mu + c.kappa4);
    let mut total = 0.0;
    for k in 0..bs.k() {
        let xk = extract(k, x, bs)?;
        let bkm = extract(k, &beta_m, bs)?;
        let bkr = extract(k, &beta_r, bs)?;
        for l in 0..bs.k() {
            if l == k {
                continue;
            }
            let xl = extract(l, x, bs)?;
            let blm = extract(l, &beta_m, bs)?;
            let blr = extract(l, &beta_r, bs)?;
            let vlk = pi_block(ctx.v().entries(), l, k, bs)?;
            let vkl = pi_block(ctx.v().entries(), k, l, bs)?;
            if inside {
                total += s2inv
                    * c.kappa3
                    * (-0.5 * (blm.dot(&(&vlk * &xk)) * bkr.dot(&xk)
                        + blr.dot(&(&vlk * &xk)) * bkm.dot(&xk))
                        + blm.dot(&xl) * bkr.dot(&xk));
            }
            total -= (s2inv - 1.0) * w_centered * bkr.dot(&(&vkl * &blm));
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of the limiting covariance of the canonical
/// coefficients: entry (i, j) is E(Y_{i,i} Y_{j,j}) over model draws,
/// in the eigenbasis of T.
pub fn sigma_theory(
    ctx: &IfContext,
    model: &EllipticalModel,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let q = ctx.structure().q();
    let data = model.sample(draws, seed)?;
    let mut acc = DMatrix::zeros(q, q);
    let mut mean = DVector::zeros(q);
    for i in 0..draws {
        let x = data.row(i).transpose();
        let a = DVector::from_fn(q, |j, _| y_mr(&x, ctx, j, j).expect("dims fixed"));
        acc += &a * a.transpose();
        mean += &a;
    }
    mean /= draws as f64;
    Ok(acc / draws as f64 - &mean * mean.transpose())
}

/// Comparison of the finite-sample covariance of sqrt(n) vec(T_n - T)
/// against the Monte Carlo covariance of vec(Z_gamma).
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub n: usize,
    pub replicates: usize,
    /// max |emp - theo| / |theo| over the largest-magnitude theoretical entries
    pub max_rel_dev_top_entries: f64,
    pub rho1_var_empirical: f64,
    pub rho1_var_theory: f64,
}

/// Run `replicates` robust fits of samples of size n from the model and
/// compare covariances entrywise; also compares the variance of the
/// leading coefficient with the theoretical sigma_11.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimator_covariance(
    model: &EllipticalModel,
    ctx: &IfContext,
    gamma: f64,
    n: usize,
    replicates: usize,
    restarts: usize,
    seed: u64,
    top_entries: usize,
) -> Result<CovarianceReport> {
    let bs = ctx.structure().clone();
    let q = bs.q();
    let t_pop = build_t(ctx.v())?;
    let phi = ScatterMatrix::identity(bs.clone());
    let (rho_pop, _, _) = spectral(&t_pop, &phi)?;

    let draws: Vec<(DVector<f64>, f64)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let data = model.sample(n, rep_seed)?;
            let opts = McdOptions { restarts, seed: rep_seed ^ 0x5bd1, h: None };
            let fit = robust_scatter(&data, &bs, gamma, &opts)?;
            let t_n = build_t(&fit.raw_scatter)?;
            let diff = (&t_n - &t_pop) * (n as f64).sqrt();
            let vec_diff = DVector::from_fn(q * q, |i, _| diff[(i / q, i % q)]);
            let (rho1, _) = tracked_eigenpair(&t_n, &ctx.fit().beta, 0)?;
            Ok((vec_diff, (n as f64).sqrt() * (rho1 - rho_pop[0])))
        })
        .collect::<Result<Vec<_>>>()?;

    let emp_cov = covariance_of(&draws.iter().map(|d| d.0.clone()).collect::<Vec<_>>());
    let rho1_var_empirical = variance_of(&draws.iter().map(|d| d.1).collect::<Vec<_>>());

    // theoretical side by Monte Carlo over fresh model draws
    let z_draws = 200_000;
    let data = model.sample(z_draws, seed ^ 0xabcd_ef01)?;
    let zs: Vec<DVector<f64>> = (0..z_draws)
        .into_par_iter()
        .map(|i| {
            let x = data.row(i).transpose();
            let z = z_gamma_draw(&x, ctx)?;
            Ok(DVector::from_fn(q * q, |k, _| z[(k / q, k % q)]))
        })
        .collect::<Result<Vec<_>>>()?;
    let theo_cov = covariance_of(&zs);

    // rank theoretical entries by magnitude, compare the strongest ones
    let mut entries: Vec<(f64, usize, usize)> = (0..q * q)
        .flat_map(|i| (0..q * q).map(move |j| (i, j)))
        .map(|(i, j)| (theo_cov[(i, j)].abs(), i, j))
        .collect();
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut max_rel = 0.0f64;
    for &(mag, i, j) in entries.iter().take(top_entries) {
        if mag == 0.0 {
            continue;
        }
        max_rel = max_rel.max((emp_cov[(i, j)] - theo_cov[(i, j)]).abs() / mag);
    }

    let sigma = sigma_theory(ctx, model, 200_000, seed ^ 0x1357_9bdf)?;
    Ok(CovarianceReport {
        n,
        replicates,
        max_rel_dev_top_entries: max_rel,
        rho1_var_empirical,
        rho1_var_theory: sigma[(0, 0)],
    })
}

fn covariance_of(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov / n as f64
}

fn variance_of(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n
}

/// Rejection rates of the robust and classical tests across replicates.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub replicates: usize,
    pub n: usize,
    pub gamma: f64,
    pub robust_rejection: BTreeMap<String, f64>,
    pub classical_rejection: BTreeMap<String, f64>,
    pub mean_robust_statistic: f64,
    pub elapsed_secs: f64,
}

/// Run the non-correlation test on `replicates` samples from the model,
/// optionally contaminated, and tabulate rejection rates per level for
/// both the robust and the classical statistic.
#[allow(clippy::too_many_arguments)]
pub fn size_power(
    model: &EllipticalModel,
    bs: &BlockStructure,
    gamma: f64,
    n: usize,
    replicates: usize,
    contamination: Option<&ContaminationSpec>,
    restarts: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let start = std::time::Instant::now();
    let outcomes: Vec<(Vec<bool>, Vec<bool>, f64)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut data = model.sample(n, rep_seed)?;
            if let Some(spec) = contamination {
                let mut local = spec.clone();
                local.seed = spec.seed ^ rep_seed;
                local.apply(&mut data, model)?;
            }
            let opts = McdOptions { restarts, seed: rep_seed ^ 0x2468, h: None };
            let robust = run_test(&data, bs, gamma, &opts, None)?;
            let classical = run_test_classical(&data, bs)?;
            Ok((
                REPORT_LEVELS.iter().map(|&l| robust.reject(l)).collect(),
                REPORT_LEVELS.iter().map(|&l| classical.reject(l)).collect(),
                robust.statistic,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let rate = |pick: &dyn Fn(&(Vec<bool>, Vec<bool>, f64)) -> &Vec<bool>| -> BTreeMap<String, f64> {
        REPORT_LEVELS
            .iter()
            .enumerate()
            .map(|(idx, &l)| {
                let count = outcomes.iter().filter(|o| pick(o)[idx]).count();
                (format!("{l:.2}"), count as f64 / replicates as f64)
            })
            .collect()
    };
    Ok(ExperimentReport {
        replicates,
        n,
        gamma,
        robust_rejection: rate(&|o| &o.0),
        classical_rejection: rate(&|o| &o.1),
        mean_robust_statistic: outcomes.iter().map(|o| o.2).sum::<f64>() / replicates as f64,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
