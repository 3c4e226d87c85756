//! Influence functions of the canonical analysis: classical IFs of the
//! operator T, the coefficients rho_j and the directions alpha^{(j)};
//! their MCD-based robust counterparts; the second-order IF of the test
//! statistic; norm bounds; and the unboundedness witness.
//!
//! Every formula here assumes the scatter has identity diagonal blocks
//! (V_k = I); `IfContext::new` enforces that. Callers with raw data must
//! whiten each block first.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::blocks::{
    extract, f_map, g_map, inv_sqrt_psd, operator_norm, pi_block, BlockStructure, ScatterMatrix,
};
use crate::elliptical::{weight_w, RobustConstants};
use crate::error::{Error, Result};
use crate::mslca::{build_t, spectral, MslcaFit};

/// Frobenius tolerance for the identity-diagonal-block check.
pub const A2_TOL: f64 = 1e-8;
/// Minimal eigenvalue gap for direction IFs.
pub const GAP_TOL: f64 = 1e-8;

/// Population scatter, its canonical fit, and (optionally) the robust
/// model constants, frozen together for influence evaluation.
pub struct IfContext {
    v: ScatterMatrix,
    fit: MslcaFit,
    constants: Option<RobustConstants>,
    v_inv_sqrt: DMatrix<f64>,
}

impl IfContext {
    pub fn new(v: ScatterMatrix, constants: Option<RobustConstants>) -> Result<Self> {
        let bs = v.structure();
        for k in 0..bs.k() {
            let vk = v.block(k, k)?;
            let dev = (&vk - DMatrix::identity(bs.dim(k), bs.dim(k))).norm();
            if dev > A2_TOL {
                return Err(Error::AssumptionViolated(format!(
                    "diagonal block {k} deviates from identity by {dev:.3e}; whiten first"
                )));
            }
        }
        if let Some(c) = &constants {
            if c.q != bs.q() {
                return Err(Error::DimensionMismatch { expected: bs.q(), got: c.q });
            }
        }
        let t = build_t(&v)?;
        let phi = ScatterMatrix::new(f_map(v.entries(), bs)?, bs.clone())?;
        let (rho, beta, alpha) = spectral(&t, &phi)?;
        let v_inv_sqrt = inv_sqrt_psd(v.entries())?;
        let fit = MslcaFit {
            t,
            rho,
            beta,
            alpha,
            phi,
            scatter_used: v.clone(),
            estimator: crate::mslca::Estimator::Classical,
            gamma: constants.as_ref().map(|c| c.gamma),
        };
        Ok(Self { v, fit, constants, v_inv_sqrt })
    }

    pub fn v(&self) -> &ScatterMatrix {
        &self.v
    }

    pub fn structure(&self) -> &BlockStructure {
        self.v.structure()
    }

    pub fn fit(&self) -> &MslcaFit {
        &self.fit
    }

    pub fn constants(&self) -> Result<&RobustConstants> {
        self.constants.as_ref().ok_or(Error::MissingConstants)
    }

    /// ||V^{-1/2} x||.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        (&self.v_inv_sqrt * x).norm()
    }

    /// Closed-ellipsoid indicator 1_{E_gamma}(x).
    pub fn inside(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.mahalanobis(x) <= self.constants()?.r_gamma)
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.structure().q() {
            return Err(Error::DimensionMismatch { expected: self.structure().q(), got: x.len() });
        }
        Ok(())
    }
}

/// IF of the covariance functional: x x^T - V.
pub fn if_scatter(x: &DVector<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    ctx.check_x(x)?;
    Ok(x * x.transpose() - ctx.v.entries())
}

/// IF of the MCD scatter functional:
/// -1/(2 kappa0) 1_E(x) x x^T + w(||V^{-1/2}x||) V.
pub fn if_scatter_robust(x: &DVector<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    ctx.check_x(x)?;
    let c = ctx.constants()?;
    let d = ctx.mahalanobis(x);
    let mut out = ctx.v.entries() * weight_w(d, c);
    if d <= c.r_gamma {
        out += x * x.transpose() * (-1.0 / (2.0 * c.kappa0));
    }
    Ok(out)
}

/// Directional derivative of V |-> T at the context scatter (identity
/// diagonal blocks): dT = -1/2 f(dV) g(V) - 1/2 g(V) f(dV) + g(dV).
fn linearized_t(dv: &DMatrix<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    let bs = ctx.structure();
    let gv = g_map(ctx.v.entries(), bs)?;
    let fdv = f_map(dv, bs)?;
    Ok(g_map(dv, bs)? - (&fdv * &gv + &gv * &fdv) * 0.5)
}

/// IF of T under the classical covariance, assembled block by block:
/// block (k,l), k != l, equals
/// x_k x_l^T - 1/2 x_k x_k^T V_{kl} - 1/2 V_{kl} x_l x_l^T.
pub fn if_t(x: &DVector<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    ctx.check_x(x)?;
    let bs = ctx.structure();
    let mut out = DMatrix::zeros(bs.q(), bs.q());
    for k in 0..bs.k() {
        let xk = extract(k, x, bs)?;
        for l in 0..bs.k() {
            if l == k {
                continue;
            }
            let xl = extract(l, x, bs)?;
            let vkl = pi_block(ctx.v.entries(), k, l, bs)?;
            let block = &xk * xl.transpose()
                - (&xk * xk.transpose()) * &vkl * 0.5
                - &vkl * (&xl * xl.transpose()) * 0.5;
            out.view_mut((bs.offset(k), bs.offset(l)), (bs.dim(k), bs.dim(l)))
                .copy_from(&block);
        }
    }
    Ok(out)
}

/// Squared Frobenius norm of if_t(x) in closed form:
/// sum_{k != l} ( 1/2 ||V_{lk} x_k||^2 ||x_k||^2 - <x_k, V_{kl} x_l><x_k, x_k... >
/// evaluated directly from the blocks; used as an independent cross-check.
pub fn if_t_norm2_closed_form(x: &DVector<f64>, ctx: &IfContext) -> Result<f64> {
    ctx.check_x(x)?;
    let bs = ctx.structure();
    let mut total = 0.0;
    for k in 0..bs.k() {
        let xk = extract(k, x, bs)?;
        for l in 0..bs.k() {
            if l == k {
                continue;
            }
            let xl = extract(l, x, bs)?;
            let vkl = pi_block(ctx.v.entries(), k, l, bs)?;
            let block = &xk * xl.transpose()
                - (&xk * xk.transpose()) * &vkl * 0.5
                - &vkl * (&xl * xl.transpose()) * 0.5;
            total += block.norm_squared();
        }
    }
    Ok(total)
}

/// Witness of the unboundedness of the classical IF: a direction whose
/// rescaling makes ||if_t|| grow quadratically.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    pub x0: Vec<f64>,
    /// (t, ||if_t(t x0)||_F) pairs.
    pub norms: Vec<(f64, f64)>,
}

pub fn unbounded_witness(ctx: &IfContext) -> Result<WitnessReport> {
    let bs = ctx.structure();
    // pick the off-diagonal block with the largest norm
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..bs.k() {
        for l in 0..bs.k() {
            if l == k {
                continue;
            }
            let norm = pi_block(ctx.v.entries(), l, k, bs)?.norm();
            if best.map_or(true, |(b, _, _)| norm > b) {
                best = Some((norm, k, l));
            }
        }
    }
    let (norm, k0, l0) = best.expect("at least two blocks");
    let x0 = if norm > 0.0 {
        // leading right singular vector of V_{l0 k0}, embedded in block k0
        let vlk = pi_block(ctx.v.entries(), l0, k0, bs)?;
        let svd = vlk.svd(false, true);
        let a = svd.v_t.unwrap().row(0).transpose();
        crate::blocks::embed(k0, &a, bs)?
    } else {
        // uncorrelated blocks: any vector with all blocks nonzero works
        DVector::from_element(bs.q(), 1.0 / (bs.q() as f64).sqrt())
    };
    let mut norms = Vec::new();
    for &t in &[1.0, 10.0, 100.0, 1000.0] {
        norms.push((t, if_t(&(&x0 * t), ctx)?.norm()));
    }
    Ok(WitnessReport { x0: x0.iter().cloned().collect(), norms })
}

/// IF of the canonical coefficient rho_j:
/// sum_{k != l} <beta_k^{(j)}, x_k> <x_l - V_{lk} x_k, beta_l^{(j)}>.
pub fn if_rho(x: &DVector<f64>, ctx: &IfContext, j: usize) -> Result<f64> {
    ctx.check_x(x)?;
    let bs = ctx.structure();
    bs_index_check(j, bs.q())?;
    let beta_j = ctx.fit.beta.column(j).into_owned();
    let mut total = 0.0;
    for k in 0..bs.k() {
        let xk = extract(k, x, bs)?;
        let bk = extract(k, &beta_j, bs)?;
        for l in 0..bs.k() {
            if l == k {
                continue;
            }
            let xl = extract(l, x, bs)?;
            let bl = extract(l, &beta_j, bs)?;
            let vlk = pi_block(ctx.v.entries(), l, k, bs)?;
            total += bk.dot(&xk) * (&xl - &vlk * &xk).dot(&bl);
        }
    }
    Ok(total)
}

fn bs_index_check(j: usize, q: usize) -> Result<()> {
    if j >= q {
        Err(Error::IndexOutOfRange { index: j, k: q })
    } else {
        Ok(())
    }
}

/// IF of the canonical direction alpha^{(j)}: the eigenvector perturbation
/// expanded over the other eigenvectors plus the perturbation of the
/// block-diagonal whitening, -1/2 (f(x x^T) - I) beta^{(j)}.
pub fn if_alpha(x: &DVector<f64>, ctx: &IfContext, j: usize) -> Result<DVector<f64>> {
    ctx.check_x(x)?;
    let bs = ctx.structure();
    let q = bs.q();
    bs_index_check(j, q)?;
    let rho = &ctx.fit.rho;
    for m in 0..q {
        if m != j && (rho[j] - rho[m]).abs() <= GAP_TOL {
            return Err(Error::DegenerateSpectrum { j, m });
        }
    }
    let beta_j = ctx.fit.beta.column(j).into_owned();
    let mut out = DVector::zeros(q);
    for m in 0..q {
        if m == j {
            continue;
        }
        let beta_m = ctx.fit.beta.column(m).into_owned();
        let mut coef = 0.0;
        for k in 0..bs.k() {
            let xk = extract(k, x, bs)?;
            let bkm = extract(k, &beta_m, bs)?;
            let bkj = extract(k, &beta_j, bs)?;
            for l in 0..bs.k() {
                if l == k {
                    continue;
                }
                let xl = extract(l, x, bs)?;
                let blm = extract(l, &beta_m, bs)?;
                let blj = extract(l, &beta_j, bs)?;
                let vkl = pi_block(ctx.v.entries(), k, l, bs)?;
                coef += bkm.dot(&xk) * xl.dot(&blj)
                    - 0.5 * bkm.dot(&xk) * xk.dot(&(&vkl * &blj))
                    - 0.5 * xk.dot(&(&vkl * &blm)) * xk.dot(&bkj);
            }
        }
        out += &beta_m * (coef / (rho[j] - rho[m]));
    }
    let fxx = f_map(&(x * x.transpose()), bs)?;
    out += (DMatrix::identity(q, q) - fxx) * &beta_j * 0.5;
    Ok(out)
}

/// IF of T under the MCD functional: the scatter IF pushed through the
/// same linearization as if_t, rescaled by sigma_gamma^{-2}. Equals
/// -(sigma^{-2} / (2 kappa0)) 1_E(x) if_t(x) identically.
pub fn if_t_robust(x: &DVector<f64>, ctx: &IfContext) -> Result<DMatrix<f64>> {
    let c = ctx.constants()?;
    let dv = if_scatter_robust(x, ctx)?;
    Ok(linearized_t(&dv, ctx)? / c.sigma2_gamma)
}

/// IF of rho_j under the MCD functional.
pub fn if_rho_robust(x: &DVector<f64>, ctx: &IfContext, j: usize) -> Result<f64> {
    let c = ctx.constants()?;
    if !ctx.inside(x)? {
        // touch the classical path for argument validation only
        ctx.check_x(x)?;
        bs_index_check(j, ctx.structure().q())?;
        return Ok(0.0);
    }
    Ok(-1.0 / (c.sigma2_gamma * 2.0 * c.kappa0) * if_rho(x, ctx, j)?)
}

/// IF of alpha^{(j)} under the MCD functional.
pub fn if_alpha_robust(x: &DVector<f64>, ctx: &IfContext, j: usize) -> Result<DVector<f64>> {
    ctx.check_x(x)?;
    let c = ctx.constants()?;
    let sigma3 = c.sigma2_gamma.powf(1.5);
    let d = ctx.mahalanobis(x);
    let inside = d <= c.r_gamma;
    let beta_j = ctx.fit.beta.column(j).into_owned();
    let mut scale = -c.kappa4;
    let mut out = DVector::zeros(x.len());
    if inside {
        out += if_alpha(x, ctx, j)? * (-1.0 / (2.0 * c.kappa0));
        scale += 1.0 / (2.0 * c.kappa0) - c.kappa1 - c.kappa2 * d * d;
    } else {
        bs_index_check(j, ctx.structure().q())?;
    }
    out += &beta_j * scale;
    Ok(out / sigma3)
}

/// Second-order IF of the test functional S at a null-hypothesis scatter:
/// (sigma^{-4} / (2 kappa0^2)) 1_E(x) sum_{k > l} ||x_k||^2 ||x_l||^2.
pub fn if2_s(x: &DVector<f64>, ctx: &IfContext) -> Result<f64> {
    ctx.check_x(x)?;
    let c = ctx.constants()?;
    let bs = ctx.structure();
    let gv_norm = g_map(ctx.v.entries(), bs)?.norm();
    if gv_norm > 1e-8 {
        return Err(Error::NotNullHypothesis { gv_norm });
    }
    if !ctx.inside(x)? {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 1..bs.k() {
        let xk = extract(k, x, bs)?;
        for l in 0..k {
            let xl = extract(l, x, bs)?;
            sum += xk.norm_squared() * xl.norm_squared();
        }
    }
    Ok(sum / (c.sigma2_gamma * c.sigma2_gamma * 2.0 * c.kappa0 * c.kappa0))
}

/// The same second-order IF computed from if_t_robust:
/// 2 sum_{k > l} tr(pi_{kl}(IF) pi_{kl}(IF)^T). Must agree with `if2_s`.
pub fn if2_s_via_if_t(x: &DVector<f64>, ctx: &IfContext) -> Result<f64> {
    let bs = ctx.structure();
    let gv_norm = g_map(ctx.v.entries(), bs)?.norm();
    if gv_norm > 1e-8 {
        return Err(Error::NotNullHypothesis { gv_norm });
    }
    let ift = if_t_robust(x, ctx)?;
    let mut sum = 0.0;
    for k in 1..bs.k() {
        for l in 0..k {
            let b = pi_block(&ift, k, l, bs)?;
            sum += b.norm_squared();
        }
    }
    Ok(2.0 * sum)
}

/// Closed-form bound on ||if_t_robust||_infty:
/// (sigma^{-2} / (2 |kappa0|)) K(K-1)(||V||_inf + 1) ||V^{1/2}||_inf^2 r^2.
pub fn bound_if_t_robust(ctx: &IfContext) -> Result<f64> {
    let c = ctx.constants()?;
    let k = ctx.structure().k() as f64;
    let v_norm = operator_norm(ctx.v.entries());
    Ok(k * (k - 1.0) * (v_norm + 1.0) * v_norm * c.r_gamma * c.r_gamma
        / (c.sigma2_gamma * 2.0 * c.kappa0.abs()))
}

/// Closed-form bound on the second-order IF:
/// (sigma^{-4} / (4 kappa0^2)) (K-1)^2 ||V^{1/2}||_inf^4 r^4.
pub fn bound_if2_s(ctx: &IfContext) -> Result<f64> {
    let c = ctx.constants()?;
    let k = ctx.structure().k() as f64;
    let v_norm = operator_norm(ctx.v.entries());
    Ok((k - 1.0) * (k - 1.0) * v_norm * v_norm * c.r_gamma.powi(4)
        / (c.sigma2_gamma * c.sigma2_gamma * 4.0 * c.kappa0 * c.kappa0))
}

/// Per-observation influence diagnostics for a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub if_t_robust_norm: f64,
    pub if_rho: f64,
    pub inside: bool,
}

/// Evaluate ||if_t_robust||_F, if_rho (coefficient j) and the ellipsoid
/// flag for every row of `data`.
pub fn batch_diagnostics(
    data: &DMatrix<f64>,
    ctx: &IfContext,
    j: usize,
) -> Result<Vec<RowDiagnostic>> {
    let mut out = Vec::with_capacity(data.nrows());
    for i in 0..data.nrows() {
        let x = data.row(i).transpose();
        out.push(RowDiagnostic {
            row: i,
            if_t_robust_norm: if_t_robust(&x, ctx)?.norm(),
            if_rho: if_rho(&x, ctx, j)?,
            inside: ctx.inside(&x)?,
        });
    }
    Ok(out)
}
