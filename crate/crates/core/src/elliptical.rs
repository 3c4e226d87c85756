//! Elliptical model machinery: radial density generator h, truncation
//! radius r(gamma), consistency factor sigma_gamma^2, the constants
//! nu0..nu2 and kappa0..kappa4, the weight functions w and v, truncated
//! moments, and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::{inv_sqrt_psd, sqrt_psd, ScatterMatrix};
use crate::error::{Error, Result};
use crate::math::integrate;
use crate::math::ln_gamma;

/// Quadrature absolute tolerance for all radial integrals.
const QUAD_TOL: f64 = 1e-12;

/// Tag for the radial generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Custom,
}

type Generator = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Elliptical distribution with mean zero: density
/// f(x) = det(V)^{-1/2} h(x^T V^{-1} x).
pub struct EllipticalModel {
    q: usize,
    family: Family,
    scatter: ScatterMatrix,
    generator: Generator,
    generator_derivative: Generator,
    v_sqrt: DMatrix<f64>,
    v_inv_sqrt: DMatrix<f64>,
}

impl EllipticalModel {
    /// Gaussian generator h(u) = (2 pi)^{-q/2} exp(-u/2).
    pub fn gaussian(scatter: ScatterMatrix) -> Result<Self> {
        let q = scatter.structure().q();
        let norm = (2.0 * std::f64::consts::PI).powf(-(q as f64) / 2.0);
        let h: Generator = Box::new(move |u| norm * (-u / 2.0).exp());
        let hp: Generator = Box::new(move |u| -0.5 * norm * (-u / 2.0).exp());
        Self::build(scatter, h, hp, Family::Gaussian)
    }

    /// Custom generator; `h_prime` must be the analytic derivative of `h`.
    pub fn custom(scatter: ScatterMatrix, h: Generator, h_prime: Generator) -> Result<Self> {
        let model = Self::build(scatter, h, h_prime, Family::Custom)?;
        // density must integrate to 1 and h' must be negative
        let total = model.radial_mass(model.mass_horizon()?)?;
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "generator density integrates to {total}, expected 1"
            )));
        }
        Ok(model)
    }

    fn build(scatter: ScatterMatrix, h: Generator, hp: Generator, family: Family) -> Result<Self> {
        let q = scatter.structure().q();
        let v_sqrt = sqrt_psd(scatter.entries())?;
        let v_inv_sqrt = inv_sqrt_psd(scatter.entries())?;
        Ok(Self {
            q,
            family,
            scatter,
            generator: h,
            generator_derivative: hp,
            v_sqrt,
            v_inv_sqrt,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn scatter(&self) -> &ScatterMatrix {
        &self.scatter
    }

    pub fn h(&self, u: f64) -> f64 {
        (self.generator)(u)
    }

    pub fn h_prime(&self, u: f64) -> f64 {
        (self.generator_derivative)(u)
    }

    /// Surface measure of the unit sphere in dimension q: 2 pi^{q/2} / Gamma(q/2).
    fn sphere_area(&self) -> f64 {
        let q = self.q as f64;
        2.0 * (q / 2.0 * std::f64::consts::PI.ln() - ln_gamma(q / 2.0)).exp()
    }

    /// P(||V^{-1/2}X|| <= r) = sphere_area * int_0^r t^{q-1} h(t^2) dt.
    pub fn radial_mass(&self, r: f64) -> Result<f64> {
        let q = self.q as f64;
        let s = self.sphere_area();
        let h = &self.generator;
        Ok(s * integrate(|t| t.powf(q - 1.0) * h(t * t), 0.0, r, QUAD_TOL)?)
    }

    /// Radius beyond which the remaining radial mass is negligible.
    fn mass_horizon(&self) -> Result<f64> {
        let mut r = (self.q as f64).sqrt().max(1.0);
        let mut prev = self.radial_mass(r)?;
        for _ in 0..60 {
            r *= 2.0;
            let m = self.radial_mass(r)?;
            if m - prev < 1e-14 && m > 0.5 {
                return Ok(r);
            }
            prev = m;
        }
        Err(Error::NonConvergence("radial mass horizon".into()))
    }

    /// Whether x lies in the closed ellipsoid E_gamma = {x : x^T V^{-1} x <= r^2}.
    pub fn in_ellipsoid(&self, x: &DVector<f64>, r: f64) -> bool {
        mahalanobis_norm(x, &self.v_inv_sqrt) <= r
    }

    pub fn v_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.v_inv_sqrt
    }

    /// Draw n i.i.d. rows X = V^{1/2} R U with U uniform on the sphere and
    /// R distributed with density proportional to t^{q-1} h(t^2);
    /// deterministic given the seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let quantile = self.radial_quantile_table()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = self.q;
        let mut out = DMatrix::zeros(n, q);
        for i in 0..n {
            let mut u = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = u.norm();
            if norm == 0.0 {
                u[0] = 1.0;
            } else {
                u /= norm;
            }
            let r = quantile.invert(rng.gen::<f64>());
            let x = &self.v_sqrt * u * r;
            out.row_mut(i).copy_from(&x.transpose());
        }
        Ok(out)
    }

    fn radial_quantile_table(&self) -> Result<QuantileTable> {
        const GRID: usize = 4096;
        let t_max = {
            // cover all but 1e-12 of the radial mass
            let mut r = (self.q as f64).sqrt().max(1.0);
            while self.radial_mass(r)? < 1.0 - 1e-12 {
                r *= 1.5;
                if r > 1e6 {
                    return Err(Error::NonConvergence("radial quantile horizon".into()));
                }
            }
            r
        };
        let q = self.q as f64;
        let s = self.sphere_area();
        let density = |t: f64| s * t.powf(q - 1.0) * self.h(t * t);
        let dt = t_max / GRID as f64;
        let mut ts = Vec::with_capacity(GRID + 1);
        let mut cdf = Vec::with_capacity(GRID + 1);
        ts.push(0.0);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..GRID {
            let a = i as f64 * dt;
            let b = a + dt;
            // Simpson on each cell; the integrand is smooth
            acc += dt / 6.0 * (density(a) + 4.0 * density(0.5 * (a + b)) + density(b));
            ts.push(b);
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(QuantileTable { ts, cdf })
    }
}

struct QuantileTable {
    ts: Vec<f64>,
    cdf: Vec<f64>,
}

impl QuantileTable {
    fn invert(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&c| c < u);
        if idx == 0 {
            return self.ts[0];
        }
        if idx >= self.cdf.len() {
            return *self.ts.last().unwrap();
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let (t0, t1) = (self.ts[idx - 1], self.ts[idx]);
        if c1 > c0 {
            t0 + (u - c0) / (c1 - c0) * (t1 - t0)
        } else {
            t0
        }
    }
}

/// ||V^{-1/2} x||, the Mahalanobis norm used by the ellipsoid indicator.
pub fn mahalanobis_norm(x: &DVector<f64>, v_inv_sqrt: &DMatrix<f64>) -> f64 {
    (v_inv_sqrt * x).norm()
}

/// All model constants attached to a coverage level gamma.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustConstants {
    pub gamma: f64,
    pub q: usize,
    pub family: Family,
    pub r_gamma: f64,
    pub sigma2_gamma: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub mu: f64,
    pub m4: f64,
    pub tau: f64,
}

impl RobustConstants {
    pub fn sigma_gamma(&self) -> f64 {
        self.sigma2_gamma.sqrt()
    }
}

/// Solve sphere_area * int_0^r t^{q-1} h(t^2) dt = gamma for r, to 1e-10
/// absolute in gamma.
pub fn solve_radius(gamma: f64, model: &EllipticalModel) -> Result<f64> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0,1), got {gamma}"
        )));
    }
    let mut hi = (model.q() as f64).sqrt().max(1.0);
    while model.radial_mass(hi)? < gamma {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::NonConvergence("radius bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = model.radial_mass(mid)?;
        if (m - gamma).abs() < 1e-11 {
            return Ok(mid);
        }
        if m < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // interval collapsed; midpoint meets the tolerance by continuity
    Ok(0.5 * (lo + hi))
}

/// Compute all constants at coverage gamma for the model's generator.
pub fn compute_constants(gamma: f64, model: &EllipticalModel) -> Result<RobustConstants> {
    let q = model.q() as f64;
    let r = solve_radius(gamma, model)?;
    let s = 2.0 * (q / 2.0 * std::f64::consts::PI.ln() - ln_gamma(q / 2.0)).exp();

    let sigma2 = s / (gamma * q) * integrate(|t| t.powf(q + 1.0) * model.h(t * t), 0.0, r, QUAD_TOL)?;
    let sigma = sigma2.sqrt();

    // kappa0 = pi^{q/2} / ((q+2) Gamma(q/2+1)) * int_0^r t^{q+3} h'(t^2) dt
    let k0_front = (q / 2.0 * std::f64::consts::PI.ln() - ln_gamma(q / 2.0 + 1.0)).exp() / (q + 2.0);
    let kappa0 = k0_front * integrate(|t| t.powf(q + 3.0) * model.h_prime(t * t), 0.0, r, QUAD_TOL)?;

    let nu0 = s * model.h(r * r) * r.powf(q - 1.0) * sigma;
    let nu1 = r / sigma;
    let nu2 = 2.0 * nu0 * nu1.powi(3) / (sigma * q * (q + 2.0)) - 2.0 * gamma / sigma;
    if nu2.abs() < 1e-14 {
        return Err(Error::DegenerateConstant(format!(
            "nu2 = {nu2}, kappa3 undefined"
        )));
    }

    let kappa1 = -r * r / (q * gamma);
    let kappa2 = (sigma * nu2 + 2.0 * gamma) / (q * gamma * sigma * nu2);
    let kappa3 = -2.0 / (sigma * nu2);
    let kappa4 = (r * r - q * sigma2) / q;

    // truncated second radial moment, in whitened coordinates
    let mu = gamma * q * sigma2;
    // truncated fourth radial moment E(1_{E} ||V^{-1/2}X||^4)
    let m4 = s * integrate(|t| t.powf(q + 3.0) * model.h(t * t), 0.0, r, QUAD_TOL)?;
    let tau = sigma2.powi(-2) * kappa3 * kappa3 / (q * (q + 2.0)) * m4;

    Ok(RobustConstants {
        gamma,
        q: model.q(),
        family: model.family(),
        r_gamma: r,
        sigma2_gamma: sigma2,
        nu0,
        nu1,
        nu2,
        kappa0,
        kappa1,
        kappa2,
        kappa3,
        kappa4,
        mu,
        m4,
        tau,
    })
}

/// w(t) = 1_{[0, r]}(t) (kappa1 + kappa2 t^2) + kappa4; closed interval.
pub fn weight_w(t: f64, c: &RobustConstants) -> f64 {
    if t <= c.r_gamma {
        c.kappa1 + c.kappa2 * t * t + c.kappa4
    } else {
        c.kappa4
    }
}

/// v(t) = kappa3 1_{[0, r]}(t) t^2.
pub fn weight_v(t: f64, c: &RobustConstants) -> f64 {
    if t <= c.r_gamma {
        c.kappa3 * t * t
    } else {
        0.0
    }
}
