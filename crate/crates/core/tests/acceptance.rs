//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single pass/fail line; tolerances are pinned in the assertions.

use mslca::blocks::{extract, BlockStructure, ScatterMatrix};
use mslca::elliptical::{compute_constants, EllipticalModel};
use mslca::influence::{
    bound_if2_s, bound_if_t_robust, if2_s, if2_s_via_if_t, if_alpha, if_rho, if_t,
    if_t_norm2_closed_form, if_t_robust, unbounded_witness, IfContext,
};
use mslca::mcd::{exhaustive_mcd, fast_mcd};
use mslca::mslca::build_t;
use mslca::sim::{
    fd_oracle, mc_estimator_covariance, random_a2_scatter, size_power, FdTarget, FdValue,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn report(id: u32, name: &str, ok: bool) {
    println!("criterion {id:02} ({name}): {}", if ok { "pass" } else { "fail" });
    assert!(ok, "criterion {id:02} ({name}) failed");
}

fn ctx_for(dims: &[usize], seed: u64, strength: f64, gamma: f64) -> IfContext {
    let v = random_a2_scatter(dims, seed, strength);
    let model = EllipticalModel::gaussian(v.clone()).unwrap();
    let c = compute_constants(gamma, &model).unwrap();
    IfContext::new(v, Some(c)).unwrap()
}

fn random_x(q: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(q, |_, _| rng.gen_range(-2.0..2.0))
}

/// Quantile by bisecting the oracle CDF; statrs's own `inverse_cdf` is only
/// accurate to ~1e-6.
fn chi2_quantile_oracle(dof: f64, p: f64) -> f64 {
    let d = ChiSquared::new(dof).unwrap();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while d.cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_01_gaussian_constants_match_chi_square_oracle() {
    let mut ok = true;
    for &q in &[2usize, 4, 6] {
        for &gamma in &[0.5, 0.75, 0.9] {
            let bs = BlockStructure::new(vec![1, q - 1]).unwrap();
            let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs)).unwrap();
            let c = compute_constants(gamma, &model).unwrap();
            let r2_oracle = chi2_quantile_oracle(q as f64, gamma);
            let sigma2_oracle =
                ChiSquared::new((q + 2) as f64).unwrap().cdf(c.r_gamma * c.r_gamma) / gamma;
            ok &= (c.r_gamma * c.r_gamma - r2_oracle).abs() < 1e-8;
            ok &= (c.sigma2_gamma - sigma2_oracle).abs() < 1e-8;
        }
    }
    report(1, "gaussian constants vs chi-square oracle", ok);
}

#[test]
fn criterion_02_robust_if_t_proportional_to_classical() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut ok = true;
    for trial in 0..1000u64 {
        let dims: &[usize] = if trial % 2 == 0 { &[2, 2] } else { &[2, 3, 2] };
        let ctx = ctx_for(dims, trial, 0.4, 0.75);
        let c = ctx.constants().unwrap();
        let x = random_x(ctx.structure().q(), &mut rng);
        let robust = if_t_robust(&x, &ctx).unwrap();
        let indicator = if ctx.inside(&x).unwrap() { 1.0 } else { 0.0 };
        let scale = indicator / (c.sigma2_gamma * 2.0 * c.kappa0);
        let residual = robust + if_t(&x, &ctx).unwrap() * scale;
        ok &= residual.norm() < 1e-12;
    }
    report(2, "robust if_T proportional to classical if_T", ok);
}

#[test]
fn criterion_03_closed_form_bounds_dominate_random_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;

    // sup-norm bound for if_T_robust on a correlated scatter
    let ctx = ctx_for(&[2, 3], 11, 0.4, 0.75);
    let bound_t = bound_if_t_robust(&ctx).unwrap();
    for _ in 0..100_000 {
        let scale = rng.gen_range(0.01..30.0);
        let x = random_x(5, &mut rng) * scale;
        ok &= if_t_robust(&x, &ctx).unwrap().amax() <= bound_t + 1e-12;
    }

    // second-order bound under mutual non-correlation
    let bs = BlockStructure::new(vec![2, 3]).unwrap();
    let v = ScatterMatrix::identity(bs);
    let model = EllipticalModel::gaussian(v.clone()).unwrap();
    let c = compute_constants(0.75, &model).unwrap();
    let null_ctx = IfContext::new(v, Some(c)).unwrap();
    let bound_s = bound_if2_s(&null_ctx).unwrap();
    for _ in 0..100_000 {
        let scale = rng.gen_range(0.01..30.0);
        let x = random_x(5, &mut rng) * scale;
        ok &= if2_s(&x, &null_ctx).unwrap() <= bound_s + 1e-12;
    }
    report(3, "closed-form bounds dominate 1e5 random points", ok);
}

#[test]
fn criterion_04_witness_ray_is_exactly_quadratic() {
    let ctx = ctx_for(&[2, 3], 5, 0.4, 0.75);
    let witness = unbounded_witness(&ctx).unwrap();
    // norms are reported at t in {1, 10, 100, 1000}
    let ratios: Vec<f64> =
        witness.norms.iter().skip(1).map(|&(t, norm)| norm / (t * t)).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
    report(4, "witness ray quadratic growth within 5%", hi / lo < 1.05);
}

#[test]
fn criterion_05_two_set_reduction_of_rho_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut checked = 0;
    let mut ok = true;
    'outer: for seed in 0..40u64 {
        let ctx = ctx_for(&[2, 3], seed, 0.4, 0.75);
        let bs = ctx.structure();
        let x = random_x(5, &mut rng);
        for j in 0..5 {
            let rho_j = ctx.fit().rho[j];
            let beta_j = ctx.fit().beta.column(j).into_owned();
            let u =
                2.0f64.sqrt() * extract(0, &x, bs).unwrap().dot(&extract(0, &beta_j, bs).unwrap());
            let v =
                2.0f64.sqrt() * extract(1, &x, bs).unwrap().dot(&extract(1, &beta_j, bs).unwrap());
            let displayed = 2.0 * rho_j * u * v - rho_j * rho_j * (u * u + v * v);
            let derived = 2.0 * rho_j * if_rho(&x, &ctx, j).unwrap();
            ok &= (derived - displayed).abs() < 1e-10;
            checked += 1;
            if checked >= 100 {
                break 'outer;
            }
        }
    }
    report(5, "K=2 reduction of the rho^2 influence", ok && checked >= 100);
}

#[test]
fn criterion_06_finite_difference_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    let mut ok = true;
    for seed in 0..200u64 {
        if checked >= 50 {
            break;
        }
        let ctx = ctx_for(&[2, 2], seed, 0.45, 0.75);
        let rho = &ctx.fit().rho;
        if (0..4).any(|a| (0..a).any(|b| (rho[a] - rho[b]).abs() < 0.05)) {
            continue;
        }
        let x = DVector::from_fn(4, |_, _| rng.gen_range(-1.5..1.5));
        let analytic_t = if_t(&x, &ctx).unwrap();
        if let FdValue::Matrix(fd) = fd_oracle(&x, &ctx, FdTarget::T, 1e-6).unwrap() {
            ok &= (&fd - &analytic_t).norm() / analytic_t.norm().max(1e-8) < 1e-4;
        }
        let analytic_rho = if_rho(&x, &ctx, 0).unwrap();
        if let FdValue::Scalar(fd) = fd_oracle(&x, &ctx, FdTarget::Rho(0), 1e-6).unwrap() {
            ok &= (fd - analytic_rho).abs() / analytic_rho.abs().max(1e-8) < 1e-4;
        }
        let analytic_alpha = if_alpha(&x, &ctx, 0).unwrap();
        if let FdValue::Vector(fd) = fd_oracle(&x, &ctx, FdTarget::Alpha(0), 1e-6).unwrap() {
            ok &= (&fd - &analytic_alpha).norm() / analytic_alpha.norm().max(1e-8) < 1e-4;
        }
        checked += 1;
    }
    report(6, "finite differences confirm if_T, if_rho, if_alpha", ok && checked >= 50);
}

#[test]
fn criterion_07_null_calibration_of_the_robust_test() {
    let bs = BlockStructure::new(vec![2, 2, 2]).unwrap();
    let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
    let exp = size_power(&model, &bs, 0.75, 500, 2000, None, 40, 7).unwrap();
    let rate = exp.robust_rejection["0.05"];
    println!("  empirical 5% rejection rate: {rate:.4} ({:.1} s)", exp.elapsed_secs);
    report(7, "null rejection rate at 5% within [3.5%, 6.5%]", (0.035..=0.065).contains(&rate));
}

#[test]
fn criterion_08_if_t_norm_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for trial in 0..1000u64 {
        let ctx = ctx_for(&[2, 3], trial, 0.4, 0.75);
        let x = random_x(5, &mut rng);
        let direct = if_t(&x, &ctx).unwrap().norm();
        let closed = if_t_norm2_closed_form(&x, &ctx).unwrap();
        ok &= (closed - direct * direct).abs() < 1e-10;
    }
    report(8, "closed form for ||if_T||_F^2", ok);
}

#[test]
fn criterion_09_fast_mcd_matches_exhaustive_search() {
    let bs = BlockStructure::new(vec![2, 2]).unwrap();
    let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
    let mut hits = 0;
    for trial in 0..100u64 {
        let data = model.sample(20, 900 + trial).unwrap();
        let exact = exhaustive_mcd(&data, 15, &bs).unwrap();
        let fast = fast_mcd(&data, 15, 500, trial, &bs).unwrap();
        if (exact.objective - fast.objective).abs() < 1e-12 {
            hits += 1;
        }
    }
    println!("  fast/exhaustive agreement: {hits}/100");
    report(9, "fast MCD reaches the exhaustive optimum on >= 95/100 trials", hits >= 95);
}

#[test]
fn criterion_10_asymptotic_covariance_of_the_robust_fit() {
    let v = random_a2_scatter(&[2, 2], 17, 0.5);
    let model = EllipticalModel::gaussian(v.clone()).unwrap();
    let c = compute_constants(0.75, &model).unwrap();
    let ctx = IfContext::new(v, Some(c)).unwrap();
    let rep = mc_estimator_covariance(&model, &ctx, 0.75, 2000, 1000, 20, 10, 20).unwrap();
    println!(
        "  top-entry rel dev {:.4}; rho1 var {:.5} vs {:.5}",
        rep.max_rel_dev_top_entries, rep.rho1_var_empirical, rep.rho1_var_theory
    );
    let rho_rel = (rep.rho1_var_empirical - rep.rho1_var_theory).abs() / rep.rho1_var_theory;
    report(
        10,
        "limiting covariance matches Monte Carlo within 15%",
        rep.max_rel_dev_top_entries < 0.15 && rho_rel < 0.15,
    );
}

#[test]
fn criterion_11_second_order_influence_dual_route() {
    let bs = BlockStructure::new(vec![2, 3]).unwrap();
    let v = ScatterMatrix::identity(bs);
    let model = EllipticalModel::gaussian(v.clone()).unwrap();
    let c = compute_constants(0.75, &model).unwrap();
    let ctx = IfContext::new(v, Some(c)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    for _ in 0..1000 {
        let x = random_x(5, &mut rng);
        let closed = if2_s(&x, &ctx).unwrap();
        let via_t = if2_s_via_if_t(&x, &ctx).unwrap();
        ok &= (closed - via_t).abs() < 1e-10;
    }
    report(11, "if2_S closed form equals the trace route", ok);
}

#[test]
fn criterion_12_build_t_is_scale_invariant() {
    let mut ok = true;
    for seed in 0..10u64 {
        let v = random_a2_scatter(&[2, 3, 2], seed, 0.4);
        let t = build_t(&v).unwrap();
        for &c in &[1e-3, 1.0, 1e3] {
            let t_scaled = build_t(&v.scaled(c)).unwrap();
            ok &= (t_scaled - &t).amax() < 1e-12;
        }
    }
    report(12, "build_T invariant under scatter rescaling", ok);
}
