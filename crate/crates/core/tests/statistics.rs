//! Monte Carlo checks with error bars derived from the sample sizes.

use std::f64::consts::PI;

use rand::Rng;
use sllg_core::diagnostics::*;
use sllg_core::ensemble::Moments;
use sllg_core::measures::{ks_critical_1pct, ks_z_marginal, tv_distance, EmpiricalSphereMeasure};
use sllg_core::noise::trajectory_rng;
use sllg_core::sde_sphere::*;
use sllg_core::spde::max_stable_dt;
use sllg_core::*;

fn smooth_field(n: usize, len: f64) -> SphereField {
    let g = Grid1D::new(n, len).unwrap();
    SphereField::from_fn_normalized(g, |x| {
        let c = (PI * x / len).cos();
        Vec3::new(0.8 * c, 0.5 * (2.0 * PI * x / len).cos(), 0.6 + 0.3 * c)
    })
    .unwrap()
}

/// Expected TV of an exact multinomial sample, `½ Σ E|p̂ - p|`, to leading order.
fn tv_noise_floor(masses: &[f64], n: f64) -> f64 {
    0.5 * masses.iter().map(|p| (2.0 * p * (1.0 - p) / (PI * n)).sqrt()).sum::<f64>()
}

#[test]
fn uniform_samples_against_uniform_density() {
    let mut rng = trajectory_rng(2024, 0);
    let mut m = EmpiricalSphereMeasure::new(16, 16).unwrap();
    let n = 1_000_000;
    for _ in 0..n {
        m.accumulate(uniform_on_sphere(&mut rng), 1);
    }
    let tv = tv_distance(&m, &UniformSphere).unwrap();
    assert!(tv <= 0.02, "{tv}");
    let p = 1.0 / 256.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let worst = m.counts().iter().map(|&c| (c as f64 - n as f64 * p).abs()).fold(0.0, f64::max);
    assert!(worst <= 5.0 * sigma, "{worst} vs {sigma}");
    let ks = ks_z_marginal(&m, |z| UniformSphere.z_cdf(z)).unwrap();
    assert!(ks <= ks_critical_1pct(n as f64), "{ks}");
}

#[test]
fn spherical_brownian_moments() {
    // 64 independent runs; the spread of run means gives the error bar
    let runs: Vec<(f64, f64)> = (0..64)
        .map(|s| {
            let path = spherical_brownian(SphereState { v: Vec3::E3 }, 1e-2, 20_000, s);
            let tail = &path[1000..];
            let n = tail.len() as f64;
            (
                tail.iter().map(|v| v.v.z()).sum::<f64>() / n,
                tail.iter().map(|v| v.v.z() * v.v.z()).sum::<f64>() / n,
            )
        })
        .collect();
    let z: Moments = runs.iter().map(|r| r.0).collect();
    let z2: Moments = runs.iter().map(|r| r.1).collect();
    assert!(z.mean().abs() <= 3.0 * z.stderr(), "{} ± {}", z.mean(), z.stderr());
    assert!((z2.mean() - 1.0 / 3.0).abs() <= 3.0 * z2.stderr(), "{} ± {}", z2.mean(), z2.stderr());
}

#[test]
fn spherical_brownian_cap_occupation() {
    // cap {z > 0.5} has area π, i.e. a quarter of the sphere
    let runs: Moments = (0..64)
        .map(|s| {
            let path = spherical_brownian(SphereState { v: Vec3::E1 }, 1e-2, 20_000, 100 + s);
            path.iter().filter(|v| v.v.z() > 0.5).count() as f64 / path.len() as f64
        })
        .collect();
    assert!((runs.mean() - 0.25).abs() <= 3.0 * runs.stderr(), "{} ± {}", runs.mean(), runs.stderr());
}

#[test]
fn long_single_chain_time_average() {
    // T = 10³ at dt = 10⁻³, error bar from 50 batch means
    let p = AnisotropyParams::isotropic(0.0, 1.0);
    let mut stream = IncrementStream::new(77, 0, 1e-3);
    let mut v = Vec3::E2;
    let mut batches = Moments::default();
    for _ in 0..50 {
        let mut s = 0.0;
        for _ in 0..20_000 {
            v = sde_step_b(SphereState { v }, &p, 1.0, stream.vec3(), 1e-3).v;
            s += v.z();
        }
        batches.push(s / 20_000.0);
    }
    assert!(batches.mean().abs() <= 3.0 * batches.stderr(), "{} ± {}", batches.mean(), batches.stderr());
}

fn kb_cfg(a3: f64, h2: f64) -> KbConfig {
    KbConfig {
        params: AnisotropyParams { a: Mat3::diag([0.0, 0.0, a3]), ..AnisotropyParams::isotropic(0.0, 1.0) },
        h2,
        dt: 1e-3,
        burn_in: 5.0,
        horizon: 50.0,
        sample_every: 0.1,
        n_chains: 32,
        n_z_bands: 8,
        n_phi: 8,
        v0: None,
        domain_length: 1.0,
    }
}

#[test]
fn noise_sign_does_not_change_the_law() {
    let a = kb_report(&kb_measure(&kb_cfg(2.0, 1.0), 5, 4).unwrap(), &UniformSphere, 0.0).unwrap();
    let b = kb_report(&kb_measure(&kb_cfg(2.0, -1.0), 6, 4).unwrap(), &UniformSphere, 0.0).unwrap();
    let se = (a.stderr_z2.powi(2) + b.stderr_z2.powi(2)).sqrt();
    assert!((a.mean_z2 - b.mean_z2).abs() <= 3.0 * se, "{} vs {} ± {se}", a.mean_z2, b.mean_z2);
}

#[test]
fn gibbs_law_is_stationary() {
    let cfg = kb_cfg(2.0, 1.0);
    let density = GibbsDensity::new(GibbsSpec {
        lambda2: 1.0,
        h2: 1.0,
        aniso: cfg.params.clone(),
        domain_length: 1.0,
    })
    .unwrap();
    let n = 10_000;
    let mut m = EmpiricalSphereMeasure::new(16, 16).unwrap();
    for i in 0..n {
        let mut stream = IncrementStream::new(8, i, 1e-3);
        let mut v = density.sample(stream.rng());
        for _ in 0..10_000 {
            v = sde_step_b(SphereState { v }, &cfg.params, 1.0, stream.vec3(), 1e-3).v;
        }
        m.accumulate(v, 1);
    }
    let floor = tv_noise_floor(&m.reference_masses(&density), n as f64);
    let tv = tv_distance(&m, &density).unwrap();
    assert!(tv <= 2.0 * floor, "{tv} vs floor {floor}");
}

#[test]
fn rejection_samples_have_gibbs_z_moment() {
    let cfg = kb_cfg(2.0, 1.0);
    let density = GibbsDensity::new(GibbsSpec { lambda2: 1.0, h2: 1.0, aniso: cfg.params, domain_length: 1.0 }).unwrap();
    let mut rng = trajectory_rng(3, 0);
    let n = 100_000;
    let m: Moments = (0..n).map(|_| density.sample(&mut rng).z().powi(2)).collect();
    assert!((m.mean() - 0.193_435_325_887_480_8).abs() <= 4.0 * m.stderr());
    let _: f64 = rng.random();
}

fn energy_spec(shape_of: impl Fn(&Grid1D) -> NoiseShape, horizon: f64) -> EnsembleSpec {
    let u0 = smooth_field(48, PI);
    let g = *u0.grid();
    let p = AnisotropyParams::isotropic(0.5, 1.0);
    EnsembleSpec {
        shape: shape_of(&g),
        solver: SolverConfig::new(0.5 * max_stable_dt(&p, &g, 1.0)),
        u0,
        params: p,
        horizon,
        n_paths: 40,
        seed: 12,
        summary_stride: 10,
    }
}

#[test]
fn energy_inequality_with_sine_profile() {
    let spec = energy_spec(|g| NoiseShape::ShapeB { h2: g.nodes().map(|x| (PI * x / g.length()).sin()).collect() }, 1.0);
    let recs = run_spde_ensemble(&spec, 4).unwrap();
    let r = energy_inequality(&spec, &recs).unwrap();
    assert!(r.pass, "{r:?}");
    let dh = r.constants["grad_h_sq"];
    assert!((dh - PI / 2.0).abs() < 2e-2, "{dh}");
}

#[test]
fn energy_inequality_at_zero_horizon_is_an_equality() {
    let spec = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 0.0);
    let recs = run_spde_ensemble(&spec, 1).unwrap();
    let r = energy_inequality(&spec, &recs).unwrap();
    assert_eq!(r.lhs, r.rhs);
    let e0 = fields::grad_norm_sq(&spec.u0);
    assert!((r.lhs - e0).abs() <= 1e-14 * e0);
}

#[test]
fn anisotropic_inequality_reduces_without_anisotropy() {
    let spec = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 0.5);
    let recs = run_spde_ensemble(&spec, 2).unwrap();
    let r = anisotropic_energy_inequality(&spec, &recs).unwrap();
    assert!(r.pass);
    assert_eq!(r.constants["anisotropy_size"], 0.0);
    assert!((r.constants["c_lambda"] - young_constant(0.5, 1.0)).abs() < 1e-15);
}

#[test]
fn anisotropic_inequality_small_diagonal() {
    let mut spec = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 1.0);
    spec.params.a = Mat3::diag([0.0, 0.0, 0.1]);
    let recs = run_spde_ensemble(&spec, 4).unwrap();
    assert!(anisotropic_energy_inequality(&spec, &recs).unwrap().pass);
}

#[test]
fn improved_inequality_near_the_smallness_threshold() {
    let mut spec = energy_spec(|g| NoiseShape::constant_a(g, Vec3::new(0.3, 0.2, 0.5)), 1.0);
    // λ₁ = 0.5, λ₂ = 1, C_p = 1: threshold 0.2; Ḡ = 2 a² at 0.99 × threshold
    let a = (0.99 * 0.2 / 2.0f64).sqrt();
    spec.params.a = Mat3::diag([0.0, 0.0, a]);
    let recs = run_spde_ensemble(&spec, 4).unwrap();
    let r = improved_anisotropic_inequality(&spec, &recs).unwrap();
    assert!(r.pass, "{r:?}");
    spec.params.a = Mat3::diag([0.0, 0.0, 0.4]);
    assert!(matches!(improved_anisotropic_inequality(&spec, &recs), Err(Error::Smallness { .. })));
}

#[test]
fn halfnorm_constant_does_not_grow_with_the_horizon() {
    // the ratio I(t) / (E‖∂ₓu⁰‖² + t) peaks near t = 2 for this profile
    let short = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 4.0);
    let long = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 8.0);
    let c1 = h2_halfnorm_growth(&run_spde_ensemble(&short, 2).unwrap()).unwrap();
    let c2 = h2_halfnorm_growth(&run_spde_ensemble(&long, 2).unwrap()).unwrap();
    assert!(c1.pass && c2.pass);
    assert!(c2.lhs <= c1.lhs * (1.0 + 1e-9), "{} {}", c1.lhs, c2.lhs);
}

#[test]
fn halfnorm_vanishes_for_constant_fields() {
    let mut spec = energy_spec(|g| NoiseShape::constant_b(g, 1.0), 0.2);
    spec.u0 = SphereField::constant(*spec.u0.grid(), Vec3::E1).unwrap();
    let r = h2_halfnorm_growth(&run_spde_ensemble(&spec, 1).unwrap()).unwrap();
    assert_eq!(r.lhs, 0.0);
}

#[test]
fn poincare_sign_is_stable_under_refinement() {
    let mk = |n: usize| {
        let g = Grid1D::new(n, 2.0).unwrap();
        SphereField::from_fn_normalized(g, |x| {
            let phi = 0.7 * (x - 2.0 / (2.0 * PI) * (PI * x).sin());
            Vec3::new(phi.cos(), phi.sin(), 0.2)
        })
        .unwrap()
    };
    let r: Vec<f64> = [33, 65, 129, 257].iter().map(|&n| poincare_cross_check(&mk(n), 0.0).residual).collect();
    assert!(r.iter().all(|&x| x > 0.0), "{r:?}");
}

#[test]
fn synchronized_constant_field() {
    let g = Grid1D::new(16, PI).unwrap();
    let u0 = SphereField::constant(g, Vec3::new(0.0, 0.6, 0.8)).unwrap();
    let p = AnisotropyParams::isotropic(0.5, 1.0);
    let spec = SyncSpec {
        u0,
        solver: SolverConfig::new(0.5 * max_stable_dt(&p, &g, 1.0)),
        params: p,
        h2: 1.0,
        t_list: vec![0.0, 0.5],
        horizon: 1.0,
        n_paths: 4,
        seed: 1,
        sample_stride: 5,
    };
    let r = sync_experiment(&spec, 2).unwrap();
    assert!(r.alpha.iter().all(|a| a.abs() < 1e-24));
    assert!(r.sup_deviation.iter().all(|d| *d < 1e-12), "{:?}", r.sup_deviation);
}

#[test]
fn flatness_of_shape_a_poles_and_decay_of_profiles() {
    let g = Grid1D::new(32, PI).unwrap();
    let h1 = Vec3::new(0.0, 0.6, 0.8);
    let p = AnisotropyParams::isotropic(0.4, 1.0);
    let cfg = SolverConfig::new(0.5 * max_stable_dt(&p, &g, 1.0));
    let shape = NoiseShape::constant_a(&g, h1);
    for start in [h1, -h1] {
        let u0 = SphereField::constant(g, start).unwrap();
        let r = stationary_flatness(&u0, &p, &shape, &cfg, 1.0, 3).unwrap();
        assert!(r.max_grad_norm == 0.0 && r.final_displacement < 1e-14, "{r:?}");
    }
    let u0 = smooth_field(32, PI);
    let r = stationary_flatness(&u0, &p, &NoiseShape::constant_b(&g, 1.0), &cfg, 2.0, 3).unwrap();
    assert!(*r.grad_norm.last().unwrap() < 0.1 * r.grad_norm[0], "{:?}", r.grad_norm);
}
