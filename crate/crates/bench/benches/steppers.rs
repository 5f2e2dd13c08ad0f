use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sllg_bench::smooth_field;
use sllg_core::diagnostics::{kb_measure, KbConfig};
use sllg_core::measures::EmpiricalSphereMeasure;
use sllg_core::sde_sphere::{sde_step_b, SphereState};
use sllg_core::spde::{max_stable_dt, Stepper};
use sllg_core::*;

fn spde_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("spde_step");
    for scheme in [Scheme::StrangRotation, Scheme::ItoEulerProject, Scheme::StratonovichHeunProject] {
        for n in [64usize, 256, 1024] {
            let u0 = smooth_field(n, 1.0);
            let grid = *u0.grid();
            let p = AnisotropyParams::isotropic(0.5, 1.0);
            let dt = 0.9 * max_stable_dt(&p, &grid, 1.0);
            let shape = NoiseShape::constant_b(&grid, 1.0);
            let mut stepper = Stepper::new(grid, p, shape.clone(), SolverConfig::new(dt).with_scheme(scheme)).unwrap();
            let mut noise = IncrementStream::new(1, 0, dt);
            let mut u = u0.clone();
            group.bench_with_input(BenchmarkId::new(format!("{scheme:?}"), n), &n, |b, _| {
                b.iter(|| stepper.step(&mut u, NoiseIncrement::draw(&shape, &mut noise)).unwrap())
            });
        }
    }
    group.finish();
}

fn sde_chain(c: &mut Criterion) {
    let p = AnisotropyParams { a: Mat3::diag([0.0, 0.0, 2.0]), ..AnisotropyParams::isotropic(0.0, 1.0) };
    let mut stream = IncrementStream::new(2, 0, 1e-3);
    let mut v = SphereState::new(Vec3::E3).unwrap();
    c.bench_function("sde_step_b", |b| {
        b.iter(|| {
            v = sde_step_b(v, &p, 1.0, stream.vec3(), 1e-3);
            black_box(v)
        })
    });

    let cfg = KbConfig {
        params: p.clone(),
        h2: 1.0,
        dt: 1e-3,
        burn_in: 1.0,
        horizon: 10.0,
        sample_every: 0.1,
        n_chains: 4,
        n_z_bands: 16,
        n_phi: 16,
        v0: None,
        domain_length: 1.0,
    };
    c.bench_function("kb_measure_4x11k_steps", |b| b.iter(|| kb_measure(&cfg, 3, 1).unwrap()));

    let mut m = EmpiricalSphereMeasure::new(16, 16).unwrap();
    c.bench_function("measure_accumulate", |b| b.iter(|| m.accumulate(black_box(Vec3::new(0.36, 0.48, 0.8)), 1)));
}

criterion_group!(benches, spde_step, sde_chain);
criterion_main!(benches);
