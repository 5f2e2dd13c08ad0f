use std::f64::consts::PI;

use proptest::prelude::*;
use sllg_core::measures::{tv_distance, EmpiricalSphereMeasure};
use sllg_core::noise::{first_level, second_level, BrownianPath};
use sllg_core::sde_sphere::{anisotropic_drift, sde_step_a, sde_step_b, sphere_point, SphereState, UniformSphere};
use sllg_core::spde::{drift, max_stable_dt, rodrigues, Quiet, SimulationOptions};
use sllg_core::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -PI..PI).prop_map(|(z, p)| sphere_point(z, p))
}

fn mat3() -> impl Strategy<Value = Mat3> {
    prop::array::uniform9(-1.0..1.0f64).prop_map(Mat3::from_row_major)
}

fn field(n: usize) -> impl Strategy<Value = SphereField> {
    prop::collection::vec(vec3(1.0), 4).prop_map(move |c| {
        let g = Grid1D::new(n, 1.0).unwrap();
        SphereField::from_fn_normalized(g, |x| {
            c[0] + c[1] * (PI * x).cos() + c[2] * (2.0 * PI * x).cos() + c[3] * 0.1 + Vec3::new(1e-3, 2e-3, 3e-3)
        })
        .unwrap()
    })
}

proptest! {
    #[test]
    fn cross_is_orthogonal_and_antisymmetric(a in vec3(10.0), b in vec3(10.0)) {
        let c = a.cross(b);
        prop_assert!(c.dot(a).abs() <= 1e-12 * (1.0 + a.norm_sq() * b.norm()));
        prop_assert_eq!(c, -b.cross(a));
    }

    #[test]
    fn first_level_is_antisymmetric_right_cross(w in vec3(5.0), x in vec3(5.0)) {
        let m = first_level(w);
        prop_assert_eq!(m.transpose(), m * -1.0);
        prop_assert!((m.apply(x) - x.cross(w)).max_abs() < 1e-13);
    }

    #[test]
    fn rotations_are_isometries(v in unit(), axis in unit(), angle in -10.0..10.0f64) {
        prop_assert!((rodrigues(v, axis, angle).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sde_drift_is_tangent(v in unit(), a in mat3(), b in vec3(1.0), l1 in -2.0..2.0f64, l2 in 0.1..2.0f64) {
        let p = AnisotropyParams { a, b, ..AnisotropyParams::isotropic(l1, l2) };
        let d = anisotropic_drift(SphereState { v }, &p);
        prop_assert!(d.dot(v).abs() < 1e-14 * (1.0 + d.norm()));
    }

    #[test]
    fn sde_steps_stay_on_sphere(v in unit(), a in mat3(), db in vec3(0.2), h in -2.0..2.0f64, s in -0.2..0.2f64) {
        let p = AnisotropyParams { a, ..AnisotropyParams::isotropic(0.3, 1.0) };
        let w = sde_step_b(SphereState { v }, &p, h, db, 1e-3);
        prop_assert!((w.v.norm() - 1.0).abs() < 1e-12);
        let w = sde_step_a(SphereState { v }, db, s, &p, 1e-3);
        prop_assert!((w.v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn field_drift_is_tangent(u in field(24), a in mat3(), l1 in -1.0..1.0f64) {
        let p = AnisotropyParams { a, ..AnisotropyParams::isotropic(l1, 1.0) };
        for (v, f) in u.values().iter().zip(drift(&u, &p)) {
            prop_assert!(v.dot(f).abs() <= 1e-12 * (1.0 + f.norm()));
        }
    }

    #[test]
    fn energy_is_rotation_invariant(u in field(20), axis in unit(), angle in -PI..PI) {
        let p = AnisotropyParams::isotropic(0.0, 1.0);
        let r = u.map(|v| rodrigues(v, axis, angle)).unwrap();
        prop_assert!((fields::energy(&u, &p) - fields::energy(&r, &p)).abs() < 1e-10 * (1.0 + fields::energy(&u, &p)));
    }

    #[test]
    fn every_scheme_stays_on_sphere(u in field(16), seed in 0u64..1000, scheme in 0usize..3) {
        let g = *u.grid();
        let p = AnisotropyParams { a: Mat3::diag([0.1, 0.0, 0.2]), ..AnisotropyParams::isotropic(0.5, 1.0) };
        let scheme = [Scheme::StrangRotation, Scheme::ItoEulerProject, Scheme::StratonovichHeunProject][scheme];
        let cfg = SolverConfig::new(0.5 * max_stable_dt(&p, &g, 1.0)).with_scheme(scheme);
        let mut noise = IncrementStream::new(seed, 0, cfg.dt);
        let rec = spde::simulate(&u, &p, &NoiseShape::constant_b(&g, 1.0), &cfg, &SimulationOptions::new(200.0 * cfg.dt), &mut noise).unwrap();
        prop_assert!(rec.max_norm_deviation <= 1e-12);
    }

    #[test]
    fn constant_fields_stay_constant(v in unit(), seed in 0u64..1000, a in mat3()) {
        let g = Grid1D::new(12, 1.0).unwrap();
        let u = SphereField::constant(g, v).unwrap();
        let p = AnisotropyParams { a: a * 0.1, ..AnisotropyParams::isotropic(0.2, 1.0) };
        let cfg = SolverConfig::new(0.5 * max_stable_dt(&p, &g, 1.0));
        let mut noise = IncrementStream::new(seed, 0, cfg.dt);
        let rec = spde::simulate(&u, &p, &NoiseShape::constant_b(&g, 0.7), &cfg, &SimulationOptions::new(100.0 * cfg.dt), &mut noise).unwrap();
        prop_assert!(rec.summary.iter().all(|r| r.grad_norm_sq.sqrt() <= 1e-10));
    }

    #[test]
    fn noiseless_identity_is_exact(u in field(10)) {
        // zero horizon leaves the field untouched under every scheme
        let g = *u.grid();
        let rec = spde::simulate(&u, &AnisotropyParams::isotropic(0.0, 1.0), &NoiseShape::constant_b(&g, 1.0),
            &SolverConfig::new(1e-4), &SimulationOptions::new(0.0), &mut Quiet).unwrap();
        prop_assert_eq!(rec.final_state, u);
    }

    #[test]
    fn rough_driver_algebra(incs in prop::collection::vec(-0.3..0.3f64, 3 * 24), cut in 1usize..23) {
        let path = BrownianPath::from_increments(3, 0.01, incs, 0).unwrap();
        let times: Vec<f64> = (0..=24).map(|k| k as f64 * 0.01).collect();
        let rd = second_level(&path, &times).unwrap();
        let (w, ww) = rd.between(0, 24);
        prop_assert!((w + w.transpose()).max_abs() <= 1e-12);
        prop_assert!((ww.symmetric_part() - w * w * 0.5).max_abs() <= 1e-12);
        let (w1, ww1) = rd.between(0, cut);
        let (w2, ww2) = rd.between(cut, 24);
        prop_assert!((ww - (ww1 + ww2 + w2 * w1)).max_abs() <= 1e-12);
        prop_assert!((w - (w1 + w2)).max_abs() <= 1e-12);
    }

    #[test]
    fn bins_are_in_range_and_antipodes_reflect(v in unit(), nz in 1usize..20, np in 1usize..20) {
        let m = EmpiricalSphereMeasure::new(nz, np).unwrap();
        let (b, s) = m.bin_of(v);
        prop_assert!(b < nz && s < np);
        let (b2, _) = m.bin_of(-v);
        // reflected bands, except for points exactly on a band edge
        let edge = ((v.z() + 1.0) / 2.0 * nz as f64).fract() == 0.0;
        prop_assert!(edge || b + b2 == nz - 1);
    }

    #[test]
    fn merge_is_commutative_and_tv_linear(a in prop::collection::vec(unit(), 1..60), b in prop::collection::vec(unit(), 1..60)) {
        let mut ma = EmpiricalSphereMeasure::new(6, 6).unwrap();
        let mut mb = EmpiricalSphereMeasure::new(6, 6).unwrap();
        let mut pooled = EmpiricalSphereMeasure::new(6, 6).unwrap();
        a.iter().for_each(|v| { ma.accumulate(*v, 1); pooled.accumulate(*v, 1); });
        b.iter().for_each(|v| { mb.accumulate(*v, 1); pooled.accumulate(*v, 1); });
        let ab = ma.merge(&mb).unwrap();
        prop_assert_eq!(&ab, &mb.merge(&ma).unwrap());
        prop_assert_eq!(ab.total(), ma.total() + mb.total());
        prop_assert_eq!(tv_distance(&ab, &UniformSphere).unwrap(), tv_distance(&pooled, &UniformSphere).unwrap());
    }

    #[test]
    fn tv_to_uniform_invariant_under_sector_rotations(pts in prop::collection::vec((-1.0..1.0f64, 0usize..8, 0.1..0.9f64), 1..80), shift in 0usize..8) {
        let np = 8;
        let sector = 2.0 * PI / np as f64;
        let mut m1 = EmpiricalSphereMeasure::new(5, np).unwrap();
        let mut m2 = EmpiricalSphereMeasure::new(5, np).unwrap();
        for (z, s, f) in pts {
            let phi = -PI + (s as f64 + f) * sector;
            m1.accumulate(sphere_point(z, phi), 1);
            m2.accumulate(sphere_point(z, phi + shift as f64 * sector), 1);
        }
        let d1 = tv_distance(&m1, &UniformSphere).unwrap();
        let d2 = tv_distance(&m2, &UniformSphere).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn poincare_wirtinger_holds(u in field(64)) {
        let (lhs, rhs) = fields::poincare_wirtinger_sides(&u);
        prop_assert!(lhs <= rhs * (1.0 + 1e-2) + 1e-12);
    }
}
