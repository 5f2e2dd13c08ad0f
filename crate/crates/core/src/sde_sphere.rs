//! Spatially constant dynamics: the SDEs (A) and (B) on S², spherical
//! Brownian motion and the Gibbs law.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::SPHERE_TOL;
use crate::noise::IncrementStream;
use crate::spde::{rodrigues, rodrigues_matrix, AnisotropyParams, AnisotropySign};
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereState {
    pub v: Vec3,
}

impl SphereState {
    pub fn new(v: Vec3) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::NonFinite("sphere state".into()));
        }
        let deviation = v.norm() - 1.0;
        if deviation.abs() > SPHERE_TOL {
            return Err(Error::NotOnSphere { node: 0, deviation });
        }
        Ok(SphereState { v })
    }

    /// Projects a nonzero vector onto the sphere.
    pub fn normalized(v: Vec3) -> Result<Self> {
        if v.norm() == 0.0 {
            return Err(Error::InvalidArgument("cannot normalise the zero vector".into()));
        }
        Self::new(v.normalized())
    }
}

/// `𝒟(v)`, the anisotropic drift of the constant-field equations.
pub fn anisotropic_drift(v: SphereState, p: &AnisotropyParams) -> Vec3 {
    drift_vec(v.v, p)
}

#[inline]
fn drift_vec(v: Vec3, p: &AnisotropyParams) -> Vec3 {
    let s = match p.sign {
        AnisotropySign::Dissipative => -1.0,
        AnisotropySign::Reversed => 1.0,
    };
    p.llg(v, p.g_prime(v) * s)
}

/// One step of (B): half rotation, Euler drift with projection, half
/// rotation. Identical to the field stepper restricted to constant fields.
pub fn sde_step_b(v: SphereState, p: &AnisotropyParams, h2: f64, db: Vec3, dt: f64) -> SphereState {
    SphereState { v: step_b(v.v, p, h2, db, dt) }
}

#[inline]
pub(crate) fn step_b(v: Vec3, p: &AnisotropyParams, h2: f64, db: Vec3, dt: f64) -> Vec3 {
    let m = db.norm();
    let has_drift = p.has_anisotropy();
    if m == 0.0 || h2 == 0.0 {
        return if has_drift { (v + drift_vec(v, p) * dt).normalized() } else { v };
    }
    let r = rodrigues_matrix(db * (1.0 / m), 0.5 * h2 * m);
    let mut w = r.apply(v);
    if has_drift {
        w = (w + drift_vec(w, p) * dt).normalized();
    }
    r.apply(w)
}

/// One step of (A) with noise `w × h₁ ∘ dB`.
pub fn sde_step_a(v: SphereState, h1: Vec3, db: f64, p: &AnisotropyParams, dt: f64) -> SphereState {
    let n = h1.norm();
    let rot = |w: Vec3| if n > 0.0 { rodrigues(w, h1 * (1.0 / n), 0.5 * n * db) } else { w };
    let mut w = rot(v.v);
    if p.has_anisotropy() {
        w = (w + drift_vec(w, p) * dt).normalized();
    }
    SphereState { v: rot(w) }
}

/// Spherical Brownian motion `dB = B × ∘dW`; returns `n + 1` states.
pub fn spherical_brownian(v0: SphereState, dt: f64, n: usize, seed: u64) -> Vec<SphereState> {
    let mut stream = IncrementStream::new(seed, 0, dt);
    let iso = AnisotropyParams::isotropic(0.0, 1.0);
    let mut out = Vec::with_capacity(n + 1);
    let mut v = v0.v;
    out.push(v0);
    for _ in 0..n {
        v = step_b(v, &iso, 1.0, stream.vec3(), dt);
        out.push(SphereState { v });
    }
    out
}

/// Runs a (B) chain for `burn_in + n_samples * stride` steps and hands every
/// `stride`-th post-burn-in state to `observe`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_b(
    v0: Vec3,
    p: &AnisotropyParams,
    h2: f64,
    dt: f64,
    burn_in: usize,
    n_samples: usize,
    stride: usize,
    stream: &mut IncrementStream,
    mut observe: impl FnMut(Vec3),
) -> Vec3 {
    let mut v = v0;
    for _ in 0..burn_in {
        v = step_b(v, p, h2, stream.vec3(), dt);
    }
    for _ in 0..n_samples {
        for _ in 0..stride.max(1) {
            v = step_b(v, p, h2, stream.vec3(), dt);
        }
        observe(v);
    }
    v
}

/// Writes `time,v1,v2,v3,trajectory_id` rows.
pub fn write_sde_csv<W: Write>(mut w: W, rows: &[(f64, Vec3, usize)]) -> Result<()> {
    writeln!(w, "time,v1,v2,v3,trajectory_id")?;
    for (t, v, id) in rows {
        writeln!(w, "{t:e},{:e},{:e},{:e},{id}", v.x(), v.y(), v.z())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reference densities

/// A probability density on S² with respect to surface measure.
pub trait SphereDensity: Sync {
    fn density(&self, v: Vec3) -> f64;

    /// Mass of the cell `[z0, z1] × [φ0, φ1]` (φ measured from -π).
    fn cell_mass(&self, z0: f64, z1: f64, phi0: f64, phi1: f64) -> f64 {
        const K: usize = 16;
        let (dz, dp) = ((z1 - z0) / K as f64, (phi1 - phi0) / K as f64);
        let mut s = 0.0;
        for i in 0..K {
            let z = z0 + (i as f64 + 0.5) * dz;
            for j in 0..K {
                s += self.density(sphere_point(z, phi0 + (j as f64 + 0.5) * dp));
            }
        }
        s * dz * dp
    }

    /// `P(v₃ ≤ z)`.
    fn z_cdf(&self, z: f64) -> f64;
}

/// Point with height `z` and longitude `phi`.
#[inline]
pub fn sphere_point(z: f64, phi: f64) -> Vec3 {
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

pub struct UniformSphere;

impl SphereDensity for UniformSphere {
    fn density(&self, _v: Vec3) -> f64 {
        1.0 / (4.0 * PI)
    }

    fn cell_mass(&self, z0: f64, z1: f64, phi0: f64, phi1: f64) -> f64 {
        (z1 - z0) * (phi1 - phi0) / (4.0 * PI)
    }

    fn z_cdf(&self, z: f64) -> f64 {
        ((z.clamp(-1.0, 1.0)) + 1.0) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSpec {
    pub lambda2: f64,
    pub h2: f64,
    pub aniso: AnisotropyParams,
    pub domain_length: f64,
}

impl GibbsSpec {
    /// Log of the unnormalised stationary density of (B):
    /// `-(λ₂/h₂²)(vᵀA_sym v + 2b·v)`, sign flipped under the reversed drift.
    /// Exact for symmetric `A`.
    pub fn exponent(&self, v: Vec3) -> f64 {
        let a = self.aniso.a.symmetric_part();
        let e = v.dot(a.apply(v)) + 2.0 * self.aniso.b.dot(v);
        let s = match self.aniso.sign {
            AnisotropySign::Dissipative => -1.0,
            AnisotropySign::Reversed => 1.0,
        };
        s * self.lambda2 / (self.h2 * self.h2) * e
    }
}

/// The exponent as printed next to the Gibbs law, `-(λ₂/h₂)|D| g'(v)·v`.
pub fn displayed_gibbs_exponent(v: Vec3, spec: &GibbsSpec) -> f64 {
    -(spec.lambda2 / spec.h2) * spec.domain_length * spec.aniso.g_prime(v).dot(v)
}

/// Number of z bands and longitude sectors of the normalisation grid.
const QUAD_N: usize = 512;

/// Normalised Gibbs density with its quadrature tables.
#[derive(Debug, Clone)]
pub struct GibbsDensity {
    spec: GibbsSpec,
    log_z: f64,
    max_density: f64,
    /// Cumulative z-marginal at the `QUAD_N + 1` band edges.
    cdf_edges: Vec<f64>,
}

impl GibbsDensity {
    pub fn new(spec: GibbsSpec) -> Result<Self> {
        if !(spec.lambda2 > 0.0 && spec.lambda2.is_finite()) {
            return Err(Error::InvalidArgument("lambda2 must be > 0".into()));
        }
        if spec.h2 == 0.0 || !spec.h2.is_finite() {
            return Err(Error::InvalidArgument("h2 must be nonzero".into()));
        }
        let dz = 2.0 / QUAD_N as f64;
        let dp = 2.0 * PI / QUAD_N as f64;
        // shift by the largest exponent on the grid to avoid overflow
        let mut ex = Vec::with_capacity(QUAD_N * QUAD_N);
        for i in 0..QUAD_N {
            let z = -1.0 + (i as f64 + 0.5) * dz;
            for j in 0..QUAD_N {
                ex.push(spec.exponent(sphere_point(z, -PI + (j as f64 + 0.5) * dp)));
            }
        }
        if ex.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("Gibbs exponent".into()));
        }
        let shift = ex.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut rows = vec![0.0; QUAD_N];
        for (i, row) in rows.iter_mut().enumerate() {
            *row = ex[i * QUAD_N..(i + 1) * QUAD_N].iter().map(|e| (e - shift).exp()).sum::<f64>() * dz * dp;
        }
        let total: f64 = rows.iter().sum();
        let log_z = total.ln() + shift;
        let mut cdf_edges = Vec::with_capacity(QUAD_N + 1);
        let mut acc = 0.0;
        cdf_edges.push(0.0);
        for r in &rows {
            acc += r / total;
            cdf_edges.push(acc);
        }
        let max_density = (shift - log_z).exp();
        Ok(GibbsDensity { spec, log_z, max_density, cdf_edges })
    }

    pub fn spec(&self) -> &GibbsSpec {
        &self.spec
    }

    /// Largest density value over the quadrature nodes.
    pub fn max_density(&self) -> f64 {
        self.max_density
    }

    pub fn quadrature_cells(&self) -> usize {
        QUAD_N * QUAD_N
    }

    /// Quadrature sum of the normalised density over the grid (1 up to rounding).
    pub fn quadrature_total(&self) -> f64 {
        let dz = 2.0 / QUAD_N as f64;
        let dp = 2.0 * PI / QUAD_N as f64;
        let mut s = 0.0;
        for i in 0..QUAD_N {
            let z = -1.0 + (i as f64 + 0.5) * dz;
            for j in 0..QUAD_N {
                s += self.density(sphere_point(z, -PI + (j as f64 + 0.5) * dp));
            }
        }
        s * dz * dp
    }

    /// Exact draw by rejection from the uniform proposal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        // margin over the grid maximum, which may sit between nodes
        let envelope = 1.01 * self.max_density;
        loop {
            let v = uniform_on_sphere(rng);
            if rng.random::<f64>() * envelope <= self.density(v) {
                return v;
            }
        }
    }
}

impl SphereDensity for GibbsDensity {
    fn density(&self, v: Vec3) -> f64 {
        (self.spec.exponent(v) - self.log_z).exp()
    }

    fn z_cdf(&self, z: f64) -> f64 {
        let z = z.clamp(-1.0, 1.0);
        let pos = (z + 1.0) / 2.0 * QUAD_N as f64;
        let i = (pos.floor() as usize).min(QUAD_N - 1);
        let frac = pos - i as f64;
        self.cdf_edges[i] + frac * (self.cdf_edges[i + 1] - self.cdf_edges[i])
    }
}

pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let phi: f64 = rng.random::<f64>() * 2.0 * PI - PI;
    sphere_point(z, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::trajectory_rng;
    use crate::vec3::Mat3;

    fn reversed(p: AnisotropyParams) -> AnisotropyParams {
        AnisotropyParams { sign: AnisotropySign::Reversed, ..p }
    }

    #[test]
    fn drift_examples() {
        let p = AnisotropyParams {
            a: Mat3::diag([0.0, 0.0, 1.7]),
            ..AnisotropyParams::isotropic(0.4, 1.0)
        };
        assert_eq!(anisotropic_drift(SphereState { v: Vec3::E3 }, &p), Vec3::ZERO);

        let beta = 0.9;
        let p = reversed(AnisotropyParams {
            b: Vec3::new(0.0, 0.0, beta),
            ..AnisotropyParams::isotropic(0.0, 1.0)
        });
        let d = anisotropic_drift(SphereState { v: Vec3::E1 }, &p);
        assert!((d - Vec3::new(0.0, 0.0, beta)).max_abs() < 1e-15);
        let p = AnisotropyParams { sign: AnisotropySign::Dissipative, ..p };
        let d = anisotropic_drift(SphereState { v: Vec3::E1 }, &p);
        assert!((d + Vec3::new(0.0, 0.0, beta)).max_abs() < 1e-15);
    }

    #[test]
    fn steppers_preserve_norm() {
        let p = AnisotropyParams {
            a: Mat3::diag([0.3, -0.2, 2.0]),
            b: Vec3::new(0.1, 0.0, -0.2),
            ..AnisotropyParams::isotropic(0.5, 1.0)
        };
        let mut s = IncrementStream::new(5, 0, 1e-3);
        let mut v = SphereState::normalized(Vec3::new(0.2, 0.3, 0.9)).unwrap();
        let mut w = v;
        for _ in 0..10_000 {
            v = sde_step_b(v, &p, 1.3, s.vec3(), 1e-3);
            w = sde_step_a(w, Vec3::new(0.3, 0.1, 0.0), s.scalar(), &p, 1e-3);
            assert!((v.v.norm() - 1.0).abs() < 1e-12);
            assert!((w.v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_intensity_is_identity() {
        let v = SphereState::normalized(Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let iso = AnisotropyParams::isotropic(1.0, 1.0);
        assert_eq!(sde_step_b(v, &iso, 0.0, Vec3::new(0.1, 0.2, 0.3), 1e-3), v);
    }

    #[test]
    fn shape_a_poles_are_fixed() {
        let h1 = Vec3::new(0.0, 3.0, 4.0);
        let iso = AnisotropyParams::isotropic(0.3, 1.0);
        for start in [h1.normalized(), -h1.normalized()] {
            let mut v = SphereState { v: start };
            for db in [0.3, -1.2, 2.0] {
                v = sde_step_a(v, h1, db, &iso, 1e-3);
            }
            assert!((v.v - start).max_abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_density_value() {
        let spec = GibbsSpec {
            lambda2: 1.0,
            h2: 1.0,
            aniso: AnisotropyParams::isotropic(0.0, 1.0),
            domain_length: 1.0,
        };
        let g = GibbsDensity::new(spec).unwrap();
        let d = g.density(Vec3::new(0.6, 0.0, 0.8));
        assert!((d - 1.0 / (4.0 * PI)).abs() < 1e-12);
        assert!((g.z_cdf(0.25) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn gibbs_normalisation_and_displayed_form() {
        let spec = GibbsSpec {
            lambda2: 1.0,
            h2: 1.0,
            aniso: AnisotropyParams {
                a: Mat3::diag([0.0, 0.0, 2.0]),
                ..AnisotropyParams::isotropic(0.0, 1.0)
            },
            domain_length: 1.0,
        };
        let g = GibbsDensity::new(spec.clone()).unwrap();
        assert!(g.quadrature_cells() >= 100_000);
        assert!((g.quadrature_total() - 1.0).abs() < 1e-6);
        let v = Vec3::new(0.48, 0.6, 0.64);
        assert!((spec.exponent(v) - displayed_gibbs_exponent(v, &spec)).abs() < 1e-15);
        assert_eq!(g.z_cdf(-1.0), 0.0);
        assert!((g.z_cdf(1.0) - 1.0).abs() < 1e-12);
        assert!((g.z_cdf(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gibbs_rejects_zero_intensity() {
        let spec = GibbsSpec {
            lambda2: 1.0,
            h2: 0.0,
            aniso: AnisotropyParams::isotropic(0.0, 1.0),
            domain_length: 1.0,
        };
        assert!(GibbsDensity::new(spec).is_err());
    }

    #[test]
    fn rejection_sampler_matches_cdf() {
        let spec = GibbsSpec {
            lambda2: 1.0,
            h2: 1.0,
            aniso: AnisotropyParams {
                a: Mat3::diag([0.0, 0.0, 2.0]),
                ..AnisotropyParams::isotropic(0.0, 1.0)
            },
            domain_length: 1.0,
        };
        let g = GibbsDensity::new(spec).unwrap();
        let mut rng = trajectory_rng(1, 0);
        let n = 40_000;
        let below = (0..n).filter(|_| g.sample(&mut rng).z() <= 0.5).count() as f64 / n as f64;
        let p = g.z_cdf(0.5);
        assert!((below - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn cell_mass_default_matches_uniform() {
        struct Flat;
        impl SphereDensity for Flat {
            fn density(&self, _v: Vec3) -> f64 {
                1.0 / (4.0 * PI)
            }
            fn z_cdf(&self, z: f64) -> f64 {
                (z + 1.0) / 2.0
            }
        }
        let m = Flat.cell_mass(-0.5, 0.25, 0.0, 1.0);
        assert!((m - UniformSphere.cell_mass(-0.5, 0.25, 0.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn brownian_path_length_and_start() {
        let v0 = SphereState { v: Vec3::E3 };
        let path = spherical_brownian(v0, 1e-3, 100, 7);
        assert_eq!(path.len(), 101);
        assert_eq!(path[0], v0);
    }
}
