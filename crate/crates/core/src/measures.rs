//! Time-averaged empirical measures on S² over an equal-area grid.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde_sphere::SphereDensity;
use crate::vec3::Vec3;

/// Histogram over `n_z_bands` uniform bands in `z = cos θ` times `n_phi`
/// uniform longitude sectors; every bin has area `4π / (n_z_bands n_phi)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalSphereMeasure {
    n_z_bands: usize,
    n_phi: usize,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalSphereMeasure {
    pub fn new(n_z_bands: usize, n_phi: usize) -> Result<Self> {
        if n_z_bands == 0 || n_phi == 0 {
            return Err(Error::InvalidArgument("bin counts must be positive".into()));
        }
        Ok(EmpiricalSphereMeasure {
            n_z_bands,
            n_phi,
            counts: vec![0; n_z_bands * n_phi],
            total: 0,
        })
    }

    pub fn n_z_bands(&self) -> usize {
        self.n_z_bands
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, band: usize, sector: usize) -> u64 {
        self.counts[band * self.n_phi + sector]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `(band, sector)` of `v`. The poles have `atan2(0, 0) = 0`.
    pub fn bin_of(&self, v: Vec3) -> (usize, usize) {
        let band = ((v.z() + 1.0) / 2.0 * self.n_z_bands as f64).floor();
        let sector = ((v.y().atan2(v.x()) + PI) / (2.0 * PI) * self.n_phi as f64).floor();
        (
            (band.max(0.0) as usize).min(self.n_z_bands - 1),
            (sector.max(0.0) as usize).min(self.n_phi - 1),
        )
    }

    pub fn accumulate(&mut self, v: Vec3, weight: u64) {
        let (b, s) = self.bin_of(v);
        self.counts[b * self.n_phi + s] += weight;
        self.total += weight;
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut m = self.clone();
        m.merge_from(other)?;
        Ok(m)
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if (self.n_z_bands, self.n_phi) != (other.n_z_bands, other.n_phi) {
            return Err(Error::InvalidArgument("cannot merge measures on different grids".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Closed-form surface area of a bin.
    pub fn bin_area(&self, band: usize, sector: usize) -> f64 {
        let (z0, z1, p0, p1) = self.bin_bounds(band, sector);
        (z1 - z0) * (p1 - p0)
    }

    /// `(z0, z1, φ0, φ1)`, with `φ ∈ [-π, π)`.
    pub fn bin_bounds(&self, band: usize, sector: usize) -> (f64, f64, f64, f64) {
        let dz = 2.0 / self.n_z_bands as f64;
        let dp = 2.0 * PI / self.n_phi as f64;
        (
            -1.0 + band as f64 * dz,
            -1.0 + (band + 1) as f64 * dz,
            -PI + sector as f64 * dp,
            -PI + (sector + 1) as f64 * dp,
        )
    }

    pub fn empirical_mass(&self, band: usize, sector: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(band, sector) as f64 / self.total as f64
        }
    }

    pub fn reference_masses(&self, density: &dyn SphereDensity) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_bins());
        for b in 0..self.n_z_bands {
            for s in 0..self.n_phi {
                let (z0, z1, p0, p1) = self.bin_bounds(b, s);
                out.push(density.cell_mass(z0, z1, p0, p1));
            }
        }
        out
    }

    /// Writes `band,sector,count,area,empirical_mass,reference_mass` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, density: &dyn SphereDensity) -> Result<()> {
        let reference = self.reference_masses(density);
        writeln!(w, "band,sector,count,area,empirical_mass,reference_mass")?;
        for b in 0..self.n_z_bands {
            for s in 0..self.n_phi {
                writeln!(
                    w,
                    "{b},{s},{},{:e},{:e},{:e}",
                    self.count(b, s),
                    self.bin_area(b, s),
                    self.empirical_mass(b, s),
                    reference[b * self.n_phi + s]
                )?;
            }
        }
        Ok(())
    }
}

/// `½ Σ |empirical − reference|` over bins.
pub fn tv_distance(m: &EmpiricalSphereMeasure, density: &dyn SphereDensity) -> Result<f64> {
    if m.total() == 0 {
        return Err(Error::Empty("measure"));
    }
    let reference = m.reference_masses(density);
    let tv = 0.5
        * m.counts()
            .iter()
            .zip(&reference)
            .map(|(&c, &r)| (c as f64 / m.total() as f64 - r).abs())
            .sum::<f64>();
    Ok(tv.min(1.0))
}

/// Sup over band edges of the gap between empirical and reference z-CDFs.
pub fn ks_z_marginal(m: &EmpiricalSphereMeasure, z_cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if m.total() == 0 {
        return Err(Error::Empty("measure"));
    }
    let mut acc = 0u64;
    let mut ks = 0.0_f64;
    for b in 0..m.n_z_bands() {
        acc += (0..m.n_phi()).map(|s| m.count(b, s)).sum::<u64>();
        let z = -1.0 + 2.0 * (b + 1) as f64 / m.n_z_bands() as f64;
        ks = ks.max((acc as f64 / m.total() as f64 - z_cdf(z)).abs());
    }
    Ok(ks.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDistanceReport {
    pub tv: f64,
    pub ks_z: f64,
    pub sample_count: u64,
}

pub fn distance_report(m: &EmpiricalSphereMeasure, density: &dyn SphereDensity) -> Result<MeasureDistanceReport> {
    Ok(MeasureDistanceReport {
        tv: tv_distance(m, density)?,
        ks_z: ks_z_marginal(m, |z| density.z_cdf(z))?,
        sample_count: m.total(),
    })
}

/// KS critical value at the 1% level, `1.63 / √n`.
pub fn ks_critical_1pct(n_eff: f64) -> f64 {
    1.63 / n_eff.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_sphere::{sphere_point, UniformSphere};

    #[test]
    fn bin_examples() {
        let m = EmpiricalSphereMeasure::new(4, 4).unwrap();
        assert_eq!(m.bin_of(Vec3::E1), (2, 2));
        assert_eq!(m.bin_of(Vec3::E3), (3, 2));
        assert_eq!(m.bin_of(-Vec3::E3).0, 0);
        let v = Vec3::new(0.3, -0.4, 0.5).normalized();
        let (b1, _) = m.bin_of(v);
        let (b2, _) = m.bin_of(-v);
        assert_eq!(b1 + b2, 3);
    }

    #[test]
    fn dirac_measure() {
        let mut m = EmpiricalSphereMeasure::new(8, 8).unwrap();
        for _ in 0..50 {
            m.accumulate(Vec3::new(0.0, 0.6, 0.8), 1);
        }
        assert_eq!(m.counts().iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(m.counts().iter().max(), Some(&50));
        let ks = ks_z_marginal(&m, |z| UniformSphere.z_cdf(z)).unwrap();
        assert!((ks - 0.875).abs() < 1e-12);
    }

    #[test]
    fn merge_adds_totals_and_rejects_mismatch() {
        let mut a = EmpiricalSphereMeasure::new(4, 4).unwrap();
        let mut b = EmpiricalSphereMeasure::new(4, 4).unwrap();
        a.accumulate(Vec3::E1, 3);
        b.accumulate(Vec3::E2, 2);
        let ab = a.merge(&b).unwrap();
        assert_eq!(ab.total(), 5);
        assert_eq!(ab, b.merge(&a).unwrap());
        assert!(a.merge(&EmpiricalSphereMeasure::new(2, 4).unwrap()).is_err());
    }

    #[test]
    fn equal_areas() {
        let m = EmpiricalSphereMeasure::new(7, 5).unwrap();
        let target = 4.0 * PI / 35.0;
        for b in 0..7 {
            for s in 0..5 {
                assert!((m.bin_area(b, s) - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tv_zero_and_one() {
        let mut m = EmpiricalSphereMeasure::new(2, 2).unwrap();
        for b in 0..2 {
            for s in 0..2 {
                let (z0, z1, p0, p1) = m.bin_bounds(b, s);
                m.accumulate(sphere_point(0.5 * (z0 + z1), 0.5 * (p0 + p1)), 10);
            }
        }
        assert!(tv_distance(&m, &UniformSphere).unwrap() < 1e-15);

        struct Cap;
        impl SphereDensity for Cap {
            fn density(&self, v: Vec3) -> f64 {
                if v.z() > 0.0 { 1.0 / (2.0 * PI) } else { 0.0 }
            }
            fn cell_mass(&self, z0: f64, z1: f64, p0: f64, p1: f64) -> f64 {
                (z1.max(0.0) - z0.max(0.0)) * (p1 - p0) / (2.0 * PI)
            }
            fn z_cdf(&self, z: f64) -> f64 {
                z.max(0.0)
            }
        }
        let mut south = EmpiricalSphereMeasure::new(2, 2).unwrap();
        south.accumulate(-Vec3::E3, 5);
        assert!((tv_distance(&south, &Cap).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_measure_is_an_error() {
        let m = EmpiricalSphereMeasure::new(2, 2).unwrap();
        assert!(matches!(tv_distance(&m, &UniformSphere), Err(Error::Empty(_))));
        assert!(ks_z_marginal(&m, |z| z).is_err());
    }

    #[test]
    fn quantile_samples_hit_the_discretisation_floor() {
        let n = 1000;
        let mut m = EmpiricalSphereMeasure::new(16, 4).unwrap();
        for k in 0..n {
            let z = -1.0 + 2.0 * (k as f64 + 0.5) / n as f64;
            m.accumulate(sphere_point(z, 0.1), 1);
        }
        let ks = ks_z_marginal(&m, |z| UniformSphere.z_cdf(z)).unwrap();
        assert!(ks <= 1.0 / 16.0);
    }

    #[test]
    fn csv_dump_shape() {
        let mut m = EmpiricalSphereMeasure::new(3, 2).unwrap();
        m.accumulate(Vec3::E1, 1);
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &UniformSphere).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("band,sector,count,area,empirical_mass,reference_mass"));
        assert_eq!(text.lines().count(), 7);
    }
}
