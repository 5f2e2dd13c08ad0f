//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use sllg_core::{Grid1D, SphereField, Vec3};

/// A smooth non-constant field on `n` nodes of `[0, len]`.
pub fn smooth_field(n: usize, len: f64) -> SphereField {
    let grid = Grid1D::new(n, len).expect("valid grid");
    SphereField::from_fn_normalized(grid, |x| {
        let c = (PI * x / len).cos();
        Vec3::new(0.8 * c, 0.5 * (2.0 * PI * x / len).cos(), 0.6 + 0.3 * c)
    })
    .expect("nonzero profile")
}
