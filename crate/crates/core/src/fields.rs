//! Uniform grids, sphere-valued fields and the discrete differential operators
//! acting on them.
//!
//! Nodes cover the closed interval `[0, |D|]` with spacing `dx = |D| / (n - 1)`.
//! The null Neumann condition is realised by mirrored ghost nodes
//! (`u_{-1} = u_1`, `u_n = u_{n-2}`), so the central first derivative is exactly
//! zero at both endpoints. All spatial integrals use the composite trapezoid
//! rule.
//!
//! Two further discretisations appear:
//!
//! * the edge (forward-difference) Dirichlet form `Σ |u_{i+1} - u_i|² / dx`,
//!   which is the quantity reported as `‖∂ₓu‖²`. Its gradient with respect to
//!   the trapezoid inner product is exactly the mirrored three-point Laplacian,
//!   so it is the energy dissipated by the time steppers;
//! * second-order one-sided boundary stencils, used only by the residuals of
//!   pointwise identities that must not depend on a boundary condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spde::AnisotropyParams;
use crate::vec3::Vec3;

/// Tolerance on `| |u| - 1 |` accepted by [`SphereField`] constructors.
pub const SPHERE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_points: usize,
    length: f64,
    dx: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, length: f64) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes, got {n_points}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be > 0, got {length}")));
        }
        Ok(Grid1D {
            n_points,
            length,
            dx: length / (n_points - 1) as f64,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.length
        } else {
            i as f64 * self.dx
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.x(i))
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    /// Composite trapezoid rule for nodal values `f(i)`.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.n_points;
        let inner: f64 = (1..n - 1).map(&f).sum();
        self.dx * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    /// Sharp Poincaré(-Wirtinger) constant of the interval, `|D| / π`.
    pub fn poincare_constant(&self) -> f64 {
        self.length / std::f64::consts::PI
    }
}

/// A map from the grid nodes to the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereField {
    grid: Grid1D,
    values: Vec<Vec3>,
}

impl SphereField {
    /// Validates length, finiteness and the unit-norm constraint.
    pub fn new(grid: Grid1D, values: Vec<Vec3>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        for (node, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("field value at node {node}")));
            }
            let deviation = v.norm() - 1.0;
            if deviation.abs() > SPHERE_TOL {
                return Err(Error::NotOnSphere { node, deviation });
            }
        }
        Ok(SphereField { grid, values })
    }

    /// Samples `f` at the nodes and projects every value onto the sphere.
    pub fn from_fn_normalized(grid: Grid1D, f: impl Fn(f64) -> Vec3) -> Result<Self> {
        let values = grid.nodes().map(|x| f(x).normalized()).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid1D, v: Vec3) -> Result<Self> {
        Self::new(grid, vec![v.normalized(); grid.n_points()])
    }

    /// Wraps values without validation. Used by the time steppers, which
    /// maintain the constraint themselves.
    pub(crate) fn from_raw(grid: Grid1D, values: Vec<Vec3>) -> Self {
        SphereField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [Vec3] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Vec3> {
        self.values
    }

    /// `max_i | |u_i| - 1 |`.
    pub fn max_norm_deviation(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0_f64, |m, v| m.max((v.norm() - 1.0).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(Vec3) -> Vec3) -> Result<SphereField> {
        SphereField::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }
}

// ---------------------------------------------------------------------------
// slice-level stencils

/// Central first derivative with mirrored ghosts (zero at both endpoints).
pub fn d1_neumann(u: &[Vec3], dx: f64, out: &mut [Vec3]) {
    let n = u.len();
    let inv = 0.5 / dx;
    out[0] = Vec3::ZERO;
    out[n - 1] = Vec3::ZERO;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) * inv;
    }
}

/// Three-point second derivative with mirrored ghosts.
pub fn d2_neumann(u: &[Vec3], dx: f64, out: &mut [Vec3]) {
    let n = u.len();
    let inv = 1.0 / (dx * dx);
    out[0] = (u[1] - u[0]) * (2.0 * inv);
    out[n - 1] = (u[n - 2] - u[n - 1]) * (2.0 * inv);
    for i in 1..n - 1 {
        out[i] = (u[i + 1] + u[i - 1] - u[i] * 2.0) * inv;
    }
}

/// Central first derivative with second-order one-sided boundary stencils.
pub fn d1_one_sided(u: &[Vec3], dx: f64, out: &mut [Vec3]) {
    let n = u.len();
    let inv = 0.5 / dx;
    out[0] = (u[1] * 4.0 - u[0] * 3.0 - u[2]) * inv;
    out[n - 1] = (u[n - 1] * 3.0 - u[n - 2] * 4.0 + u[n - 3]) * inv;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) * inv;
    }
}

/// Three-point second derivative with second-order one-sided boundary
/// stencils (first order on the minimal three-node grid).
pub fn d2_one_sided(u: &[Vec3], dx: f64, out: &mut [Vec3]) {
    let n = u.len();
    let inv = 1.0 / (dx * dx);
    for i in 1..n - 1 {
        out[i] = (u[i + 1] + u[i - 1] - u[i] * 2.0) * inv;
    }
    if n >= 4 {
        out[0] = (u[0] * 2.0 - u[1] * 5.0 + u[2] * 4.0 - u[3]) * inv;
        out[n - 1] = (u[n - 1] * 2.0 - u[n - 2] * 5.0 + u[n - 3] * 4.0 - u[n - 4]) * inv;
    } else {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
}

/// Edge Dirichlet form `Σ_i |u_{i+1} - u_i|² / dx`, the discrete `‖∂ₓu‖²_{L²}`.
pub fn dirichlet_norm_sq(u: &[Vec3], dx: f64) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]).norm_sq()).sum::<f64>() / dx
}

/// Trapezoid `∫ |f|²` of nodal vectors.
pub fn l2_norm_sq(grid: &Grid1D, f: &[Vec3]) -> f64 {
    grid.integrate(|i| f[i].norm_sq())
}

// ---------------------------------------------------------------------------
// field-level operations

pub fn first_derivative(u: &SphereField) -> Vec<Vec3> {
    let mut out = vec![Vec3::ZERO; u.values.len()];
    d1_neumann(&u.values, u.grid.dx(), &mut out);
    out
}

pub fn second_derivative(u: &SphereField) -> Vec<Vec3> {
    let mut out = vec![Vec3::ZERO; u.values.len()];
    d2_neumann(&u.values, u.grid.dx(), &mut out);
    out
}

/// `‖∂ₓu‖²_{L²}` as the edge Dirichlet form.
pub fn grad_norm_sq(u: &SphereField) -> f64 {
    dirichlet_norm_sq(&u.values, u.grid.dx())
}

/// `½∫ (|∂ₓu|² + (A_sym u)·u + 2 b·u) dx`, i.e. the exchange energy plus the
/// anisotropic density `½ (A u)·u + b·u` whose gradient is `sym(A) u + b`.
pub fn energy(u: &SphereField, aniso: &AnisotropyParams) -> f64 {
    let exchange = 0.5 * grad_norm_sq(u);
    let a = aniso.a.symmetric_part();
    let b = aniso.b;
    let v = &u.values;
    let anisotropic = u
        .grid
        .integrate(|i| 0.5 * a.apply(v[i]).dot(v[i]) + b.dot(v[i]));
    exchange + anisotropic
}

/// `(1/|D|) ∫ u dx`.
pub fn spatial_average(u: &SphereField) -> Vec3 {
    let g = &u.grid;
    let v = &u.values;
    let s = Vec3::new(
        g.integrate(|i| v[i].x()),
        g.integrate(|i| v[i].y()),
        g.integrate(|i| v[i].z()),
    );
    s * (1.0 / g.length())
}

/// `max_i |u_i · (∂ₓu)_i|`.
pub fn orthogonality_residual(u: &SphereField) -> f64 {
    let d = first_derivative(u);
    u.values
        .iter()
        .zip(&d)
        .fold(0.0_f64, |m, (a, b)| m.max(a.dot(*b).abs()))
}

/// Both sides of `‖∂²ₓu‖² = ‖∂ₓu‖⁴_{L⁴} + ‖u × ∂²ₓu‖²`, evaluated with
/// one-sided boundary stencils.
pub fn laplacian_identity_sides(u: &SphereField) -> (f64, f64) {
    let n = u.values.len();
    let dx = u.grid.dx();
    let mut d1 = vec![Vec3::ZERO; n];
    let mut d2 = vec![Vec3::ZERO; n];
    d1_one_sided(&u.values, dx, &mut d1);
    d2_one_sided(&u.values, dx, &mut d2);
    let g = &u.grid;
    let lhs = g.integrate(|i| d2[i].norm_sq());
    let quartic = g.integrate(|i| d1[i].norm_sq().powi(2));
    let cross = g.integrate(|i| u.values[i].cross(d2[i]).norm_sq());
    (lhs, quartic + cross)
}

pub fn laplacian_identity_residual(u: &SphereField) -> f64 {
    let (lhs, rhs) = laplacian_identity_sides(u);
    (lhs - rhs).abs()
}

/// `‖u - ⟨u⟩‖_{L²}` and `C_p ‖∂ₓu‖_{L²}`; Poincaré–Wirtinger asserts the
/// first is at most the second.
pub fn poincare_wirtinger_sides(u: &SphereField) -> (f64, f64) {
    let mean = spatial_average(u);
    let g = &u.grid;
    let lhs = g.integrate(|i| (u.values[i] - mean).norm_sq()).sqrt();
    let rhs = g.poincare_constant() * grad_norm_sq(u).sqrt();
    (lhs, rhs)
}

/// `‖u - v‖_{H¹}` with the trapezoid `L²` part and the edge Dirichlet part.
pub fn h1_distance(u: &SphereField, v: &SphereField) -> f64 {
    let diff: Vec<Vec3> = u.values.iter().zip(&v.values).map(|(a, b)| *a - *b).collect();
    let l2 = l2_norm_sq(&u.grid, &diff);
    (l2 + dirichlet_norm_sq(&diff, u.grid.dx())).sqrt()
}
