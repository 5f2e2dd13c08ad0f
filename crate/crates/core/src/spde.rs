//! Field dynamics of the stochastic LLG equation on a 1D grid.
//!
//! The deterministic part is `λ₁ u × H - λ₂ u × (u × H)` with the effective
//! field `H = ∂²ₓu - g'(u)`, `g'(u) = A u + b` (see [`AnisotropySign`]); the
//! noise is either `u × h₁ ∘ dB` (shape A) or `h₂ u × ∘ dB̄` (shape B). Both
//! noise shapes act as infinitesimal rotations, so their exact flow over one
//! step is a rotation of every node about a fixed axis.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, d1_one_sided, d2_neumann, d2_one_sided, dirichlet_norm_sq, Grid1D, SphereField};
use crate::noise::{first_level, BrownianPath, IncrementStream, NoiseIncrement, NoiseShape};
use crate::vec3::{Mat3, Vec3};

/// Sign with which the anisotropic field enters the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnisotropySign {
    /// `H = ∂²ₓu - g'(u)`: the anisotropic terms descend the energy and the
    /// constant-field law is `∝ exp(-(λ₂/h₂²)(vᵀAv + 2b·v))`.
    #[default]
    Dissipative,
    /// `H = ∂²ₓu + g'(u)`: the drift `+λ₁u×g'(u) - λ₂u×(u×g'(u))`.
    Reversed,
}

impl AnisotropySign {
    #[inline]
    fn factor(self) -> f64 {
        match self {
            AnisotropySign::Dissipative => -1.0,
            AnisotropySign::Reversed => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyParams {
    pub a: Mat3,
    pub b: Vec3,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub sign: AnisotropySign,
}

impl AnisotropyParams {
    /// No anisotropy (`g ≡ 0`).
    pub fn isotropic(lambda1: f64, lambda2: f64) -> Self {
        AnisotropyParams {
            a: Mat3::ZERO,
            b: Vec3::ZERO,
            lambda1,
            lambda2,
            sign: AnisotropySign::Dissipative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda2 must be > 0, got {}",
                self.lambda2
            )));
        }
        if !self.lambda1.is_finite() || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::NonFinite("anisotropy parameters".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn g_prime(&self, v: Vec3) -> Vec3 {
        self.a.apply(v) + self.b
    }

    pub fn has_anisotropy(&self) -> bool {
        self.a.max_abs() > 0.0 || self.b.max_abs() > 0.0
    }

    /// `Ḡ = 2 sup_{i,j} |A_ij|² + |b|`.
    pub fn g_bar(&self) -> f64 {
        2.0 * self.a.max_abs().powi(2) + self.b.norm()
    }

    /// Effective field at a node given `∂²ₓu` there.
    #[inline]
    fn effective_field(&self, u: Vec3, lap: Vec3) -> Vec3 {
        lap + self.g_prime(u) * self.sign.factor()
    }

    /// `λ₁ u × H - λ₂ u × (u × H)`.
    #[inline]
    pub(crate) fn llg(&self, u: Vec3, h: Vec3) -> Vec3 {
        let c = u.cross(h);
        c * self.lambda1 - u.cross(c) * self.lambda2
    }
}

/// Deterministic drift at every node.
pub fn drift(u: &SphereField, p: &AnisotropyParams) -> Vec<Vec3> {
    let lap = fields::second_derivative(u);
    u.values()
        .iter()
        .zip(&lap)
        .map(|(&v, &l)| p.llg(v, p.effective_field(v, l)))
        .collect()
}

/// `‖-u × (u × ∂²ₓu) - (∂²ₓu + u |∂ₓu|²)‖_{L²}`, with one-sided boundary
/// stencils so that the pointwise identity is tested independently of the
/// boundary condition.
pub fn drift_equivalent_residual(u: &SphereField) -> f64 {
    let n = u.grid().n_points();
    let dx = u.grid().dx();
    let mut d1 = vec![Vec3::ZERO; n];
    let mut d2 = vec![Vec3::ZERO; n];
    d1_one_sided(u.values(), dx, &mut d1);
    d2_one_sided(u.values(), dx, &mut d2);
    let v = u.values();
    u.grid()
        .integrate(|i| {
            let cross_form = -v[i].cross(v[i].cross(d2[i]));
            let expanded = d2[i] + v[i] * d1[i].norm_sq();
            (cross_form - expanded).norm_sq()
        })
        .sqrt()
}

/// Rotation `v ↦ v cos θ + (v × ê) sin θ + ê (ê·v)(1 - cos θ)`, the exact
/// flow of `v̇ = θ̇ v × ê` for a unit axis `ê`.
pub fn rodrigues_matrix(axis: Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::IDENTITY * c + first_level(axis) * s + axis.outer(axis) * (1.0 - c)
}

#[inline]
pub fn rodrigues(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + v.cross(axis) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Applies a per-node rotation `(unit axis, angle)`.
pub fn rotation_step(u: &SphereField, axis_angle: &[(Vec3, f64)]) -> Result<SphereField> {
    if axis_angle.len() != u.grid().n_points() {
        return Err(Error::InvalidArgument("one (axis, angle) pair per node".into()));
    }
    let values = u
        .values()
        .iter()
        .zip(axis_angle)
        .map(|(&v, &(axis, angle))| rodrigues(v, axis, angle))
        .collect();
    Ok(SphereField::from_raw(*u.grid(), values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Half rotation, explicit drift (optionally renormalised), half rotation.
    #[default]
    StrangRotation,
    /// Euler–Maruyama on the Itô form, then nodewise projection.
    ItoEulerProject,
    /// Heun predictor–corrector on the Stratonovich form, then projection.
    StratonovichHeunProject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_true")]
    pub renormalize_after_drift: bool,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
}

fn default_true() -> bool {
    true
}

fn default_safety() -> f64 {
    0.9
}

impl SolverConfig {
    pub fn new(dt: f64) -> Self {
        SolverConfig {
            dt,
            scheme: Scheme::StrangRotation,
            renormalize_after_drift: true,
            cfl_safety: default_safety(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        Ok(())
    }
}

/// Largest admissible explicit step, `safety · λ₂ dx² / (2 (λ₁² + λ₂²))`.
///
/// The linearised drift has symbol `(-λ₂ + iλ₁) k²` with `k² ≤ 4/dx²`; the
/// Euler factor stays in the unit disc iff `dt k² (λ₁² + λ₂²) ≤ 2λ₂`. For
/// `λ₁ = 0` this is the heat-equation bound `dx² / (2λ₂)`.
pub fn max_stable_dt(p: &AnisotropyParams, grid: &Grid1D, safety: f64) -> f64 {
    safety * p.lambda2 * grid.dx() * grid.dx() / (2.0 * (p.lambda1 * p.lambda1 + p.lambda2 * p.lambda2))
}

pub fn cfl_check(p: &AnisotropyParams, grid: &Grid1D, dt: f64, safety: f64) -> Result<()> {
    let max_dt = max_stable_dt(p, grid, safety);
    if dt <= max_dt {
        Ok(())
    } else {
        Err(Error::Cfl { dt, max_dt })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub g_bar: f64,
    /// `λ₂ / (2 C_p (2λ₂ + |λ₁|))`.
    pub threshold: f64,
    /// `Ḡ / threshold`; the condition holds iff this is below 1.
    pub ratio: f64,
    pub pass: bool,
}

pub fn smallness_check(p: &AnisotropyParams, poincare_constant: f64) -> SmallnessReport {
    let g_bar = p.g_bar();
    let threshold =
        p.lambda2 / (2.0 * poincare_constant * (2.0 * p.lambda2 + p.lambda1.abs()));
    SmallnessReport {
        g_bar,
        threshold,
        ratio: g_bar / threshold,
        pass: g_bar < threshold,
    }
}

/// Supplies one noise increment per step.
pub trait IncrementSource {
    fn next_increment(&mut self, shape: &NoiseShape) -> NoiseIncrement;
}

impl IncrementSource for IncrementStream {
    fn next_increment(&mut self, shape: &NoiseShape) -> NoiseIncrement {
        NoiseIncrement::draw(shape, self)
    }
}

/// No noise.
pub struct Quiet;

impl IncrementSource for Quiet {
    fn next_increment(&mut self, shape: &NoiseShape) -> NoiseIncrement {
        NoiseIncrement::zero_for(shape)
    }
}

/// Replays a recorded path step by step (zero once exhausted).
pub struct PathReplay<'a> {
    path: &'a BrownianPath,
    next: usize,
}

impl<'a> PathReplay<'a> {
    pub fn new(path: &'a BrownianPath) -> Self {
        PathReplay { path, next: 0 }
    }
}

impl IncrementSource for PathReplay<'_> {
    fn next_increment(&mut self, shape: &NoiseShape) -> NoiseIncrement {
        if self.next >= self.path.n_steps() {
            return NoiseIncrement::zero_for(shape);
        }
        let inc = NoiseIncrement::from_path(self.path, self.next);
        self.next += 1;
        inc
    }
}

/// Advances a [`SphereField`] by single steps of a fixed scheme.
pub struct Stepper {
    grid: Grid1D,
    params: AnisotropyParams,
    shape: NoiseShape,
    cfg: SolverConfig,
    constant_noise: bool,
    lap: Vec<Vec3>,
    f0: Vec<Vec3>,
    pred: Vec<Vec3>,
    steps: usize,
}

impl Stepper {
    /// Validates the parameters and the stability gate.
    pub fn new(grid: Grid1D, params: AnisotropyParams, shape: NoiseShape, cfg: SolverConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        if shape.n_points() != grid.n_points() {
            return Err(Error::InvalidArgument("noise profile length must match the grid".into()));
        }
        if !shape.is_finite() {
            return Err(Error::NonFinite("noise profile".into()));
        }
        cfl_check(&params, &grid, cfg.dt, cfg.cfl_safety)?;
        let n = grid.n_points();
        Ok(Stepper {
            constant_noise: shape.is_spatially_constant(),
            grid,
            params,
            shape,
            cfg,
            lap: vec![Vec3::ZERO; n],
            f0: vec![Vec3::ZERO; n],
            pred: vec![Vec3::ZERO; n],
            steps: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn params(&self) -> &AnisotropyParams {
        &self.params
    }

    pub fn shape(&self) -> &NoiseShape {
        &self.shape
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, u: &mut SphereField, inc: NoiseIncrement) -> Result<()> {
        if u.grid().n_points() != self.grid.n_points() {
            return Err(Error::InvalidArgument("field does not match the stepper grid".into()));
        }
        match self.cfg.scheme {
            Scheme::StrangRotation => self.strang(u.values_mut(), inc),
            Scheme::ItoEulerProject => self.ito_euler(u.values_mut(), inc),
            Scheme::StratonovichHeunProject => self.heun(u.values_mut(), inc),
        }
        self.steps += 1;
        if !u.is_finite() {
            return Err(Error::BlowUp {
                step: self.steps,
                time: self.steps as f64 * self.cfg.dt,
            });
        }
        Ok(())
    }

    fn drift_into(&mut self, u: &[Vec3], out_is_pred: bool) {
        d2_neumann(u, self.grid.dx(), &mut self.lap);
        let out = if out_is_pred { &mut self.pred } else { &mut self.f0 };
        for ((o, &v), &l) in out.iter_mut().zip(u).zip(&self.lap) {
            *o = self.params.llg(v, self.params.effective_field(v, l));
        }
    }

    fn strang(&mut self, u: &mut [Vec3], inc: NoiseIncrement) {
        rotate_by_noise(u, &self.shape, inc, 0.5, self.constant_noise);
        self.drift_into(u, false);
        let dt = self.cfg.dt;
        for (v, f) in u.iter_mut().zip(&self.f0) {
            *v += *f * dt;
            if self.cfg.renormalize_after_drift {
                *v = v.normalized();
            }
        }
        rotate_by_noise(u, &self.shape, inc, 0.5, self.constant_noise);
    }

    fn ito_euler(&mut self, u: &mut [Vec3], inc: NoiseIncrement) {
        self.drift_into(u, false);
        let dt = self.cfg.dt;
        for (i, (v, f)) in u.iter_mut().zip(&self.f0).enumerate() {
            let corr = ito_supplement(&self.shape, i, *v);
            *v = (*v + (*f + corr) * dt + noise_term(&self.shape, i, *v, inc)).normalized();
        }
    }

    fn heun(&mut self, u: &mut [Vec3], inc: NoiseIncrement) {
        let dt = self.cfg.dt;
        self.drift_into(u, false);
        let mut pred = std::mem::take(&mut self.pred);
        for (i, (p, (&v, &f))) in pred.iter_mut().zip(u.iter().zip(&self.f0)).enumerate() {
            *p = v + f * dt + noise_term(&self.shape, i, v, inc);
        }
        self.pred = pred;
        let predictor = self.pred.clone();
        self.drift_into(&predictor, true);
        for (i, v) in u.iter_mut().enumerate() {
            let g0 = noise_term(&self.shape, i, *v, inc);
            let g1 = noise_term(&self.shape, i, predictor[i], inc);
            *v = (*v + (self.f0[i] + self.pred[i]) * (0.5 * dt) + (g0 + g1) * 0.5).normalized();
        }
    }
}

/// `G(v) dB` at node `i`.
#[inline]
fn noise_term(shape: &NoiseShape, i: usize, v: Vec3, inc: NoiseIncrement) -> Vec3 {
    match (shape, inc) {
        (NoiseShape::ShapeA { h1 }, NoiseIncrement::Scalar(db)) => v.cross(h1[i]) * db,
        (NoiseShape::ShapeB { h2 }, NoiseIncrement::Vector(dw)) => v.cross(dw) * h2[i],
        _ => panic!("noise increment does not match the noise shape"),
    }
}

/// Itô supplement `½ Σ_k G_k(G_k v)` at node `i`.
#[inline]
fn ito_supplement(shape: &NoiseShape, i: usize, v: Vec3) -> Vec3 {
    match shape {
        NoiseShape::ShapeA { h1 } => {
            let h = h1[i];
            (h * v.dot(h) - v * h.norm_sq()) * 0.5
        }
        NoiseShape::ShapeB { h2 } => crate::noise::ito_correction(v, h2[i] * h2[i]),
    }
}

/// Exact flow of the noise over `fraction` of one increment.
pub(crate) fn rotate_by_noise(u: &mut [Vec3], shape: &NoiseShape, inc: NoiseIncrement, fraction: f64, constant: bool) {
    match (shape, inc) {
        (NoiseShape::ShapeB { h2 }, NoiseIncrement::Vector(dw)) => {
            let m = dw.norm();
            if m == 0.0 {
                return;
            }
            let axis = dw * (1.0 / m);
            if constant {
                let r = rodrigues_matrix(axis, h2[0] * m * fraction);
                u.iter_mut().for_each(|v| *v = r.apply(*v));
            } else {
                for (v, &h) in u.iter_mut().zip(h2) {
                    *v = rodrigues(*v, axis, h * m * fraction);
                }
            }
        }
        (NoiseShape::ShapeA { h1 }, NoiseIncrement::Scalar(db)) => {
            if db == 0.0 {
                return;
            }
            if constant {
                let n = h1[0].norm();
                if n == 0.0 {
                    return;
                }
                let r = rodrigues_matrix(h1[0] * (1.0 / n), n * db * fraction);
                u.iter_mut().for_each(|v| *v = r.apply(*v));
            } else {
                for (v, &h) in u.iter_mut().zip(h1) {
                    let n = h.norm();
                    if n > 0.0 {
                        *v = rodrigues(*v, h * (1.0 / n), n * db * fraction);
                    }
                }
            }
        }
        _ => panic!("noise increment does not match the noise shape"),
    }
}

// ---------------------------------------------------------------------------
// trajectories

/// Horizon and sampling of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub horizon: f64,
    /// Length of the pasted windows; the run restarts each window from the
    /// end state of the previous one and always records a summary row there.
    pub window: f64,
    /// Steps between summary rows (0: only window ends).
    pub summary_stride: usize,
    /// Steps between stored snapshots (0: none besides the initial state).
    pub snapshot_stride: usize,
}

impl SimulationOptions {
    pub fn new(horizon: f64) -> Self {
        SimulationOptions {
            horizon,
            window: horizon.max(f64::MIN_POSITIVE),
            summary_stride: 1,
            snapshot_stride: 0,
        }
    }
}

/// Scalar observables of a field, the integrands of the energy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observables {
    /// `‖∂ₓu‖²_{L²}` (edge form).
    pub grad_norm_sq: f64,
    /// `‖u × ∂²ₓu‖²_{L²}`.
    pub cross_lap_sq: f64,
    /// `‖u × ∂ₓu‖²_{L²}` (edge form, `|u_i × u_{i+1}|² / dx`).
    pub cross_grad_sq: f64,
    /// `‖∂²ₓu‖_{L²}^{1/2}`.
    pub lap_half: f64,
}

pub fn observables(u: &SphereField, lap_buf: &mut [Vec3]) -> Observables {
    let g = u.grid();
    let v = u.values();
    d2_neumann(v, g.dx(), lap_buf);
    let lap = &*lap_buf;
    let cross_lap_sq = g.integrate(|i| v[i].cross(lap[i]).norm_sq());
    let lap_sq = g.integrate(|i| lap[i].norm_sq());
    let cross_grad_sq = v.windows(2).map(|w| w[0].cross(w[1]).norm_sq()).sum::<f64>() / g.dx();
    Observables {
        grad_norm_sq: dirichlet_norm_sq(v, g.dx()),
        cross_lap_sq,
        cross_grad_sq,
        lap_half: lap_sq.sqrt().sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time: f64,
    pub grad_norm_sq: f64,
    /// `∫₀ᵗ ‖u × ∂²ₓu‖² dr`.
    pub cross_lap_int: f64,
    /// `∫₀ᵗ ‖u × ∂ₓu‖² dr`.
    pub cross_grad_int: f64,
    /// `∫₀ᵗ ‖∂²ₓu‖^{1/2} dr`.
    pub lap_half_int: f64,
    pub energy: f64,
    pub mean: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub summary: Vec<SummaryRow>,
    pub snapshots: Vec<(f64, SphereField)>,
    /// Largest per-step relative growth of `‖∂ₓu‖_{L²}`.
    pub max_grad_growth: f64,
    pub max_norm_deviation: f64,
    pub final_state: SphereField,
}

impl TrajectoryRecord {
    pub fn final_time(&self) -> f64 {
        self.summary.last().map_or(0.0, |r| r.time)
    }

    /// Writes `time,node_index,u1,u2,u3` rows for every snapshot.
    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,node_index,u1,u2,u3")?;
        for (t, field) in &self.snapshots {
            for (i, v) in field.values().iter().enumerate() {
                writeln!(w, "{t:e},{i},{:e},{:e},{:e}", v.x(), v.y(), v.z())?;
            }
        }
        Ok(())
    }

    /// Writes `time,grad_norm_sq,cross_lap_int,energy` rows.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,grad_norm_sq,cross_lap_int,energy")?;
        for r in &self.summary {
            writeln!(w, "{:e},{:e},{:e},{:e}", r.time, r.grad_norm_sq, r.cross_lap_int, r.energy)?;
        }
        Ok(())
    }
}

/// Runs `u0` to `opts.horizon`, drawing increments from `noise`.
pub fn simulate(
    u0: &SphereField,
    p: &AnisotropyParams,
    shape: &NoiseShape,
    cfg: &SolverConfig,
    opts: &SimulationOptions,
    noise: &mut dyn IncrementSource,
) -> Result<TrajectoryRecord> {
    if !(opts.horizon >= 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {}", opts.horizon)));
    }
    let mut stepper = Stepper::new(*u0.grid(), p.clone(), shape.clone(), cfg.clone())?;
    let dt = cfg.dt;
    let n_steps = (opts.horizon / dt).round() as usize;
    let window_steps = ((opts.window / dt).round() as usize).max(1);

    let mut u = u0.clone();
    let mut lap = vec![Vec3::ZERO; u.grid().n_points()];
    let mut obs = observables(&u, &mut lap);
    let mut acc = SummaryRow {
        time: 0.0,
        grad_norm_sq: obs.grad_norm_sq,
        cross_lap_int: 0.0,
        cross_grad_int: 0.0,
        lap_half_int: 0.0,
        energy: fields::energy(&u, p),
        mean: fields::spatial_average(&u),
    };
    let mut summary = vec![acc.clone()];
    let mut snapshots = vec![(0.0, u.clone())];
    let mut max_grad_growth = 0.0_f64;
    let mut max_norm_deviation = u.max_norm_deviation();

    let mut done = 0usize;
    while done < n_steps {
        // one pasted window
        let end = (done + window_steps).min(n_steps);
        for k in done..end {
            let inc = noise.next_increment(shape);
            stepper.step(&mut u, inc)?;
            let next = observables(&u, &mut lap);
            acc.cross_lap_int += 0.5 * dt * (obs.cross_lap_sq + next.cross_lap_sq);
            acc.cross_grad_int += 0.5 * dt * (obs.cross_grad_sq + next.cross_grad_sq);
            acc.lap_half_int += 0.5 * dt * (obs.lap_half + next.lap_half);
            let (g0, g1) = (obs.grad_norm_sq.sqrt(), next.grad_norm_sq.sqrt());
            let growth = if g0 > 0.0 { (g1 - g0) / g0 } else { g1 };
            max_grad_growth = max_grad_growth.max(growth);
            obs = next;
            max_norm_deviation = max_norm_deviation.max(u.max_norm_deviation());

            let step = k + 1;
            let at_window_end = step == end;
            let want_summary = at_window_end || (opts.summary_stride > 0 && step % opts.summary_stride == 0);
            if want_summary {
                acc.time = step as f64 * dt;
                acc.grad_norm_sq = obs.grad_norm_sq;
                acc.energy = fields::energy(&u, p);
                acc.mean = fields::spatial_average(&u);
                summary.push(acc.clone());
            }
            if opts.snapshot_stride > 0 && (step % opts.snapshot_stride == 0 || step == n_steps) {
                snapshots.push((step as f64 * dt, u.clone()));
            }
        }
        done = end;
    }

    Ok(TrajectoryRecord {
        summary,
        snapshots,
        max_grad_growth,
        max_norm_deviation,
        final_state: u,
    })
}
