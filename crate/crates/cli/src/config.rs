//! Experiment configuration (TOML with dotted sections).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sllg_core::diagnostics::{gibbs_constant_field, KbConfig};
use sllg_core::spde::{cfl_check, smallness_check};
use sllg_core::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub inequality: InequalityConfig,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default)]
    pub feller: FellerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    /// Interval length `|D|`; the string `"pi"` is accepted.
    #[serde(deserialize_with = "length_or_pi")]
    pub length: f64,
}

fn length_or_pi<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum L {
        Num(f64),
        Text(String),
    }
    match L::deserialize(d)? {
        L::Num(x) => Ok(x),
        L::Text(s) if s.trim().eq_ignore_ascii_case("pi") => Ok(PI),
        L::Text(s) => Err(serde::de::Error::custom(format!("unknown length {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    /// Row-major 3×3.
    #[serde(default = "zeros9")]
    pub a: [f64; 9],
    #[serde(default)]
    pub b: [f64; 3],
    #[serde(default)]
    pub sign: AnisotropySign,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig { lambda1: 0.0, lambda2: 1.0, a: [0.0; 9], b: [0.0; 3], sign: AnisotropySign::Dissipative }
    }
}

impl ParamsConfig {
    pub fn to_params(&self) -> AnisotropyParams {
        AnisotropyParams {
            a: Mat3::from_row_major(self.a),
            b: Vec3(self.b),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            sign: self.sign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Constant,
    /// `offset + value · sin(πx/|D|)`.
    Sine,
    /// `offset + value · cos(πx/|D|)`.
    Cosine,
    /// `offset + value · tanh((x - |D|/2) / width)`.
    TanhWall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "shape_b")]
    pub shape: ShapeKind,
    #[serde(default = "constant_profile")]
    pub profile: Profile,
    #[serde(default = "one")]
    pub value: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub width: f64,
    /// Direction of `h₁` for shape A (scaled by the profile).
    #[serde(default = "e3")]
    pub vector: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            shape: ShapeKind::B,
            profile: Profile::Constant,
            value: 1.0,
            offset: 0.0,
            width: 1.0,
            vector: [0.0, 0.0, 1.0],
            seed: 0,
        }
    }
}

impl NoiseConfig {
    fn scalar(&self, x: f64, len: f64) -> f64 {
        match self.profile {
            Profile::Constant => self.value + self.offset,
            Profile::Sine => self.offset + self.value * (PI * x / len).sin(),
            Profile::Cosine => self.offset + self.value * (PI * x / len).cos(),
            Profile::TanhWall => self.offset + self.value * ((x - 0.5 * len) / self.width).tanh(),
        }
    }

    pub fn to_shape(&self, grid: &Grid1D) -> NoiseShape {
        let s: Vec<f64> = grid.nodes().map(|x| self.scalar(x, grid.length())).collect();
        match self.shape {
            ShapeKind::B => NoiseShape::ShapeB { h2: s },
            ShapeKind::A => NoiseShape::ShapeA { h1: s.iter().map(|&c| Vec3(self.vector) * c).collect() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "safety")]
    pub safety: f64,
    #[serde(default = "yes")]
    pub renormalize: bool,
}

impl SolverSection {
    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            scheme: self.scheme,
            renormalize_after_drift: self.renormalize,
            cfl_safety: self.safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub horizon: f64,
    /// Length of the pasted windows (defaults to the horizon).
    pub window: Option<f64>,
    #[serde(default = "one_usize")]
    pub n_trajectories: usize,
    /// Steps between recorded rows.
    #[serde(default = "ten")]
    pub sample_stride: usize,
    /// Steps between field snapshots (0: initial and final only).
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub burn_in: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { horizon: 1.0, window: None, n_trajectories: 1, sample_stride: 10, snapshot_stride: 0, burn_in: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    /// `vector` at every node.
    Constant,
    /// `(cos φ, sin φ, 0)` with `φ = ε (x - |D|/(2π) sin(2πx/|D|))`.
    Twist,
    /// A fixed smooth profile with Neumann-compatible ends.
    Smooth,
    /// A constant drawn from the Gibbs law of the constant-field dynamics.
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "smooth")]
    pub kind: InitialKind,
    #[serde(default = "e3")]
    pub vector: [f64; 3],
    #[serde(default = "one")]
    pub amplitude: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { kind: InitialKind::Smooth, vector: [0.0, 0.0, 1.0], amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "sixteen")]
    pub n_z_bands: usize,
    #[serde(default = "sixteen")]
    pub n_phi: usize,
    /// Time between KB samples.
    #[serde(default = "tenth")]
    pub sample_every: f64,
    /// Start of every chain; drawn uniformly when absent.
    pub v0: Option<[f64; 3]>,
    #[serde(default = "tv_default")]
    pub tv_threshold: f64,
    /// Allowed multiple of the 1% KS critical value.
    #[serde(default = "ks_factor")]
    pub ks_factor: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { n_z_bands: 16, n_phi: 16, sample_every: 0.1, v0: None, tv_threshold: 0.03, ks_factor: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityName {
    Energy,
    Anisotropic,
    Improved,
    Halfnorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityConfig {
    #[serde(default = "energy")]
    pub name: InequalityName,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig { name: InequalityName::Energy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    #[serde(default = "t_list")]
    pub t_list: Vec<f64>,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig { t_list: t_list() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FellerConfig {
    #[serde(default = "perturbations")]
    pub perturbations: Vec<f64>,
}

impl Default for FellerConfig {
    fn default() -> Self {
        FellerConfig { perturbations: perturbations() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "out_dir")]
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: out_dir() }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn ten() -> usize {
    10
}
fn sixteen() -> usize {
    16
}
fn tenth() -> f64 {
    0.1
}
fn tv_default() -> f64 {
    0.03
}
fn ks_factor() -> f64 {
    1.5
}
fn safety() -> f64 {
    0.9
}
fn yes() -> bool {
    true
}
fn zeros9() -> [f64; 9] {
    [0.0; 9]
}
fn e3() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn shape_b() -> ShapeKind {
    ShapeKind::B
}
fn constant_profile() -> Profile {
    Profile::Constant
}
fn smooth() -> InitialKind {
    InitialKind::Smooth
}
fn energy() -> InequalityName {
    InequalityName::Energy
}
fn t_list() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 4.0, 8.0]
}
fn perturbations() -> Vec<f64> {
    vec![1e-3, 5e-4]
}
fn out_dir() -> String {
    "out".into()
}

/// A parsed config together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn load(path: &Path) -> std::result::Result<LoadedConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text)
}

pub fn parse(text: &str) -> std::result::Result<LoadedConfig, String> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(LoadedConfig { config, hash: hex::encode(Sha256::digest(text.as_bytes())) })
}

impl ExperimentConfig {
    /// Structural checks; stability gates are separate (see [`Self::gates`]).
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.params.to_params().validate()?;
        self.solver.to_solver().validate()?;
        if !(self.run.horizon >= 0.0 && self.run.horizon.is_finite()) {
            return Err(Error::InvalidArgument("run.horizon must be >= 0".into()));
        }
        if self.run.n_trajectories == 0 {
            return Err(Error::InvalidArgument("run.n_trajectories must be positive".into()));
        }
        if self.run.sample_stride == 0 {
            return Err(Error::InvalidArgument("run.sample_stride must be positive".into()));
        }
        if self.measure.n_z_bands == 0 || self.measure.n_phi == 0 {
            return Err(Error::InvalidArgument("measure bins must be positive".into()));
        }
        if matches!(self.initial.kind, InitialKind::Constant) && Vec3(self.initial.vector).norm() == 0.0 {
            return Err(Error::InvalidArgument("initial.vector must be nonzero".into()));
        }
        if !self.noise.to_shape(&self.grid()?).is_finite() {
            return Err(Error::NonFinite("noise profile".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.n_points, self.grid.length)
    }

    /// Stability gate, plus the smallness condition when `needs_smallness`.
    pub fn gates(&self, needs_smallness: bool) -> Result<()> {
        let grid = self.grid()?;
        let p = self.params.to_params();
        cfl_check(&p, &grid, self.solver.dt, self.solver.safety)?;
        if needs_smallness {
            let s = smallness_check(&p, grid.poincare_constant());
            if !s.pass {
                return Err(Error::Smallness { g_bar: s.g_bar, threshold: s.threshold });
            }
        }
        Ok(())
    }

    pub fn initial_field(&self, seed: u64) -> Result<SphereField> {
        let grid = self.grid()?;
        let len = grid.length();
        let eps = self.initial.amplitude;
        match self.initial.kind {
            InitialKind::Constant => SphereField::constant(grid, Vec3(self.initial.vector)),
            InitialKind::Twist => SphereField::from_fn_normalized(grid, |x| {
                let phi = eps * (x - len / (2.0 * PI) * (2.0 * PI * x / len).sin());
                Vec3::new(phi.cos(), phi.sin(), 0.0)
            }),
            InitialKind::Smooth => SphereField::from_fn_normalized(grid, |x| {
                let c = (PI * x / len).cos();
                Vec3::new(0.8 * eps * c, 0.5 * eps * (2.0 * PI * x / len).cos(), 0.6 + 0.3 * c)
            }),
            InitialKind::Gibbs => gibbs_constant_field(grid, &self.params.to_params(), self.noise.value, seed),
        }
    }

    pub fn kb_config(&self) -> KbConfig {
        KbConfig {
            params: self.params.to_params(),
            h2: self.noise.value,
            dt: self.solver.dt,
            burn_in: self.run.burn_in,
            horizon: self.run.horizon,
            sample_every: self.measure.sample_every,
            n_chains: self.run.n_trajectories,
            n_z_bands: self.measure.n_z_bands,
            n_phi: self.measure.n_phi,
            v0: self.measure.v0.map(Vec3),
            domain_length: self.grid.length,
        }
    }
}
