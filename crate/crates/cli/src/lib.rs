//! Config-driven experiment runner behind the `sllg` binary.

pub mod config;

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use sllg_core::diagnostics::{
    self, anisotropic_energy_inequality, coupled_gaps, energy_inequality, feller_probe, h2_halfnorm_growth,
    improved_anisotropic_inequality, kb_measure, kb_reference, kb_report, perturb, poincare_cross_check,
    run_spde_ensemble, stationary_flatness, sync_experiment, CoupledSpec, EnsembleSpec, InequalityReport, SyncSpec,
    UNIFORM_MEAN_Z2,
};
use sllg_core::ensemble::run_indexed;
use sllg_core::fields::{self, laplacian_identity_residual, laplacian_identity_sides};
use sllg_core::measures::ks_critical_1pct;
use sllg_core::noise::{second_level, BrownianPath};
use sllg_core::sde_sphere::{sde_step_a, sde_step_b, uniform_on_sphere, write_sde_csv, SphereDensity, SphereState};
use sllg_core::spde::{drift_equivalent_residual, rodrigues, simulate, SimulationOptions};
use sllg_core::*;

use config::{ExperimentConfig, InequalityName, InitialKind, LoadedConfig, ShapeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_BLOWUP: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    SimulateSpde,
    SimulateSde,
    KbMeasure,
    CheckInvariants,
    Inequality,
    Sync,
    FellerProbe,
    Flatness,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateSpde => "simulate-spde",
            Command::SimulateSde => "simulate-sde",
            Command::KbMeasure => "kb-measure",
            Command::CheckInvariants => "check-invariants",
            Command::Inequality => "inequality",
            Command::Sync => "sync",
            Command::FellerProbe => "feller-probe",
            Command::Flatness => "flatness",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    /// Optional only for `check-invariants`.
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: usize,
}

/// Failure of a run, mapped onto an exit code.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Core(Error),
    Check(String),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Core(Error::from(e))
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Core(Error::Io(e.to_string()))
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Check(_) => EXIT_CHECK_FAILED,
            RunError::Core(e) => match e {
                Error::Cfl { .. } | Error::Smallness { .. } => EXIT_GATE,
                Error::BlowUp { .. } | Error::NonFinite(_) => EXIT_BLOWUP,
                Error::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            },
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "invalid config: {m}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

/// Worker count from `SLLG_WORKERS`, defaulting to one thread.
pub fn workers_from_env() -> usize {
    std::env::var("SLLG_WORKERS").ok().and_then(|s| s.trim().parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    outputs: &'a [String],
    status: &'a str,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    report: &'a T,
}

/// Output directory plus the bookkeeping shared by every artifact.
struct Sink {
    dir: PathBuf,
    command: Command,
    hash: String,
    seed: u64,
    outputs: Vec<String>,
}

impl Sink {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, report: &T) -> std::result::Result<(), RunError> {
        let mut w = self.create(name)?;
        let tagged = Tagged { command: self.command.name(), config_hash: &self.hash, seed: self.seed, report };
        serde_json::to_writer_pretty(&mut w, &tagged)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn manifest(&self, status: &str) -> Result<()> {
        let m = Manifest {
            command: self.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.hash,
            seed: self.seed,
            outputs: &self.outputs,
            status,
        };
        let mut w = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &m).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs one subcommand and returns the process exit code.
pub fn run(args: &RunArgs) -> i32 {
    match execute(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("sllg {}: {e}", args.command.name());
            e.exit_code()
        }
    }
}

pub fn execute(args: &RunArgs) -> std::result::Result<(), RunError> {
    let loaded = match &args.config {
        Some(p) => Some(config::load(p).map_err(RunError::Config)?),
        None if args.command == Command::CheckInvariants => None,
        None => return Err(RunError::Config("--config is required".into())),
    };
    let seed = args.seed.or(loaded.as_ref().map(|l| l.config.noise.seed)).unwrap_or(0);
    let dir = match (&args.out, &loaded) {
        (Some(d), _) => d.clone(),
        (None, Some(l)) => PathBuf::from(&l.config.output.directory),
        (None, None) => PathBuf::from("out"),
    };

    // gates come before any compute or output
    if let Some(l) = &loaded {
        let needs_smallness = match args.command {
            Command::Flatness => true,
            Command::Inequality => l.config.inequality.name == InequalityName::Improved,
            _ => false,
        };
        if needs_spde_gate(args.command) {
            l.config.gates(needs_smallness)?;
        }
    }

    std::fs::create_dir_all(&dir)?;
    let mut sink = Sink {
        dir,
        command: args.command,
        hash: loaded.as_ref().map_or_else(|| "none".to_string(), |l| l.hash.clone()),
        seed,
        outputs: Vec::new(),
    };
    let w = args.workers;
    let result = match (args.command, &loaded) {
        (Command::CheckInvariants, l) => check_invariants(l.as_ref().map(|l| &l.config), seed, &mut sink),
        (cmd, Some(LoadedConfig { config: c, .. })) => match cmd {
            Command::SimulateSpde => simulate_spde(c, seed, w, &mut sink),
            Command::SimulateSde => simulate_sde(c, seed, w, &mut sink),
            Command::KbMeasure => kb(c, seed, w, &mut sink),
            Command::Inequality => inequality(c, seed, w, &mut sink),
            Command::Sync => sync(c, seed, w, &mut sink),
            Command::FellerProbe => feller(c, seed, w, &mut sink),
            Command::Flatness => flatness(c, seed, &mut sink),
            Command::CheckInvariants => unreachable!(),
        },
        (_, None) => unreachable!("config presence checked above"),
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(RunError::Check(_)) => "check-failed",
        Err(_) => "error",
    };
    sink.manifest(status)?;
    result
}

fn needs_spde_gate(cmd: Command) -> bool {
    !matches!(cmd, Command::SimulateSde | Command::KbMeasure | Command::CheckInvariants)
}

fn check(pass: bool, what: impl FnOnce() -> String) -> std::result::Result<(), RunError> {
    if pass {
        Ok(())
    } else {
        Err(RunError::Check(what()))
    }
}

// ---------------------------------------------------------------------------
// simulate-spde

#[derive(Serialize)]
struct SpdeRunReport {
    n_trajectories: usize,
    horizon: f64,
    dt: f64,
    max_norm_deviation: f64,
    max_grad_growth: f64,
    final_grad_norm_sq: Vec<f64>,
}

fn simulate_spde(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let u0 = c.initial_field(seed)?;
    let grid = *u0.grid();
    let params = c.params.to_params();
    let shape = c.noise.to_shape(&grid);
    let solver = c.solver.to_solver();
    let opts = SimulationOptions {
        horizon: c.run.horizon,
        window: c.run.window.unwrap_or(c.run.horizon).max(solver.dt),
        summary_stride: c.run.sample_stride,
        snapshot_stride: c.run.snapshot_stride,
    };
    let records = run_indexed(c.run.n_trajectories, workers, |i| {
        let mut noise = IncrementStream::new(seed, i as u64, solver.dt);
        simulate(&u0, &params, &shape, &solver, &opts, &mut noise)
    })?;

    let mut w = sink.create("summary.csv")?;
    writeln!(w, "trajectory_id,time,grad_norm_sq,cross_lap_int,energy")?;
    for (i, rec) in records.iter().enumerate() {
        for r in &rec.summary {
            writeln!(w, "{i},{:e},{:e},{:e},{:e}", r.time, r.grad_norm_sq, r.cross_lap_int, r.energy)?;
        }
    }
    w.flush()?;
    let mut w = sink.create("snapshots.csv")?;
    records[0].write_snapshots_csv(&mut w)?;
    w.flush()?;

    let report = SpdeRunReport {
        n_trajectories: records.len(),
        horizon: c.run.horizon,
        dt: solver.dt,
        max_norm_deviation: records.iter().map(|r| r.max_norm_deviation).fold(0.0, f64::max),
        max_grad_growth: records.iter().map(|r| r.max_grad_growth).fold(f64::NEG_INFINITY, f64::max),
        final_grad_norm_sq: records.iter().map(|r| r.summary.last().map_or(0.0, |s| s.grad_norm_sq)).collect(),
    };
    sink.json("simulate_spde.json", &report)
}

// ---------------------------------------------------------------------------
// simulate-sde

fn sde_start(c: &ExperimentConfig, stream: &mut IncrementStream) -> Vec3 {
    match (c.initial.kind, c.measure.v0) {
        (InitialKind::Constant, _) => Vec3(c.initial.vector).normalized(),
        (_, Some(v)) => Vec3(v).normalized(),
        _ => uniform_on_sphere(stream.rng()),
    }
}

fn simulate_sde(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let params = c.params.to_params();
    params.validate()?;
    let dt = c.solver.dt;
    let n_steps = (c.run.horizon / dt).round() as usize;
    let stride = c.run.sample_stride;
    let h = c.noise.value;
    let h1 = Vec3(c.noise.vector) * h;
    let paths = run_indexed(c.run.n_trajectories, workers, |i| {
        let mut stream = IncrementStream::new(seed, i as u64, dt);
        let mut v = SphereState::normalized(sde_start(c, &mut stream))?;
        let mut rows = vec![(0.0, v.v, i)];
        for k in 1..=n_steps {
            v = match c.noise.shape {
                ShapeKind::B => sde_step_b(v, &params, h, stream.vec3(), dt),
                ShapeKind::A => sde_step_a(v, h1, stream.scalar(), &params, dt),
            };
            if !v.v.is_finite() {
                return Err(Error::BlowUp { step: k, time: k as f64 * dt });
            }
            if k % stride == 0 || k == n_steps {
                rows.push((k as f64 * dt, v.v, i));
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<_> = paths.into_iter().flatten().collect();
    let mut w = sink.create("sde.csv")?;
    write_sde_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// kb-measure

#[derive(Serialize)]
struct KbOutput {
    reference: &'static str,
    report: diagnostics::KbReport,
    tv_threshold: f64,
    ks_limit: f64,
    pass: bool,
}

/// `E[z²]` under a reference law, from its z-CDF: `1 - ∫ 2z F(z) dz`.
fn reference_mean_z2(density: &dyn SphereDensity) -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    1.0 - (0..n)
        .map(|k| {
            let z = -1.0 + (k as f64 + 0.5) * h;
            2.0 * z * density.z_cdf(z) * h
        })
        .sum::<f64>()
}

fn kb(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let cfg = c.kb_config();
    let run = kb_measure(&cfg, seed, workers)?;
    let density = kb_reference(&cfg)?;
    let (reference, m2) = if cfg.params.has_anisotropy() {
        ("gibbs", reference_mean_z2(density.as_ref()))
    } else {
        ("uniform", UNIFORM_MEAN_Z2)
    };
    let report = kb_report(&run, density.as_ref(), m2)?;
    let mut w = sink.create("measure.csv")?;
    run.measure.write_csv(&mut w, density.as_ref())?;
    w.flush()?;
    let mut w = sink.create("chains.csv")?;
    writeln!(w, "chain,mean_z,mean_z2")?;
    for (i, (a, b)) in run.chain_mean_z.iter().zip(&run.chain_mean_z2).enumerate() {
        writeln!(w, "{i},{a:e},{b:e}")?;
    }
    w.flush()?;

    let ks_limit = c.measure.ks_factor * ks_critical_1pct(report.n_eff);
    let pass = report.distances.tv <= c.measure.tv_threshold && report.distances.ks_z <= ks_limit;
    let out = KbOutput { reference, report, tv_threshold: c.measure.tv_threshold, ks_limit, pass };
    sink.json("kb_report.json", &out)?;
    check(pass, || {
        format!(
            "TV {:.4} (limit {}), KS {:.4} (limit {:.4})",
            out.report.distances.tv, out.tv_threshold, out.report.distances.ks_z, ks_limit
        )
    })
}

// ---------------------------------------------------------------------------
// check-invariants

#[derive(Debug, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn le(name: &str, value: f64, tolerance: f64) -> InvariantCheck {
    InvariantCheck { name: name.into(), value, tolerance, pass: value <= tolerance }
}

fn ge(name: &str, value: f64, tolerance: f64) -> InvariantCheck {
    InvariantCheck { name: name.into(), value, tolerance, pass: value >= tolerance }
}

/// `(cos x, sin x, 0)` on `[0, π]`.
fn circle(n: usize) -> Result<SphereField> {
    SphereField::from_fn_normalized(Grid1D::new(n, PI)?, |x| Vec3::new(x.cos(), x.sin(), 0.0))
}

/// Observed convergence order of the Laplacian identity residual under
/// `dx → dx/2`, worst over the two refinements.
pub fn laplacian_identity_order() -> Result<(f64, Vec<f64>)> {
    let r = [65, 129, 257].iter().map(|&n| circle(n).map(|u| laplacian_identity_residual(&u))).collect::<Result<Vec<_>>>()?;
    let order = (r[0] / r[1]).log2().min((r[1] / r[2]).log2());
    Ok((order, r))
}

/// Worst antisymmetry, symmetric-part and Chen residuals over `n_paths`
/// random piecewise-linear paths of 24 steps.
pub fn rough_driver_residuals(n_paths: usize, seed: u64) -> Result<[f64; 3]> {
    let mut worst = [0.0_f64; 3];
    for i in 0..n_paths {
        let mut s = IncrementStream::new(seed, i as u64, 0.01);
        let incs: Vec<f64> = (0..24).flat_map(|_| s.vec3().0).collect();
        let path = BrownianPath::from_increments(3, 0.01, incs, seed)?;
        let times: Vec<f64> = (0..=24).map(|k| k as f64 * 0.01).collect();
        let rd = second_level(&path, &times)?;
        let (w, ww) = rd.between(0, 24);
        let cut = 1 + i % 23;
        let (w1, ww1) = rd.between(0, cut);
        let (w2, ww2) = rd.between(cut, 24);
        worst[0] = worst[0].max((w + w.transpose()).max_abs());
        worst[1] = worst[1].max((ww.symmetric_part() - w * w * 0.5).max_abs());
        worst[2] = worst[2].max((ww - (ww1 + ww2 + w2 * w1)).max_abs()).max((w - (w1 + w2)).max_abs());
    }
    Ok(worst)
}

fn check_invariants(c: Option<&ExperimentConfig>, seed: u64, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let grid = match c {
        Some(c) => c.grid()?,
        None => Grid1D::new(129, PI)?,
    };
    let len = grid.length();
    let twist = SphereField::from_fn_normalized(grid, |x| {
        let phi = 0.4 * (x - len / (2.0 * PI) * (2.0 * PI * x / len).sin());
        Vec3::new(phi.cos(), phi.sin(), 0.0)
    })?;
    let smooth = SphereField::from_fn_normalized(grid, |x| {
        let c = (PI * x / len).cos();
        Vec3::new(0.8 * c, 0.5 * (2.0 * PI * x / len).cos(), 0.6 + 0.3 * c)
    })?;
    let constant = SphereField::constant(grid, Vec3::new(1.0, 2.0, 2.0).normalized())?;
    let synthetic = [&twist, &smooth, &constant];

    let mut checks = Vec::new();
    let norm_dev = synthetic.iter().map(|u| u.max_norm_deviation()).fold(0.0, f64::max);
    checks.push(le("sphere_constraint", norm_dev, 1e-12));

    let (order, _) = laplacian_identity_order()?;
    checks.push(ge("laplacian_identity_order", order, 1.8));
    let (lhs, rhs) = laplacian_identity_sides(&circle(257)?);
    checks.push(le("laplacian_identity_analytic_value", (lhs - PI).abs().max((rhs - PI).abs()), 1e-3));

    let drift: Vec<f64> = [65, 129, 257].iter().map(|&n| circle(n).map(|u| drift_equivalent_residual(&u))).collect::<Result<_>>()?;
    checks.push(ge("drift_identity_order", (drift[0] / drift[1]).log2().min((drift[1] / drift[2]).log2()), 1.8));

    let pc = poincare_cross_check(&twist, 1e-12);
    checks.push(InvariantCheck { name: "poincare_cross".into(), value: pc.residual, tolerance: 0.0, pass: pc.pass });
    let pw = synthetic
        .iter()
        .map(|u| {
            let (l, r) = fields::poincare_wirtinger_sides(u);
            l - r
        })
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(le("poincare_wirtinger", pw, 1e-12));

    let mut s = IncrementStream::new(seed, 0, 1.0);
    let mut rot = 0.0_f64;
    for _ in 0..1000 {
        let (v, axis) = (s.vec3().normalized(), s.vec3().normalized());
        let w = rodrigues(v, axis, 10.0 * s.scalar());
        rot = rot.max((w.norm() - 1.0).abs());
    }
    checks.push(le("rotation_isometry", rot, 1e-12));

    let rd = rough_driver_residuals(1000, seed)?;
    checks.push(le("rough_driver_antisymmetry", rd[0], 1e-12));
    checks.push(le("rough_driver_symmetric_part", rd[1], 1e-12));
    checks.push(le("rough_driver_chen", rd[2], 1e-12));

    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    sink.json("invariants.json", &checks)?;
    for c in &checks {
        println!("{} {} value={:e} tolerance={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    check(failed.is_empty(), || failed.join(", "))
}

// ---------------------------------------------------------------------------
// inequality

fn ensemble_spec(c: &ExperimentConfig, seed: u64) -> Result<EnsembleSpec> {
    let u0 = c.initial_field(seed)?;
    let shape = c.noise.to_shape(u0.grid());
    Ok(EnsembleSpec {
        params: c.params.to_params(),
        shape,
        solver: c.solver.to_solver(),
        horizon: c.run.horizon,
        n_paths: c.run.n_trajectories,
        seed,
        summary_stride: c.run.sample_stride,
        u0,
    })
}

#[derive(Serialize)]
struct InequalityOutput {
    inequality: InequalityReport,
    /// Largest one-step increase of `‖∂ₓu‖²` over all paths.
    max_grad_growth: f64,
    max_norm_deviation: f64,
}

fn inequality(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let spec = ensemble_spec(c, seed)?;
    let records = run_spde_ensemble(&spec, workers)?;
    let report: InequalityReport = match c.inequality.name {
        InequalityName::Energy => energy_inequality(&spec, &records)?,
        InequalityName::Anisotropic => anisotropic_energy_inequality(&spec, &records)?,
        InequalityName::Improved => improved_anisotropic_inequality(&spec, &records)?,
        InequalityName::Halfnorm => h2_halfnorm_growth(&records)?,
    };
    let mut w = sink.create("inequality_trace.csv")?;
    writeln!(w, "time,mean_grad_norm_sq,mean_cross_lap_int,mean_cross_grad_int,mean_lap_half_int,max_grad_norm_sq")?;
    let n_rows = records.iter().map(|r| r.summary.len()).min().unwrap_or(0);
    let m = records.len() as f64;
    for j in 0..n_rows {
        let rows = || records.iter().map(|r| &r.summary[j]);
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            records[0].summary[j].time,
            rows().map(|r| r.grad_norm_sq).sum::<f64>() / m,
            rows().map(|r| r.cross_lap_int).sum::<f64>() / m,
            rows().map(|r| r.cross_grad_int).sum::<f64>() / m,
            rows().map(|r| r.lap_half_int).sum::<f64>() / m,
            rows().map(|r| r.grad_norm_sq).fold(0.0, f64::max),
        )?;
    }
    w.flush()?;
    let out = InequalityOutput {
        max_grad_growth: records.iter().map(|r| r.max_grad_growth).fold(f64::NEG_INFINITY, f64::max),
        max_norm_deviation: records.iter().map(|r| r.max_norm_deviation).fold(0.0, f64::max),
        inequality: report.clone(),
    };
    sink.json("inequality.json", &out)?;
    check(report.pass, || format!("{}: lhs {:e} > rhs {:e} at t = {}", report.name, report.lhs, report.rhs, report.time))
}

// ---------------------------------------------------------------------------
// sync

fn sync(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    if c.noise.shape != ShapeKind::B || c.noise.profile != config::Profile::Constant {
        return Err(RunError::Config("sync needs a constant shape-B noise".into()));
    }
    let spec = SyncSpec {
        u0: c.initial_field(seed)?,
        params: c.params.to_params(),
        h2: c.noise.value + c.noise.offset,
        solver: c.solver.to_solver(),
        t_list: c.sync.t_list.clone(),
        horizon: c.run.horizon,
        n_paths: c.run.n_trajectories,
        seed,
        sample_stride: c.run.sample_stride,
    };
    let report = sync_experiment(&spec, workers)?;
    let mut w = sink.create("sync.csv")?;
    writeln!(w, "t,sup_deviation,sup_deviation_stderr")?;
    for ((t, d), e) in report.t_list.iter().zip(&report.sup_deviation).zip(&report.sup_deviation_stderr) {
        writeln!(w, "{t:e},{d:e},{e:e}")?;
    }
    w.flush()?;
    sink.json("sync.json", &report)?;
    check(report.pass, || format!("decay ratio {:e}", report.decay_ratio))
}

// ---------------------------------------------------------------------------
// feller-probe

#[derive(Serialize)]
struct FellerOutput {
    zero_perturbation_max_gap: f64,
    perturbations: Vec<f64>,
    reports: Vec<diagnostics::FellerReport>,
    /// Final mean gap of each perturbation over that of the next.
    halving_ratios: Vec<f64>,
    pass: bool,
}

/// Fixed tangent-ish direction `(0, cos(2πx/|D|), sin(πx/|D|))`.
pub fn feller_direction(grid: &Grid1D) -> Vec<Vec3> {
    let len = grid.length();
    grid.nodes().map(|x| Vec3::new(0.0, (2.0 * PI * x / len).cos(), (PI * x / len).sin())).collect()
}

fn feller(c: &ExperimentConfig, seed: u64, workers: usize, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let u0 = c.initial_field(seed)?;
    let grid = *u0.grid();
    let spec = CoupledSpec {
        params: c.params.to_params(),
        shape: c.noise.to_shape(&grid),
        solver: c.solver.to_solver(),
        horizon: c.run.horizon,
        n_paths: c.run.n_trajectories,
        seed,
        sample_stride: c.run.sample_stride,
    };
    let zero = run_indexed(spec.n_paths, workers, |i| coupled_gaps(&u0, &u0, &spec, i))?;
    let zero_gap = zero.iter().flat_map(|(_, g)| g.iter().cloned()).fold(0.0, f64::max);

    let dir = feller_direction(&grid);
    let mut reports = Vec::new();
    for &eps in &c.feller.perturbations {
        let v0 = perturb(&u0, &dir, eps)?;
        reports.push(feller_probe(&u0, &v0, &spec, workers)?);
    }
    let last_gap = |r: &diagnostics::FellerReport| *r.mean_gap.last().expect("initial sample");
    let halving_ratios: Vec<f64> = reports.windows(2).map(|w| last_gap(&w[0]) / last_gap(&w[1])).collect();

    let mut w = sink.create("feller.csv")?;
    writeln!(w, "perturbation,time,mean_log_ratio,mean_gap,envelope")?;
    for (eps, r) in c.feller.perturbations.iter().zip(&reports) {
        for ((t, l), g) in r.times.iter().zip(&r.mean_log_ratio).zip(&r.mean_gap) {
            writeln!(w, "{eps:e},{t:e},{l:e},{g:e},{:e}", r.fit_intercept + r.fit_slope * t)?;
        }
    }
    w.flush()?;
    let pass = zero_gap == 0.0 && reports.iter().all(|r| r.pass);
    let out = FellerOutput {
        zero_perturbation_max_gap: zero_gap,
        perturbations: c.feller.perturbations.clone(),
        reports,
        halving_ratios,
        pass,
    };
    sink.json("feller.json", &out)?;
    check(pass, || {
        let fr: Vec<String> = out.reports.iter().map(|r| format!("{:.3}", r.fraction_bounded)).collect();
        format!("zero-gap {:e}, bounded fractions {}", zero_gap, fr.join(", "))
    })
}

// ---------------------------------------------------------------------------
// flatness

fn flatness(c: &ExperimentConfig, seed: u64, sink: &mut Sink) -> std::result::Result<(), RunError> {
    let u0 = c.initial_field(seed)?;
    let shape = c.noise.to_shape(u0.grid());
    let report = stationary_flatness(&u0, &c.params.to_params(), &shape, &c.solver.to_solver(), c.run.horizon, seed)?;
    let mut w = sink.create("flatness.csv")?;
    writeln!(w, "time,grad_norm")?;
    for (t, g) in report.times.iter().zip(&report.grad_norm) {
        writeln!(w, "{t:e},{g:e}")?;
    }
    w.flush()?;
    sink.json("flatness.json", &report)?;
    let constant_start = report.initial_value.is_some() && shape.is_spatially_constant();
    check(!constant_start || report.max_grad_norm <= 1e-10, || {
        format!("constant start left the constants: max ‖∂ₓu‖ = {:e}", report.max_grad_norm)
    })
}
