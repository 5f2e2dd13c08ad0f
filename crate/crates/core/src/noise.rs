//! Brownian drivers, the cross-product rough driver built on them, and the
//! Itô–Stratonovich drift correction.
//!
//! A three-dimensional Brownian path `w` is lifted to a pair of 3×3 matrices:
//! the first level `W_{s,t} = F(δw_{s,t})` with `F(ξ) = · × ξ` (an
//! antisymmetric matrix) and the second level
//! `𝕎_{s,t} = ∫_s^t F(dw_r) F(w_r - w_s)`, whose entries are
//! `w^{ij}_{s,t} - δ_ij Σ_k w^{kk}_{s,t}` in terms of the Stratonovich iterated
//! integrals `w^{ij}_{s,t} = ∫_s^t (w^i_r - w^i_s) ∘ dw^j_r`. On piecewise-linear
//! paths the integral is exact per linear piece, so Chen's relation
//! `𝕎_{s,t} - 𝕎_{s,u} - 𝕎_{u,t} = W_{u,t} W_{s,u}` and geometricity
//! `Sym(𝕎_{s,t}) = ½ W_{s,t} W_{s,t}` hold up to rounding.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Grid1D;
use crate::vec3::{Mat3, Vec3};

/// Independent random stream for trajectory `index` of an ensemble seeded by
/// `seed`. Streams are counter-selected, so the result does not depend on the
/// order in which trajectories are generated.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Gaussian increments with variance `dt` per component.
pub struct IncrementStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl IncrementStream {
    pub fn new(seed: u64, index: u64, dt: f64) -> Self {
        IncrementStream {
            rng: trajectory_rng(seed, index),
            sqrt_dt: dt.sqrt(),
        }
    }

    #[inline]
    pub fn scalar(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        z * self.sqrt_dt
    }

    #[inline]
    pub fn vec3(&mut self) -> Vec3 {
        Vec3::new(self.scalar(), self.scalar(), self.scalar())
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// A sampled Brownian path, stored as increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    dimension: usize,
    dt: f64,
    increments: Vec<f64>,
    seed: u64,
}

/// Samples `n_steps` increments of a `dimension`-dimensional Brownian motion
/// (stream 0 of `seed`).
pub fn sample_brownian(seed: u64, dt: f64, n_steps: usize, dimension: usize) -> Result<BrownianPath> {
    sample_brownian_stream(seed, 0, dt, n_steps, dimension)
}

/// As [`sample_brownian`], drawing from the sub-stream `index`.
pub fn sample_brownian_stream(
    seed: u64,
    index: u64,
    dt: f64,
    n_steps: usize,
    dimension: usize,
) -> Result<BrownianPath> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    if dimension != 1 && dimension != 3 {
        return Err(Error::InvalidArgument(format!(
            "dimension must be 1 or 3, got {dimension}"
        )));
    }
    let mut stream = IncrementStream::new(seed, index, dt);
    let increments = (0..n_steps * dimension).map(|_| stream.scalar()).collect();
    Ok(BrownianPath {
        dimension,
        dt,
        increments,
        seed,
    })
}

impl BrownianPath {
    /// Builds a path from explicit increments (row-major, `dimension` per step).
    pub fn from_increments(dimension: usize, dt: f64, increments: Vec<f64>, seed: u64) -> Result<Self> {
        if dimension != 1 && dimension != 3 {
            return Err(Error::InvalidArgument(format!(
                "dimension must be 1 or 3, got {dimension}"
            )));
        }
        if increments.is_empty() || !increments.len().is_multiple_of(dimension) {
            return Err(Error::InvalidArgument(
                "increment count must be a positive multiple of the dimension".into(),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        Ok(BrownianPath {
            dimension,
            dt,
            increments,
            seed,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.dimension
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increment of step `k` (one entry per dimension).
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dimension..(k + 1) * self.dimension]
    }

    /// Increment of step `k` of a three-dimensional path.
    pub fn increment_vec3(&self, k: usize) -> Vec3 {
        let d = self.increment(k);
        Vec3::new(d[0], d[1], d[2])
    }

    /// Path positions `w(t_0 = 0), …, w(t_n)` by prefix sums, `w(0) = 0`.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        let mut acc = vec![0.0; self.dimension];
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        out.push(acc.clone());
        for k in 0..self.n_steps() {
            for (a, d) in acc.iter_mut().zip(self.increment(k)) {
                *a += d;
            }
            out.push(acc.clone());
        }
        out
    }

    /// Endpoint `w(n_steps · dt)`.
    pub fn endpoint(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dimension];
        for k in 0..self.n_steps() {
            for (a, d) in acc.iter_mut().zip(self.increment(k)) {
                *a += d;
            }
        }
        acc
    }

    /// Writes the little-endian binary dump: `u64 dimension`, `f64 dt`,
    /// `u64 n_steps`, `u64 seed`, then the increments as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dimension as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for x in &self.increments {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let dimension = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let n_steps = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let count = n_steps
            .checked_mul(dimension)
            .ok_or_else(|| Error::InvalidArgument("corrupt header".into()))?;
        let mut increments = Vec::with_capacity(count);
        for _ in 0..count {
            increments.push(f64::from_le_bytes(next(&mut r)?));
        }
        BrownianPath::from_increments(dimension, dt, increments, seed)
    }
}

/// First level of the rough driver: the antisymmetric matrix `F(dw)` with
/// `F(dw) v = v × dw`.
pub fn first_level(dw: Vec3) -> Mat3 {
    let [w1, w2, w3] = dw.0;
    Mat3([[0.0, w3, -w2], [-w3, 0.0, w1], [w2, -w1, 0.0]])
}

/// First and second levels of the rough driver on consecutive intervals of a
/// partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughDriverSample {
    pub times: Vec<f64>,
    pub w: Vec<Mat3>,
    pub ww: Vec<Mat3>,
}

impl RoughDriverSample {
    pub fn n_intervals(&self) -> usize {
        self.w.len()
    }

    /// `(W, 𝕎)` over `[times[i], times[j]]`, composed from the per-interval
    /// levels through Chen's relation.
    pub fn between(&self, i: usize, j: usize) -> (Mat3, Mat3) {
        assert!(i <= j && j < self.times.len());
        let mut w = Mat3::ZERO;
        let mut ww = Mat3::ZERO;
        for k in i..j {
            ww = ww + self.ww[k] + self.w[k] * w;
            w = w + self.w[k];
        }
        (w, ww)
    }

    /// Antisymmetric part `𝕃 = 𝕎 - ½ W W` of interval `k` (the Lévy area term).
    pub fn levy_area(&self, k: usize) -> Mat3 {
        self.ww[k] - self.w[k] * self.w[k] * 0.5
    }
}

/// Lifts a three-dimensional path, linearly interpolated between steps, to
/// the rough driver on the coarse partition `partition` (times, starting at 0,
/// each a multiple of the step size).
pub fn second_level(path: &BrownianPath, partition: &[f64]) -> Result<RoughDriverSample> {
    if path.dimension() != 3 {
        return Err(Error::InvalidArgument(
            "the rough driver needs a three-dimensional path".into(),
        ));
    }
    if partition.len() < 2 {
        return Err(Error::InvalidArgument("partition needs at least two points".into()));
    }
    let mut steps = Vec::with_capacity(partition.len());
    for (i, &t) in partition.iter().enumerate() {
        let k = t / path.dt();
        let kr = k.round();
        if (k - kr).abs() > 1e-9 * k.abs().max(1.0) || kr < 0.0 || kr as usize > path.n_steps() {
            return Err(Error::MisalignedPartition(i));
        }
        let kr = kr as usize;
        if let Some(&prev) = steps.last() {
            if kr <= prev {
                return Err(Error::MisalignedPartition(i));
            }
        }
        steps.push(kr);
    }
    let mut w = Vec::with_capacity(steps.len() - 1);
    let mut ww = Vec::with_capacity(steps.len() - 1);
    for pair in steps.windows(2) {
        let mut acc1 = Mat3::ZERO;
        let mut acc2 = Mat3::ZERO;
        for k in pair[0]..pair[1] {
            let f = first_level(path.increment_vec3(k));
            // exact on one linear piece: F(d) (F(a) + ½ F(d))
            acc2 = acc2 + f * acc1 + f * f * 0.5;
            acc1 = acc1 + f;
        }
        w.push(acc1);
        ww.push(acc2);
    }
    Ok(RoughDriverSample {
        times: partition.to_vec(),
        w,
        ww,
    })
}

/// Dyadic lower bound of the p-variation of a sampled path: the maximum over
/// depths `d ≤ max_depth` of `(Σ |h(t_{k+1}) - h(t_k)|^p)^{1/p}` on the
/// partition of the sample indices into `2^d` nearly equal pieces.
pub fn p_variation<T: Copy>(
    samples: &[T],
    dist: impl Fn(T, T) -> f64,
    p: f64,
    max_depth: u32,
) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if samples.len() < 2 {
        return Ok(0.0);
    }
    let n = samples.len() - 1;
    let mut best = 0.0_f64;
    for depth in 0..=max_depth {
        let pieces = 1usize << depth.min(62);
        let mut sum = 0.0;
        let mut prev = 0usize;
        for k in 1..=pieces.min(n) {
            let idx = if pieces >= n { k } else { k * n / pieces };
            sum += dist(samples[prev], samples[idx]).powf(p);
            prev = idx;
        }
        best = best.max(sum.powf(1.0 / p));
        if pieces >= n {
            break;
        }
    }
    Ok(best)
}

/// p-variation of a real-valued sampled path.
pub fn p_variation_scalar(samples: &[f64], p: f64, max_depth: u32) -> Result<f64> {
    p_variation(samples, |a, b| (b - a).abs(), p, max_depth)
}

/// Itô drift supplement of `d x = h x × ∘ dW` with a three-dimensional `W`:
/// the Stratonovich correction `½ c(x)` with `c(x) = -2x`, scaled by `h²`.
#[inline]
pub fn ito_correction(x: Vec3, intensity_sq: f64) -> Vec3 {
    x * -intensity_sq
}

/// Spatial shape of the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseShape {
    /// `u × h₁(x) ∘ dB` with a real Brownian motion `B`.
    ShapeA { h1: Vec<Vec3> },
    /// `h₂(x) u × ∘ dB̄` with a three-dimensional Brownian motion `B̄`.
    ShapeB { h2: Vec<f64> },
}

impl NoiseShape {
    pub fn constant_a(grid: &Grid1D, h1: Vec3) -> Self {
        NoiseShape::ShapeA {
            h1: vec![h1; grid.n_points()],
        }
    }

    pub fn constant_b(grid: &Grid1D, h2: f64) -> Self {
        NoiseShape::ShapeB {
            h2: vec![h2; grid.n_points()],
        }
    }

    /// Dimension of the driving Brownian motion.
    pub fn driver_dimension(&self) -> usize {
        match self {
            NoiseShape::ShapeA { .. } => 1,
            NoiseShape::ShapeB { .. } => 3,
        }
    }

    pub fn n_points(&self) -> usize {
        match self {
            NoiseShape::ShapeA { h1 } => h1.len(),
            NoiseShape::ShapeB { h2 } => h2.len(),
        }
    }

    /// True iff every component of the profile has `max - min == 0`.
    pub fn is_spatially_constant(&self) -> bool {
        match self {
            NoiseShape::ShapeA { h1 } => (0..3).all(|c| {
                let (lo, hi) = min_max(h1.iter().map(|v| v[c]));
                hi - lo == 0.0
            }),
            NoiseShape::ShapeB { h2 } => {
                let (lo, hi) = min_max(h2.iter().copied());
                hi - lo == 0.0
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            NoiseShape::ShapeA { h1 } => h1.iter().all(|v| v.is_finite()),
            NoiseShape::ShapeB { h2 } => h2.iter().all(|v| v.is_finite()),
        }
    }

    /// `‖∂ₓh‖²_{L²}` of the profile (edge differences).
    pub fn gradient_norm_sq(&self, grid: &Grid1D) -> f64 {
        let dx = grid.dx();
        match self {
            NoiseShape::ShapeA { h1 } => {
                h1.windows(2).map(|w| (w[1] - w[0]).norm_sq()).sum::<f64>() / dx
            }
            NoiseShape::ShapeB { h2 } => {
                h2.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / dx
            }
        }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// One step's worth of driving noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseIncrement {
    Scalar(f64),
    Vector(Vec3),
}

impl NoiseIncrement {
    pub fn zero_for(shape: &NoiseShape) -> Self {
        match shape {
            NoiseShape::ShapeA { .. } => NoiseIncrement::Scalar(0.0),
            NoiseShape::ShapeB { .. } => NoiseIncrement::Vector(Vec3::ZERO),
        }
    }

    pub fn draw(shape: &NoiseShape, stream: &mut IncrementStream) -> Self {
        match shape {
            NoiseShape::ShapeA { .. } => NoiseIncrement::Scalar(stream.scalar()),
            NoiseShape::ShapeB { .. } => NoiseIncrement::Vector(stream.vec3()),
        }
    }

    /// Reads step `k` of a recorded path.
    pub fn from_path(path: &BrownianPath, k: usize) -> Self {
        match path.dimension() {
            1 => NoiseIncrement::Scalar(path.increment(k)[0]),
            _ => NoiseIncrement::Vector(path.increment_vec3(k)),
        }
    }
}
