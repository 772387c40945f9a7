//! Geometry of the phase space 𝕋^d × ℝ^d and the containers that live on it.
//!
//! The torus has side one and every coordinate is stored in the half-open
//! interval `[-1/2, 1/2)`. Velocities are plain Euclidean vectors. The
//! physical dimension is at most three, so all vectors are fixed-size
//! arrays tagged with their dimension and are `Copy`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const MAX_DIM: usize = 3;

fn check_dim(dim: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(domain(format!("dimension must be 1, 2 or 3, got {dim}")))
    }
}

/// A vector of `dim ≤ 3` real components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    comps: [f64; MAX_DIM],
    dim: usize,
}

/// Velocities are unconstrained vectors of ℝ^d.
pub type Velocity = Vector;

impl Vector {
    pub fn new(comps: &[f64]) -> Result<Self> {
        check_dim(comps.len())?;
        if comps.iter().any(|c| !c.is_finite()) {
            return Err(domain(format!("non-finite component in {comps:?}")));
        }
        let mut out = [0.0; MAX_DIM];
        out[..comps.len()].copy_from_slice(comps);
        Ok(Self { comps: out, dim: comps.len() })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Self { comps: [0.0; MAX_DIM], dim }
    }

    /// Unit vector along `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.comps[axis] = 1.0;
        v
    }

    pub(crate) fn from_fn(dim: usize, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut v = Self::zeros(dim);
        for k in 0..dim {
            v.comps[k] = f(k);
        }
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.comps[..self.dim]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> f64 {
        self.as_slice()[axis]
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for k in 0..self.dim {
            s += self.comps[k] * other.comps[k];
        }
        s
    }

    #[inline]
    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }
}

impl Add for Vector {
    type Output = Vector;
    #[inline]
    fn add(mut self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        for k in 0..self.dim {
            self.comps[k] += rhs.comps[k];
        }
        self
    }
}

impl AddAssign for Vector {
    #[inline]
    fn add_assign(&mut self, rhs: Vector) {
        *self = *self + rhs;
    }
}

impl Sub for Vector {
    type Output = Vector;
    #[inline]
    fn sub(mut self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        for k in 0..self.dim {
            self.comps[k] -= rhs.comps[k];
        }
        self
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    #[inline]
    fn mul(mut self, rhs: f64) -> Vector {
        for k in 0..self.dim {
            self.comps[k] *= rhs;
        }
        self
    }
}

impl Neg for Vector {
    type Output = Vector;
    #[inline]
    fn neg(self) -> Vector {
        self * -1.0
    }
}

#[inline]
fn wrap_coord(c: f64) -> f64 {
    let mut r = c - (c + 0.5).floor();
    // rounding in `c + 0.5` can push the result one ulp outside the interval
    if r >= 0.5 {
        r -= 1.0;
    } else if r < -0.5 {
        r += 1.0;
    }
    r
}

/// A point of the unit torus, every coordinate in `[-1/2, 1/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(Vector);

impl TorusPoint {
    /// Reduce a raw vector modulo one onto the torus.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        Ok(Self::wrap_vector(Vector::new(raw)?))
    }

    #[inline]
    pub fn wrap_vector(mut v: Vector) -> Self {
        for k in 0..v.dim {
            v.comps[k] = wrap_coord(v.comps[k]);
        }
        Self(v)
    }

    pub fn origin(dim: usize) -> Self {
        Self(Vector::zeros(dim))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }

    #[inline]
    pub fn as_vector(&self) -> Vector {
        self.0
    }

    /// Move by `shift` and wrap.
    #[inline]
    pub fn translate(&self, shift: Vector) -> Self {
        Self::wrap_vector(self.0 + shift)
    }

    /// Reflection `x ↦ -x` on the torus (note `-(-1/2)` wraps back to `-1/2`).
    pub fn reflect(&self) -> Self {
        Self::wrap_vector(-self.0)
    }
}

/// Minimal-image representative of `a - b`.
pub fn displacement(a: &TorusPoint, b: &TorusPoint) -> Result<Vector> {
    if a.dim() != b.dim() {
        return Err(domain(format!("dimension mismatch {} vs {}", a.dim(), b.dim())));
    }
    Ok(min_image(a, b))
}

/// Unchecked [`displacement`] for hot loops.
#[inline]
pub(crate) fn min_image(a: &TorusPoint, b: &TorusPoint) -> Vector {
    TorusPoint::wrap_vector(a.0 - b.0).0
}

/// One particle's state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: TorusPoint,
    pub v: Velocity,
}

impl PhasePoint {
    pub fn new(x: TorusPoint, v: Velocity) -> Result<Self> {
        if x.dim() != v.dim() {
            return Err(domain("position and velocity dimensions differ"));
        }
        Ok(Self { x, v })
    }
}

/// `|x - y|²` on the torus plus `|v - w|²` in velocity.
pub fn squared_distance_phase(a: &PhasePoint, b: &PhasePoint) -> Result<f64> {
    if a.x.dim() != b.x.dim() || a.v.dim() != b.v.dim() || a.x.dim() != a.v.dim() {
        return Err(domain("phase points of different dimensions"));
    }
    Ok(phase_gap(a, b))
}

#[inline]
pub(crate) fn phase_gap(a: &PhasePoint, b: &PhasePoint) -> f64 {
    min_image(&a.x, &b.x).norm_squared() + (a.v - b.v).norm_squared()
}

/// Positions and velocities of `N ≥ 1` particles at a common time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    positions: Vec<TorusPoint>,
    velocities: Vec<Velocity>,
    dim: usize,
    pub time: f64,
}

impl ParticleConfig {
    pub fn new(positions: Vec<TorusPoint>, velocities: Vec<Velocity>, time: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(domain("a configuration needs at least one particle"));
        }
        if positions.len() != velocities.len() {
            return Err(domain(format!("{} positions but {} velocities", positions.len(), velocities.len())));
        }
        let dim = positions[0].dim();
        check_dim(dim)?;
        if positions.iter().any(|p| p.dim() != dim) || velocities.iter().any(|v| v.dim() != dim) {
            return Err(domain("mixed dimensions in configuration"));
        }
        if velocities.iter().any(|v| !v.is_finite()) {
            return Err(domain("non-finite velocity"));
        }
        if !(time >= 0.0) {
            return Err(domain(format!("time must be nonnegative, got {time}")));
        }
        Ok(Self { positions, velocities, dim, time })
    }

    pub fn from_points(points: &[PhasePoint], time: f64) -> Result<Self> {
        Self::new(points.iter().map(|p| p.x).collect(), points.iter().map(|p| p.v).collect(), time)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false: configurations hold at least one particle.
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn positions(&self) -> &[TorusPoint] {
        &self.positions
    }

    #[inline]
    pub fn velocities(&self) -> &[Velocity] {
        &self.velocities
    }

    #[inline]
    pub fn particle(&self, i: usize) -> PhasePoint {
        PhasePoint { x: self.positions[i], v: self.velocities[i] }
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        (0..self.len()).map(|i| self.particle(i)).collect()
    }

    /// Replace particle `i`.
    #[inline]
    pub fn set_particle(&mut self, i: usize, x: TorusPoint, v: Velocity) {
        debug_assert_eq!(x.dim(), self.dim);
        self.positions[i] = x;
        self.velocities[i] = v;
    }

    /// Free streaming of every particle for a duration `dt ≥ 0`.
    pub fn stream(&mut self, dt: f64) {
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            *x = x.translate(*v * dt);
        }
        self.time += dt;
    }
}

/// The pair (Z_N, Σ_N) of an interacting and an auxiliary configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledConfig {
    pub z: ParticleConfig,
    pub sigma: ParticleConfig,
}

impl CoupledConfig {
    pub fn new(z: ParticleConfig, sigma: ParticleConfig) -> Result<Self> {
        if z.len() != sigma.len() || z.dim() != sigma.dim() {
            return Err(domain("coupled sides must share N and d"));
        }
        if z.time != sigma.time {
            return Err(domain("coupled sides must share the time stamp"));
        }
        Ok(Self { z, sigma })
    }

    /// Both sides start from the same configuration.
    pub fn diagonal(cfg: ParticleConfig) -> Self {
        Self { sigma: cfg.clone(), z: cfg }
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.z.time
    }

    /// Per-particle mean of the squared phase-space gap between the sides.
    pub fn mean_squared_gap(&self) -> f64 {
        let n = self.z.len();
        let sum = (0..n).map(|i| phase_gap(&self.z.particle(i), &self.sigma.particle(i))).collect::<Vec<_>>();
        crate::metrics::compensated_sum(&sum) / n as f64
    }
}

/// Reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: the stream id selects an
/// independent keystream of the same key, so replicas and particles can be
/// scheduled in any order without changing their draws.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream on the same seed, for a sub-task labelled `label`.
    pub fn derive(&self, label: u64) -> Self {
        Self::new(self.seed, mix_stream_id(self.stream_id, label))
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // multiply-shift; bias below 2^-32 for n < 2^32
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential waiting time of the given rate.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Uniform point of the torus.
    pub fn torus_point(&mut self, dim: usize) -> TorusPoint {
        TorusPoint::wrap_vector(Vector::from_fn(dim, |_| self.uniform() - 0.5))
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64-style mixing of a parent stream id with a child label.
pub fn mix_stream_id(parent: u64, label: u64) -> u64 {
    let mut z =
        parent.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(label).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform periodic grid of `n^dim` nodes on the torus, nodes at
/// `-1/2 + i/n`. Flat indices are row-major (last axis fastest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    pub n: usize,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n == 0 {
            return Err(domain("spatial grid needs at least one node per axis"));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 + i as f64 / self.n as f64
    }

    /// Per-axis indices of a flat index.
    #[inline]
    pub fn unflatten(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for k in (0..self.dim).rev() {
            idx[k] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    #[inline]
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn node(&self, flat: usize) -> TorusPoint {
        let idx = self.unflatten(flat);
        TorusPoint(Vector::from_fn(self.dim, |k| self.coord(idx[k])))
    }

    pub fn nodes(&self) -> Vec<TorusPoint> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Flat index of the node displaced by `offset` (periodic) from `flat`.
    #[inline]
    pub fn offset(&self, flat: usize, axis: usize, offset: isize) -> usize {
        let mut idx = self.unflatten(flat);
        let n = self.n as isize;
        idx[axis] = ((idx[axis] as isize + offset).rem_euclid(n)) as usize;
        self.flatten(&idx)
    }

    /// Multilinear periodic interpolation stencil at `x`: up to `2^dim`
    /// (flat index, weight) pairs with weights summing to one.
    pub fn stencil(&self, x: &TorusPoint) -> Vec<(usize, f64)> {
        let n = self.n as f64;
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let s = (x.coords()[k] + 0.5) * n;
            let fl = s.floor();
            frac[k] = s - fl;
            base[k] = (fl as isize).rem_euclid(self.n as isize) as usize;
        }
        let mut out = Vec::with_capacity(1 << self.dim);
        for corner in 0..(1usize << self.dim) {
            let mut idx = [0usize; MAX_DIM];
            let mut w = 1.0;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    idx[k] = (base[k] + 1) % self.n;
                    w *= frac[k];
                } else {
                    idx[k] = base[k];
                    w *= 1.0 - frac[k];
                }
            }
            out.push((self.flatten(&idx), w));
        }
        out
    }
}
