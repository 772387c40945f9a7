//! Smearing functions on the torus.
//!
//! Two families are shipped:
//!
//! * `Uniform`: φ ≡ 1, the full spatial average.
//! * `Bump(ε)`: φ_ε(x) = (ε + ε^{-d} Φ(x/ε)) / (1 + ε) on the fundamental
//!   cell, with Φ(z) = c_d exp(-1/(1 - |2z|²)) for |z| < 1/2 and zero
//!   otherwise. Φ is C^∞, has unit mass and is supported in the ball of
//!   radius 1/2, so φ_ε is strictly positive, even, of unit mass, and equal
//!   to ε/(1+ε) outside the ball of radius ε/2.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::phase_space::{RandomStream, SpatialGrid, TorusPoint, Vector, MAX_DIM};

/// Serialized form used in experiment configs: `{kind = "bump", epsilon = 0.2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MollifierKind {
    Uniform,
    Bump { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct MollifierSpec {
    kind: MollifierKind,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    kind: MollifierKind,
    dim: usize,
}

impl TryFrom<RawSpec> for MollifierSpec {
    type Error = crate::Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.kind, raw.dim)
    }
}

impl From<MollifierSpec> for RawSpec {
    fn from(s: MollifierSpec) -> Self {
        RawSpec { kind: s.kind, dim: s.dim }
    }
}

/// C_φ = 1/min φ, ‖φ‖∞, ‖∇φ‖∞ and Γ_φ = (1+C_φ⁸)(1+‖φ‖∞⁸)(1+‖∇φ‖∞²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierConstants {
    pub c_phi: f64,
    pub sup_phi: f64,
    pub sup_grad_phi: f64,
    pub gamma_phi: f64,
}

impl MollifierConstants {
    pub fn assemble(c_phi: f64, sup_phi: f64, sup_grad_phi: f64) -> Self {
        let gamma_phi = (1.0 + c_phi.powi(8)) * (1.0 + sup_phi.powi(8)) * (1.0 + sup_grad_phi.powi(2));
        Self { c_phi, sup_phi, sup_grad_phi, gamma_phi }
    }
}

/// Constants of the unnormalized profile exp(-1/(1-s²)), s = |2z|.
#[derive(Clone, Copy, Debug)]
struct BumpProfile {
    /// c_d, so that Φ has unit mass.
    norm: f64,
    /// max Φ = c_d / e.
    sup: f64,
    /// max |∇Φ|.
    sup_grad: f64,
}

fn raw_profile(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s2)).exp()
    }
}

/// ∫_0^1 s^{d-1} exp(-1/(1-s²)) ds by composite Simpson; the integrand is
/// flat to all orders at s = 1.
fn radial_moment(dim: usize) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |s: f64| s.powi(dim as i32 - 1) * raw_profile(s * s);
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

fn unit_sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => unreachable!(),
    }
}

impl BumpProfile {
    fn compute(dim: usize) -> Self {
        // ∫ exp(-1/(1-|2z|²)) dz = |S^{d-1}| 2^{-d} ∫_0^1 s^{d-1} e^{-1/(1-s²)} ds
        let mass = unit_sphere_area(dim) * 0.5f64.powi(dim as i32) * radial_moment(dim);
        let norm = 1.0 / mass;
        // |∇Φ|(r) = c_d e^{-1/(1-4r²)} 8r/(1-4r²)², r < 1/2
        let grad = |r: f64| {
            let a = 1.0 - 4.0 * r * r;
            if a <= 0.0 {
                0.0
            } else {
                norm * (-1.0 / a).exp() * 8.0 * r / (a * a)
            }
        };
        let n = 100_000;
        let (mut best_r, mut best) = (0.0, 0.0);
        for i in 0..n {
            let r = 0.5 * i as f64 / n as f64;
            let g = grad(r);
            if g > best {
                best = g;
                best_r = r;
            }
        }
        // golden-section refinement around the scan maximum
        let h = 0.5 / n as f64;
        let (mut lo, mut hi) = ((best_r - h).max(0.0), (best_r + h).min(0.5));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if grad(m1) < grad(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let sup_grad = grad(0.5 * (lo + hi)).max(best);
        Self { norm, sup: norm * (-1.0f64).exp(), sup_grad }
    }

    fn get(dim: usize) -> &'static Self {
        static CACHE: [OnceLock<BumpProfile>; MAX_DIM] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        CACHE[dim - 1].get_or_init(|| Self::compute(dim))
    }

    #[inline]
    fn value(&self, z2: f64) -> f64 {
        self.norm * raw_profile(4.0 * z2)
    }
}

impl MollifierSpec {
    pub fn new(kind: MollifierKind, dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(domain(format!("mollifier dimension {dim} out of range")));
        }
        if let MollifierKind::Bump { epsilon } = kind {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(domain(format!("bump epsilon must lie in (0, 1], got {epsilon}")));
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(MollifierKind::Uniform, dim)
    }

    pub fn bump(dim: usize, epsilon: f64) -> Result<Self> {
        Self::new(MollifierKind::Bump { epsilon }, dim)
    }

    pub fn kind(&self) -> MollifierKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.kind {
            MollifierKind::Uniform => None,
            MollifierKind::Bump { epsilon } => Some(epsilon),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, MollifierKind::Uniform)
    }

    /// φ at a torus point.
    pub fn evaluate(&self, x: &TorusPoint) -> f64 {
        debug_assert_eq!(x.dim(), self.dim);
        self.evaluate_sq(x.as_vector().norm_squared())
    }

    /// φ as a function of |x|², x a minimal-image representative.
    #[inline]
    pub(crate) fn evaluate_sq(&self, r2: f64) -> f64 {
        match self.kind {
            MollifierKind::Uniform => 1.0,
            MollifierKind::Bump { epsilon } => {
                let base = epsilon / (1.0 + epsilon);
                if 4.0 * r2 >= epsilon * epsilon {
                    return base;
                }
                let profile = BumpProfile::get(self.dim);
                let scale = epsilon.powi(-(self.dim as i32));
                base + scale * profile.value(r2 / (epsilon * epsilon)) / (1.0 + epsilon)
            }
        }
    }

    /// Weight φ(x - y) for two torus points.
    #[inline]
    pub(crate) fn kernel(&self, x: &TorusPoint, y: &TorusPoint) -> f64 {
        match self.kind {
            MollifierKind::Uniform => 1.0,
            MollifierKind::Bump { .. } => {
                self.evaluate_sq(crate::phase_space::min_image(x, y).norm_squared())
            }
        }
    }

    pub fn constants(&self) -> MollifierConstants {
        match self.kind {
            MollifierKind::Uniform => MollifierConstants::assemble(1.0, 1.0, 0.0),
            MollifierKind::Bump { epsilon } => {
                let p = BumpProfile::get(self.dim);
                let d = self.dim as i32;
                let min = epsilon / (1.0 + epsilon);
                let sup = (epsilon + epsilon.powi(-d) * p.sup) / (1.0 + epsilon);
                let grad = epsilon.powi(-(d + 1)) * p.sup_grad / (1.0 + epsilon);
                MollifierConstants::assemble(1.0 / min, sup, grad)
            }
        }
    }

    /// Draw a shift ξ with density φ.
    ///
    /// The bump family is the mixture (ε/(1+ε))·Uniform + (1/(1+ε))·Φ_ε, so a
    /// draw picks a branch first; Φ is sampled by rejection from its
    /// bounding cube.
    pub fn sample_shift(&self, rng: &mut RandomStream) -> TorusPoint {
        match self.kind {
            MollifierKind::Uniform => rng.torus_point(self.dim),
            MollifierKind::Bump { epsilon } => {
                if rng.uniform() * (1.0 + epsilon) < epsilon {
                    return rng.torus_point(self.dim);
                }
                let p = BumpProfile::get(self.dim);
                loop {
                    let z = Vector::from_fn(self.dim, |_| rng.uniform() - 0.5);
                    if rng.uniform() * p.sup < p.value(z.norm_squared()) {
                        return TorusPoint::wrap_vector(z * epsilon);
                    }
                }
            }
        }
    }

    /// ∫ φ(x) cos(2π m x_a) dx, which by symmetry does not depend on the
    /// axis `a`. Convolution maps cos(2π m x_a) to this multiple of itself.
    pub fn cosine_coefficient(&self, m: u32) -> f64 {
        if m == 0 {
            return 1.0;
        }
        match self.kind {
            MollifierKind::Uniform => 0.0,
            MollifierKind::Bump { epsilon } => {
                let k = 2.0 * std::f64::consts::PI * m as f64 * epsilon;
                profile_cosine_transform(self.dim, k) / (1.0 + epsilon)
            }
        }
    }

    /// Periodic discrete convolution of a grid field with φ.
    pub fn convolve_grid(&self, grid: &SpatialGrid, field: &[f64]) -> Result<Vec<f64>> {
        DiscreteKernel::new(self, grid)?.apply(field)
    }
}

/// ∫ Φ(z) cos(k z_1) dz via the marginal of Φ along the first axis.
/// Midpoint rules; Φ is smooth and compactly supported so they converge fast.
fn profile_cosine_transform(dim: usize, k: f64) -> f64 {
    let p = BumpProfile::get(dim);
    let n = if dim == 1 { 4000 } else { 600 };
    let h = 1.0 / n as f64;
    let marginal = |z1: f64| -> f64 {
        let rest = 0.25 - z1 * z1;
        if rest <= 0.0 {
            return 0.0;
        }
        match dim {
            1 => p.value(z1 * z1),
            _ => {
                // integrate over the orthogonal radius s ∈ (0, √rest)
                let smax = rest.sqrt();
                let m = 400;
                let hs = smax / m as f64;
                let mut acc = 0.0;
                for j in 0..m {
                    let s = (j as f64 + 0.5) * hs;
                    let w = if dim == 2 { 2.0 } else { 2.0 * std::f64::consts::PI * s };
                    acc += w * p.value(z1 * z1 + s * s);
                }
                acc * hs
            }
        }
    };
    (0..n)
        .map(|i| {
            let z1 = -0.5 + (i as f64 + 0.5) * h;
            marginal(z1) * (k * z1).cos()
        })
        .sum::<f64>()
        * h
}

/// φ sampled on a periodic grid, normalized so its rectangle-rule mass is
/// exactly one. Convolution with it preserves the discrete total mass and
/// constants even when the bump is not resolved by the grid.
#[derive(Clone, Debug)]
pub struct DiscreteKernel {
    grid: SpatialGrid,
    uniform: bool,
    /// Weight for each flat offset, already multiplied by the cell volume.
    weights: Vec<f64>,
}

impl DiscreteKernel {
    pub fn new(spec: &MollifierSpec, grid: &SpatialGrid) -> Result<Self> {
        if spec.dim() != grid.dim {
            return Err(domain("mollifier and grid dimensions differ"));
        }
        let origin = TorusPoint::origin(grid.dim);
        // offset index k holds φ at the displacement k/n (mod 1)
        let mut weights: Vec<f64> = (0..grid.len())
            .map(|k| {
                let idx = grid.unflatten(k);
                let x = Vector::from_fn(grid.dim, |a| idx[a] as f64 / grid.n as f64);
                spec.kernel(&TorusPoint::wrap_vector(x), &origin)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { grid: *grid, uniform: spec.is_uniform(), weights })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// `out_i = Σ_j φ(x_i - x_j) f_j · cell volume`.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        let len = self.grid.len();
        if field.len() != len {
            return Err(domain(format!("field has {} values, grid has {len} nodes", field.len())));
        }
        if self.uniform {
            let mean = crate::metrics::compensated_sum(field) / len as f64;
            return Ok(vec![mean; len]);
        }
        let g = &self.grid;
        let n = g.n;
        let mut out = vec![0.0; len];
        match g.dim {
            1 => {
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let mut s = 0.0;
                    for (j, f) in field.iter().enumerate() {
                        s += self.weights[(i + n - j) % n] * f;
                    }
                    *o = s;
                });
            }
            _ => {
                let idx: Vec<_> = (0..len).map(|k| g.unflatten(k)).collect();
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let mut s = 0.0;
                    for (j, f) in field.iter().enumerate() {
                        let mut off = 0;
                        for a in 0..g.dim {
                            off = off * n + (idx[i][a] + n - idx[j][a]) % n;
                        }
                        s += self.weights[off] * f;
                    }
                    *o = s;
                });
            }
        }
        Ok(out)
    }
}
