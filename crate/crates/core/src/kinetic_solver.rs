//! Semi-Lagrangian phase-space solver for the BGK equation
//!
//! ```text
//! ∂_t f + v·∇_x f = ρ M_{u,T} - f
//! ```
//!
//! in its plain form (fields are the local moments of `f`) and its
//! regularized form (fields are the φ-smeared moments). One step of size
//! `dt` is the first-order mild update
//!
//! ```text
//! f(x, v, t+dt) = e^{-dt} f(x - v dt, v, t) + (1 - e^{-dt}) (ρM)(x - v dt, v, t)
//! ```
//!
//! with periodic multilinear interpolation at the foot points. The discrete
//! Maxwellian is the analytic density at the velocity nodes, rescaled per
//! spatial node so that its trapezoidal mass is exactly one.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical_fields::{HydroFields, PhaseDensity};
use crate::error::{config, domain, Error, Result};
use crate::maxwellian::MaxwellianParams;
use crate::mollifier::{DiscreteKernel, MollifierSpec};
use crate::phase_space::{PhasePoint, RandomStream, SpatialGrid, TorusPoint, Vector, MAX_DIM};

/// Largest step accepted by [`KineticSolution::step`].
pub const MAX_DT: f64 = 0.1;

/// Discretization of 𝕋^d × [-v_max, v_max]^d.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub dim: usize,
    pub nx: usize,
    pub nv: usize,
    pub v_max: f64,
}

impl PhaseGrid {
    pub fn new(dim: usize, nx: usize, nv: usize, v_max: f64) -> Result<Self> {
        SpatialGrid::new(dim, nx)?;
        if nx < 4 || nv < 4 {
            return Err(domain(format!("grid needs nx, nv >= 4 (got {nx}, {nv})")));
        }
        if !(v_max > 0.0) || !v_max.is_finite() {
            return Err(domain(format!("v_max must be positive, got {v_max}")));
        }
        Ok(Self { dim, nx, nv, v_max })
    }

    /// Velocity box sized from the datum: `v_max = max|u_k| + 6 √T_max`.
    pub fn for_datum(ic: &InitialCondition, nx: usize, nv: usize) -> Result<Self> {
        Self::new(ic.dim(), nx, nv, ic.u_max() + 6.0 * ic.t_max().sqrt())
    }

    #[inline]
    pub fn spatial(&self) -> SpatialGrid {
        SpatialGrid { dim: self.dim, n: self.nx }
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / (self.nv - 1) as f64
    }

    #[inline]
    pub fn n_space(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    #[inline]
    pub fn n_vel(&self) -> usize {
        self.nv.pow(self.dim as u32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_space() * self.n_vel()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn vel_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for k in (0..self.dim).rev() {
            idx[k] = flat % self.nv;
            flat /= self.nv;
        }
        idx
    }

    pub fn velocity(&self, flat: usize) -> Vector {
        let idx = self.vel_index(flat);
        let dv = self.dv();
        Vector::from_fn(self.dim, |k| -self.v_max + idx[k] as f64 * dv)
    }

    /// Trapezoidal weight of a velocity node, including dv^d.
    pub fn velocity_weight(&self, flat: usize) -> f64 {
        let idx = self.vel_index(flat);
        let mut w = self.dv().powi(self.dim as i32);
        for &i in &idx[..self.dim] {
            if i == 0 || i == self.nv - 1 {
                w *= 0.5;
            }
        }
        w
    }

    fn velocity_nodes(&self) -> (Vec<Vector>, Vec<f64>) {
        (0..self.n_vel()).map(|j| (self.velocity(j), self.velocity_weight(j))).unzip()
    }

    /// Phase-space cell weight of `(x-node, v-node)`.
    pub fn cell_weight(&self, v_flat: usize) -> f64 {
        self.spatial().cell_volume() * self.velocity_weight(v_flat)
    }
}

/// `w(x) = mean + amplitude · cos(2π x_axis)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub mean: f64,
    pub amplitude: f64,
    pub axis: usize,
}

impl WeightProfile {
    pub fn constant(mean: f64) -> Self {
        Self { mean, amplitude: 0.0, axis: 0 }
    }

    #[inline]
    pub fn at(&self, x: &TorusPoint) -> f64 {
        self.smeared_at(x, 1.0)
    }

    /// Value after convolution with a kernel whose first cosine
    /// coefficient is `coeff`.
    #[inline]
    fn smeared_at(&self, x: &TorusPoint, coeff: f64) -> f64 {
        self.mean + self.amplitude * coeff * (2.0 * std::f64::consts::PI * x.coords()[self.axis]).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: WeightProfile,
    pub maxwellian: MaxwellianParams,
}

/// Initial datum `f₀(x, v) = Σ_k w_k(x) M_{u_k, T_k}(v)` with smooth positive
/// weights whose spatial means sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    components: Vec<MixtureComponent>,
}

impl InitialCondition {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| config("empty mixture"))?;
        let dim = first.maxwellian.dim();
        let mut total = 0.0;
        for c in &components {
            if c.maxwellian.dim() != dim {
                return Err(config("mixture components of different dimensions"));
            }
            if c.weight.axis >= dim {
                return Err(config("weight profile axis out of range"));
            }
            if !(c.maxwellian.t > 0.0) {
                return Err(config("mixture components need positive temperature"));
            }
            if !(c.weight.mean > c.weight.amplitude.abs()) {
                return Err(config("weight profiles must be strictly positive"));
            }
            total += c.weight.mean;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(config(format!("mixture weights must average to one, got {total}")));
        }
        Ok(Self { components })
    }

    pub fn global_maxwellian(params: MaxwellianParams) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: WeightProfile::constant(1.0), maxwellian: params }])
    }

    /// Spatially homogeneous `½(M_{u₀e₁,T} + M_{-u₀e₁,T})`.
    pub fn symmetric_mixture(dim: usize, u0: f64, t: f64) -> Result<Self> {
        let e1 = Vector::unit(dim, 0);
        Self::new(vec![
            MixtureComponent {
                weight: WeightProfile::constant(0.5),
                maxwellian: MaxwellianParams::new(e1 * u0, t)?,
            },
            MixtureComponent {
                weight: WeightProfile::constant(0.5),
                maxwellian: MaxwellianParams::new(e1 * -u0, t)?,
            },
        ])
    }

    /// `w(x) M_{u₀e₁,T₁} + (1 - w(x)) M_{-u₀e₁,T₂}` with
    /// `w(x) = 1/2 + 3/10 cos(2π x₁)`, `u₀ = 1/2`, `T₁ = 1`, `T₂ = 1/2`.
    pub fn default_inhomogeneous(dim: usize) -> Result<Self> {
        let e1 = Vector::unit(dim, 0);
        Self::new(vec![
            MixtureComponent {
                weight: WeightProfile { mean: 0.5, amplitude: 0.3, axis: 0 },
                maxwellian: MaxwellianParams::new(e1 * 0.5, 1.0)?,
            },
            MixtureComponent {
                weight: WeightProfile { mean: 0.5, amplitude: -0.3, axis: 0 },
                maxwellian: MaxwellianParams::new(e1 * -0.5, 0.5)?,
            },
        ])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].maxwellian.dim()
    }

    pub fn t_min(&self) -> f64 {
        self.components.iter().map(|c| c.maxwellian.t).fold(f64::INFINITY, f64::min)
    }

    pub fn t_max(&self) -> f64 {
        self.components.iter().map(|c| c.maxwellian.t).fold(0.0, f64::max)
    }

    pub fn u_max(&self) -> f64 {
        self.components.iter().map(|c| c.maxwellian.u.max_abs()).fold(0.0, f64::max)
    }

    pub fn density(&self, x: &TorusPoint, v: &Vector) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight.at(x) * c.maxwellian.density_unchecked((*v - c.maxwellian.u).norm_squared()))
            .sum()
    }

    pub fn rho(&self, x: &TorusPoint) -> f64 {
        self.components.iter().map(|c| c.weight.at(x)).sum()
    }

    fn fields_with(&self, x: &TorusPoint, coeff: f64) -> HydroFields {
        let d = self.dim() as f64;
        let mut rho = 0.0;
        let mut mom = Vector::zeros(self.dim());
        let mut energy = 0.0;
        for c in &self.components {
            let w = c.weight.smeared_at(x, coeff);
            let m = &c.maxwellian;
            rho += w;
            mom += m.u * w;
            energy += w * (d * m.t + m.u.norm_squared());
        }
        let u = mom * (1.0 / rho);
        HydroFields { rho, u, t: ((energy / rho - u.norm_squared()) / d).max(0.0) }
    }

    /// Exact local fields ρ₀, u₀, T₀ at `x`.
    pub fn plain_fields(&self, x: &TorusPoint) -> HydroFields {
        self.fields_with(x, 1.0)
    }

    /// ∫ min_x f₀(x, v) dv over the grid nodes: the constant C₂ of the
    /// lower envelope.
    pub fn lower_envelope_mass(&self, grid: &PhaseGrid) -> f64 {
        let nodes = grid.spatial().nodes();
        (0..grid.n_vel())
            .map(|j| {
                let v = grid.velocity(j);
                let min = nodes.iter().map(|x| self.density(x, &v)).fold(f64::INFINITY, f64::min);
                min * grid.velocity_weight(j)
            })
            .sum()
    }

    /// `(C₁, α)` with `f₀ ≤ C₁ e^{-α|v|²}` on the grid, `α = 1/(4 T_max)`.
    pub fn gaussian_bound(&self, grid: &PhaseGrid) -> (f64, f64) {
        let alpha = 1.0 / (4.0 * self.t_max());
        let nodes = grid.spatial().nodes();
        let mut c1 = 0.0f64;
        for j in 0..grid.n_vel() {
            let v = grid.velocity(j);
            let boost = (alpha * v.norm_squared()).exp();
            for x in &nodes {
                c1 = c1.max(self.density(x, &v) * boost);
            }
        }
        (c1, alpha)
    }
}

impl PhaseDensity for InitialCondition {
    fn dim(&self) -> usize {
        InitialCondition::dim(self)
    }

    fn sample(&self, rng: &mut RandomStream) -> PhasePoint {
        let bound: f64 = self.components.iter().map(|c| c.weight.mean + c.weight.amplitude.abs()).sum();
        let x = loop {
            let x = rng.torus_point(self.dim());
            if rng.uniform() * bound < self.rho(&x) {
                break x;
            }
        };
        let mut pick = rng.uniform() * self.rho(&x);
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            let w = c.weight.at(&x);
            if pick < w {
                chosen = c;
                break;
            }
            pick -= w;
        }
        PhasePoint { x, v: chosen.maxwellian.sample(rng) }
    }

    fn smeared_fields(&self, spec: &MollifierSpec, x: &TorusPoint) -> Result<HydroFields> {
        if spec.dim() != self.dim() || x.dim() != self.dim() {
            return Err(domain("dimension mismatch"));
        }
        Ok(self.fields_with(x, spec.cosine_coefficient(1)))
    }
}

/// Which equation the solution follows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Plain,
    Regularized { mollifier: MollifierSpec },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionDiagnostics {
    pub time: f64,
    /// sup f (1 + |v|^q).
    pub nq: f64,
    /// Minimum of the local density ρ.
    pub rho_min: f64,
    /// Minimum of the smeared density ρ^φ (equal to `rho_min` for the plain model).
    pub rho_relax_min: f64,
    /// Minimum of the temperature driving the relaxation (T^φ or T).
    pub t_min: f64,
    pub t_max: f64,
    pub u_max: f64,
    /// sup |∇_x f| (1 + |v|^q), centered differences.
    pub grad_nq: f64,
    pub mass: f64,
}

/// Velocity moments at each spatial node.
struct Moments {
    m0: Vec<f64>,
    m1: Vec<Vector>,
    /// ∫ f |v|² dv
    m2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KineticSolution {
    grid: PhaseGrid,
    /// Row-major (x-node, v-node).
    values: Vec<f64>,
    pub time: f64,
    model: Model,
}

impl KineticSolution {
    /// Sample the datum on the grid and renormalize to unit mass.
    pub fn init(ic: &InitialCondition, grid: PhaseGrid, model: Model) -> Result<Self> {
        if ic.dim() != grid.dim {
            return Err(config("datum and grid dimensions differ"));
        }
        if let Model::Regularized { mollifier } = &model {
            if mollifier.dim() != grid.dim {
                return Err(config("mollifier and grid dimensions differ"));
            }
        }
        let need_dv = ic.t_min().sqrt() / 4.0;
        if grid.dv() > need_dv * (1.0 + 1e-12) {
            return Err(config(format!(
                "velocity spacing {:.4} does not resolve the narrowest component (need <= {need_dv:.4})",
                grid.dv()
            )));
        }
        let need_vmax = ic.u_max() + 6.0 * ic.t_max().sqrt();
        if grid.v_max < need_vmax * (1.0 - 1e-12) {
            return Err(config(format!(
                "v_max {:.4} truncates the datum (need >= {need_vmax:.4})",
                grid.v_max
            )));
        }
        let sp = grid.spatial();
        let nvl = grid.n_vel();
        let (vel, _) = grid.velocity_nodes();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(nvl).enumerate().for_each(|(ix, row)| {
            let x = sp.node(ix);
            for (j, f) in row.iter_mut().enumerate() {
                *f = ic.density(&x, &vel[j]);
            }
        });
        let mut sol = Self { grid, values, time: 0.0, model };
        let mass = sol.mass();
        for f in &mut sol.values {
            *f /= mass;
        }
        Ok(sol)
    }

    /// Wrap raw grid values (row-major, x-major).
    pub fn from_values(grid: PhaseGrid, values: Vec<f64>, time: f64, model: Model) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(domain(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        if values.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(domain("grid values must be finite and nonnegative"));
        }
        Ok(Self { grid, values, time, model })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    #[inline]
    pub fn value(&self, x_flat: usize, v_flat: usize) -> f64 {
        self.values[x_flat * self.grid.n_vel() + v_flat]
    }

    /// Trapezoidal total mass.
    pub fn mass(&self) -> f64 {
        let nvl = self.grid.n_vel();
        let (_, w) = self.grid.velocity_nodes();
        let per_x: Vec<f64> =
            self.values.chunks(nvl).map(|row| row.iter().zip(&w).map(|(f, w)| f * w).sum()).collect();
        crate::metrics::compensated_sum(&per_x) * self.grid.spatial().cell_volume()
    }

    fn moments(&self) -> Moments {
        let nvl = self.grid.n_vel();
        let (vel, w) = self.grid.velocity_nodes();
        let dim = self.grid.dim;
        let rows: Vec<(f64, Vector, f64)> = self
            .values
            .par_chunks(nvl)
            .map(|row| {
                let mut m0 = 0.0;
                let mut m1 = Vector::zeros(dim);
                let mut m2 = 0.0;
                for ((f, v), w) in row.iter().zip(&vel).zip(&w) {
                    let fw = f * w;
                    m0 += fw;
                    m1 += *v * fw;
                    m2 += fw * v.norm_squared();
                }
                (m0, m1, m2)
            })
            .collect();
        let mut m = Moments { m0: vec![], m1: vec![], m2: vec![] };
        for (a, b, c) in rows {
            m.m0.push(a);
            m.m1.push(b);
            m.m2.push(c);
        }
        m
    }

    fn fields_from_moments(&self, m0: &[f64], m1: &[Vector], m2: &[f64]) -> Result<Vec<HydroFields>> {
        let d = self.grid.dim as f64;
        m0.iter()
            .zip(m1)
            .zip(m2)
            .enumerate()
            .map(|(i, ((&rho, &mom), &e))| {
                if !(rho > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "local mass {rho:e} at spatial node {i} (t = {})",
                        self.time
                    )));
                }
                let u = mom * (1.0 / rho);
                let t = ((e / rho - u.norm_squared()) / d).max(0.0);
                Ok(HydroFields { rho, u, t })
            })
            .collect()
    }

    /// Local ρ, u, T at each spatial node.
    pub fn hydro_fields(&self) -> Result<Vec<HydroFields>> {
        let m = self.moments();
        self.fields_from_moments(&m.m0, &m.m1, &m.m2)
    }

    /// ρ^φ, u^φ, T^φ at each spatial node; T^φ is centered at u^φ(x).
    pub fn smeared_fields(&self, spec: &MollifierSpec) -> Result<Vec<HydroFields>> {
        let kernel = DiscreteKernel::new(spec, &self.grid.spatial())?;
        self.smeared_with(&kernel)
    }

    fn smeared_with(&self, kernel: &DiscreteKernel) -> Result<Vec<HydroFields>> {
        let m = self.moments();
        let dim = self.grid.dim;
        let s0 = kernel.apply(&m.m0)?;
        let s2 = kernel.apply(&m.m2)?;
        let mut s1 = vec![Vector::zeros(dim); m.m1.len()];
        for k in 0..dim {
            let comp: Vec<f64> = m.m1.iter().map(|v| v.get(k)).collect();
            let conv = kernel.apply(&comp)?;
            for (dst, c) in s1.iter_mut().zip(conv) {
                *dst += Vector::unit(dim, k) * c;
            }
        }
        self.fields_from_moments(&s0, &s1, &s2)
    }

    /// The fields that drive relaxation under this solution's model.
    pub fn model_fields(&self) -> Result<Vec<HydroFields>> {
        match &self.model {
            Model::Plain => self.hydro_fields(),
            Model::Regularized { mollifier } => self.smeared_fields(mollifier),
        }
    }

    /// Free transport by `dt`: `f(x, v) ← f(x - v dt, v)`.
    pub fn transport(&self, dt: f64) -> Result<Self> {
        if !(dt >= 0.0) {
            return Err(domain(format!("negative or NaN time step {dt}")));
        }
        let values = self.transported(&self.values, dt);
        Ok(Self { values, time: self.time + dt, ..self.clone() })
    }

    fn transported(&self, src: &[f64], dt: f64) -> Vec<f64> {
        let grid = &self.grid;
        let sp = grid.spatial();
        let nvl = grid.n_vel();
        let nx = grid.nx;
        // per velocity node and axis: foot-point offset in cells, split into
        // an integer part and a fraction
        let shifts: Vec<[(usize, f64); MAX_DIM]> = (0..nvl)
            .map(|j| {
                let v = grid.velocity(j);
                let mut s = [(0usize, 0.0); MAX_DIM];
                for (k, slot) in s.iter_mut().enumerate().take(grid.dim) {
                    let cells = -v.get(k) * dt * nx as f64;
                    let fl = cells.floor();
                    *slot = ((fl as i64).rem_euclid(nx as i64) as usize, cells - fl);
                }
                s
            })
            .collect();
        let corners = 1usize << grid.dim;
        let mut out = vec![0.0; src.len()];
        out.par_chunks_mut(nvl).enumerate().for_each(|(ix, row)| {
            let base = sp.unflatten(ix);
            for (j, dst) in row.iter_mut().enumerate() {
                let sh = &shifts[j];
                let mut acc = 0.0;
                for c in 0..corners {
                    let mut w = 1.0;
                    let mut flat = 0;
                    for k in 0..grid.dim {
                        let (off, frac) = sh[k];
                        let (i, wk) = if c >> k & 1 == 1 {
                            ((base[k] + off + 1) % nx, frac)
                        } else {
                            ((base[k] + off) % nx, 1.0 - frac)
                        };
                        w *= wk;
                        flat = flat * nx + i;
                    }
                    if w != 0.0 {
                        acc += w * src[flat * nvl + j];
                    }
                }
                *dst = acc;
            }
        });
        out
    }

    /// One mild-form step.
    pub fn step(&self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(domain(format!("time step must be positive, got {dt}")));
        }
        if dt > MAX_DT {
            return Err(domain(format!("time step {dt} exceeds the limit {MAX_DT}")));
        }
        let fields = self.model_fields()?;
        self.step_with_fields(dt, &fields)
    }

    fn step_with_fields(&self, dt: f64, fields: &[HydroFields]) -> Result<Self> {
        let nvl = self.grid.n_vel();
        let (vel, w) = self.grid.velocity_nodes();
        let keep = (-dt).exp();
        let relax = -(-dt).exp_m1();
        if let Some((i, f)) = fields.iter().enumerate().find(|(_, f)| !(f.t > 0.0) || !f.t.is_finite()) {
            return Err(self.failure(format!("relaxation temperature {} at spatial node {i}", f.t)));
        }
        let mut g = vec![0.0; self.values.len()];
        g.par_chunks_mut(nvl).enumerate().for_each(|(ix, row)| {
            let fl = &fields[ix];
            let m = fl.maxwellian();
            let src = &self.values[ix * nvl..(ix + 1) * nvl];
            let mut norm = 0.0;
            for (j, dst) in row.iter_mut().enumerate() {
                let mj = m.density_unchecked((vel[j] - m.u).norm_squared());
                *dst = mj;
                norm += mj * w[j];
            }
            let scale = relax * fl.rho / norm;
            for (dst, f) in row.iter_mut().zip(src) {
                *dst = keep * f + scale * *dst;
            }
        });
        let mut values = self.transported(&g, dt);
        let mut bad = None;
        for (k, f) in values.iter_mut().enumerate() {
            if !f.is_finite() {
                bad = Some(k);
                break;
            }
            if *f < 0.0 {
                *f = 0.0;
            }
        }
        if let Some(k) = bad {
            return Err(self.failure(format!("non-finite value at cell {k}")));
        }
        Ok(Self { values, time: self.time + dt, ..self.clone() })
    }

    fn failure(&self, message: String) -> Error {
        let mut dump = String::new();
        let _ = writeln!(dump, "time = {}", self.time);
        let _ = writeln!(dump, "grid = {:?}", self.grid);
        let _ = writeln!(dump, "model = {:?}", self.model);
        match self.diagnostics(self.grid.dim + 3) {
            Ok(d) => {
                let _ = writeln!(dump, "last diagnostics = {d:?}");
            }
            Err(e) => {
                let _ = writeln!(dump, "diagnostics unavailable: {e}");
            }
        }
        Error::NumericalFailure { message, diagnostics: dump }
    }

    pub fn diagnostics(&self, q: usize) -> Result<SolutionDiagnostics> {
        let plain = self.hydro_fields()?;
        let relax = self.model_fields()?;
        let nvl = self.grid.n_vel();
        let sp = self.grid.spatial();
        let weight: Vec<f64> = (0..nvl).map(|j| 1.0 + self.grid.velocity(j).norm().powi(q as i32)).collect();
        let nq = self
            .values
            .chunks(nvl)
            .flat_map(|row| row.iter().zip(&weight).map(|(f, w)| f * w))
            .fold(0.0, f64::max);
        let two_dx = 2.0 * self.grid.dx();
        let grad_nq = (0..sp.len())
            .into_par_iter()
            .map(|ix| {
                let mut best = 0.0f64;
                for j in 0..nvl {
                    let mut g2 = 0.0;
                    for k in 0..self.grid.dim {
                        let fwd = self.value(sp.offset(ix, k, 1), j);
                        let bwd = self.value(sp.offset(ix, k, -1), j);
                        g2 += ((fwd - bwd) / two_dx).powi(2);
                    }
                    best = best.max(g2.sqrt() * weight[j]);
                }
                best
            })
            .reduce(|| 0.0, f64::max);
        let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        Ok(SolutionDiagnostics {
            time: self.time,
            nq,
            rho_min: fold_min(&mut plain.iter().map(|f| f.rho)),
            rho_relax_min: fold_min(&mut relax.iter().map(|f| f.rho)),
            t_min: fold_min(&mut relax.iter().map(|f| f.t)),
            t_max: relax.iter().map(|f| f.t).fold(0.0, f64::max),
            u_max: relax.iter().map(|f| f.u.norm()).fold(0.0, f64::max),
            grad_nq,
            mass: self.mass(),
        })
    }

    /// Integrate to `t_end`, recording diagnostics (norm exponent `q`)
    /// and the relaxation fields at every step.
    pub fn solve_to(&self, t_end: f64, dt: f64, q: usize) -> Result<SolverRun> {
        if !(t_end >= self.time) {
            return Err(domain(format!("t_end {t_end} precedes the current time {}", self.time)));
        }
        if !(dt > 0.0) || dt > MAX_DT {
            return Err(domain(format!("time step must lie in (0, {MAX_DT}], got {dt}")));
        }
        let kernel = match &self.model {
            Model::Plain => None,
            Model::Regularized { mollifier } => Some(DiscreteKernel::new(mollifier, &self.grid.spatial())?),
        };
        let fields_of = |s: &KineticSolution| match &kernel {
            None => s.hydro_fields(),
            Some(k) => s.smeared_with(k),
        };
        let mut sol = self.clone();
        let mut diagnostics = vec![sol.diagnostics(q)?];
        let mut times = vec![];
        let mut snapshots = vec![];
        let n_steps = ((t_end - self.time) / dt - 1e-9).ceil().max(0.0) as usize;
        for k in 0..n_steps {
            let h = if k + 1 == n_steps { t_end - sol.time } else { dt };
            let fields = fields_of(&sol)?;
            times.push(sol.time);
            snapshots.push(fields.clone());
            if h <= 0.0 {
                continue;
            }
            sol = sol.step_with_fields(h, &fields)?;
            sol.time = self.time + (k + 1) as f64 * dt;
            if k + 1 == n_steps {
                sol.time = t_end;
            }
            diagnostics.push(sol.diagnostics(q)?);
        }
        times.push(sol.time);
        snapshots.push(fields_of(&sol)?);
        let series = FieldSeries::new(self.grid.spatial(), times, snapshots)?;
        Ok(SolverRun { solution: sol, diagnostics, series })
    }

    /// ∫∫ (1 + |v|²) |a - b| by trapezoidal quadrature.
    pub fn weighted_l1_distance(&self, other: &KineticSolution) -> Result<f64> {
        if self.grid != other.grid {
            return Err(domain("solutions live on different grids"));
        }
        if (self.time - other.time).abs() > 1e-9 {
            return Err(domain(format!("solutions at different times {} vs {}", self.time, other.time)));
        }
        let nvl = self.grid.n_vel();
        let wv: Vec<f64> = (0..nvl)
            .map(|j| (1.0 + self.grid.velocity(j).norm_squared()) * self.grid.velocity_weight(j))
            .collect();
        let rows: Vec<f64> = self
            .values
            .chunks(nvl)
            .zip(other.values.chunks(nvl))
            .map(|(a, b)| a.iter().zip(b).zip(&wv).map(|((a, b), w)| (a - b).abs() * w).sum())
            .collect();
        Ok(crate::metrics::compensated_sum(&rows) * self.grid.spatial().cell_volume())
    }

    /// Cell-wise sampler of the normalized grid density.
    pub fn sampler(&self) -> GridSampler {
        GridSampler::new(self)
    }

    /// Flat binary checkpoint plus a JSON sidecar (`<base>.bin`, `<base>.json`).
    pub fn save_checkpoint(&self, base: &Path, diagnostics: &[SolutionDiagnostics]) -> Result<()> {
        let mut bin = Vec::with_capacity(32 + 8 * self.values.len());
        bin.extend_from_slice(&(self.grid.dim as u32).to_le_bytes());
        bin.extend_from_slice(&(self.grid.nx as u32).to_le_bytes());
        bin.extend_from_slice(&(self.grid.nv as u32).to_le_bytes());
        bin.extend_from_slice(&self.grid.v_max.to_le_bytes());
        bin.extend_from_slice(&self.time.to_le_bytes());
        for f in &self.values {
            bin.extend_from_slice(&f.to_le_bytes());
        }
        std::fs::File::create(with_ext(base, "bin"))?.write_all(&bin)?;
        let sidecar = CheckpointSidecar {
            grid: self.grid,
            time: self.time,
            model: self.model,
            diagnostics: diagnostics.to_vec(),
        };
        std::fs::write(with_ext(base, "json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load_checkpoint(base: &Path) -> Result<(Self, Vec<SolutionDiagnostics>)> {
        let mut bin = vec![];
        std::fs::File::open(with_ext(base, "bin"))?.read_to_end(&mut bin)?;
        if bin.len() < 28 {
            return Err(domain("checkpoint shorter than its header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bin[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bin[o..o + 8].try_into().unwrap());
        let grid = PhaseGrid::new(u32_at(0), u32_at(4), u32_at(8), f64_at(12))?;
        let time = f64_at(20);
        let payload = &bin[28..];
        if payload.len() != 8 * grid.len() {
            return Err(domain("checkpoint payload size does not match its header"));
        }
        let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let sidecar: CheckpointSidecar =
            serde_json::from_str(&std::fs::read_to_string(with_ext(base, "json"))?)?;
        if sidecar.grid != grid {
            return Err(domain("checkpoint sidecar describes a different grid"));
        }
        Ok((Self::from_values(grid, values, time, sidecar.model)?, sidecar.diagnostics))
    }
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    grid: PhaseGrid,
    time: f64,
    model: Model,
    diagnostics: Vec<SolutionDiagnostics>,
}

/// Draws phase points from a grid solution: a cell is chosen with
/// probability proportional to its quadrature mass, then the point is
/// jittered uniformly inside the cell.
#[derive(Clone, Debug)]
pub struct GridSampler {
    grid: PhaseGrid,
    cdf: Vec<f64>,
}

impl GridSampler {
    fn new(sol: &KineticSolution) -> Self {
        let nvl = sol.grid.n_vel();
        let w: Vec<f64> = (0..nvl).map(|j| sol.grid.velocity_weight(j)).collect();
        let mut acc = 0.0;
        let cdf = sol
            .values
            .iter()
            .enumerate()
            .map(|(k, f)| {
                acc += f * w[k % nvl];
                acc
            })
            .collect::<Vec<_>>();
        let total = acc;
        Self { grid: sol.grid, cdf: cdf.into_iter().map(|c| c / total).collect() }
    }

    pub fn sample(&self, rng: &mut RandomStream) -> PhasePoint {
        let u = rng.uniform();
        let k = self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1);
        let nvl = self.grid.n_vel();
        let (ix, j) = (k / nvl, k % nvl);
        let sp = self.grid.spatial();
        let dx = self.grid.dx();
        let node = sp.node(ix).as_vector();
        let x = TorusPoint::wrap_vector(Vector::from_fn(self.grid.dim, |a| {
            node.get(a) + (rng.uniform() - 0.5) * dx
        }));
        let dv = self.grid.dv();
        let vn = self.grid.velocity(j);
        let v = Vector::from_fn(self.grid.dim, |a| vn.get(a) + (rng.uniform() - 0.5) * dv);
        PhasePoint { x, v }
    }
}

/// Output of [`KineticSolution::solve_to`].
#[derive(Clone, Debug)]
pub struct SolverRun {
    pub solution: KineticSolution,
    pub diagnostics: Vec<SolutionDiagnostics>,
    series: FieldSeries,
}

impl SolverRun {
    /// Relaxation fields at every step start plus the final time.
    pub fn field_snapshot_series(&self) -> &FieldSeries {
        &self.series
    }

    pub fn into_parts(self) -> (KineticSolution, Vec<SolutionDiagnostics>, FieldSeries) {
        (self.solution, self.diagnostics, self.series)
    }
}

/// A time-dependent field on the torus, queried by the particle simulators.
pub trait FieldSource: Sync {
    fn dim(&self) -> usize;
    /// Fields at `(t, x)`; `t` must lie in the covered interval.
    fn fields_at(&self, t: f64, x: &TorusPoint) -> HydroFields;
    /// Whether queries on `[t0, t1]` are valid.
    fn covers(&self, t0: f64, t1: f64) -> bool;
}

/// Time-independent, spatially uniform fields, e.g. a global Maxwellian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantFields(pub HydroFields);

impl FieldSource for ConstantFields {
    fn dim(&self) -> usize {
        self.0.u.dim()
    }

    fn fields_at(&self, _t: f64, _x: &TorusPoint) -> HydroFields {
        self.0
    }

    fn covers(&self, _t0: f64, _t1: f64) -> bool {
        true
    }
}

/// Snapshots of grid fields: piecewise constant (backward) in time,
/// periodic multilinear in space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSeries {
    grid: SpatialGrid,
    times: Vec<f64>,
    snapshots: Vec<Vec<HydroFields>>,
}

const TIME_TOL: f64 = 1e-9;

impl FieldSeries {
    pub fn new(grid: SpatialGrid, times: Vec<f64>, snapshots: Vec<Vec<HydroFields>>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(domain("field series needs one snapshot per time"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("snapshot times must be strictly increasing"));
        }
        if snapshots.iter().any(|s| s.len() != grid.len()) {
            return Err(domain("snapshot size does not match the grid"));
        }
        Ok(Self { grid, times, snapshots })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn snapshot(&self, k: usize) -> &[HydroFields] {
        &self.snapshots[k]
    }

    /// Index of the last snapshot at or before `t`.
    pub fn snapshot_index(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s <= t + TIME_TOL).saturating_sub(1)
    }

    pub fn interpolate(&self, k: usize, x: &TorusPoint) -> HydroFields {
        let snap = &self.snapshots[k];
        let dim = self.grid.dim;
        let mut out = HydroFields { rho: 0.0, u: Vector::zeros(dim), t: 0.0 };
        for (i, w) in self.grid.stencil(x) {
            let f = &snap[i];
            out.rho += w * f.rho;
            out.u += f.u * w;
            out.t += w * f.t;
        }
        out
    }
}

impl FieldSource for FieldSeries {
    fn dim(&self) -> usize {
        self.grid.dim
    }

    fn fields_at(&self, t: f64, x: &TorusPoint) -> HydroFields {
        self.interpolate(self.snapshot_index(t), x)
    }

    fn covers(&self, t0: f64, t1: f64) -> bool {
        self.times[0] <= t0 + TIME_TOL && *self.times.last().unwrap() >= t1 - TIME_TOL
    }
}

/// CSV table of fields on the spatial grid: `x_0.., rho, u_0.., t`.
pub fn write_field_table<W: std::io::Write>(
    out: W,
    grid: &SpatialGrid,
    fields: &[HydroFields],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..grid.dim).map(|k| format!("x{k}")).collect();
    header.push("rho".into());
    header.extend((0..grid.dim).map(|k| format!("u{k}")));
    header.push("t".into());
    w.write_record(&header)?;
    for (k, f) in fields.iter().enumerate() {
        let mut rec: Vec<String> = grid.node(k).coords().iter().map(|c| format!("{c:.17e}")).collect();
        rec.push(format!("{:.17e}", f.rho));
        rec.extend(f.u.as_slice().iter().map(|c| format!("{c:.17e}")));
        rec.push(format!("{:.17e}", f.t));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maxwellian_ic(dim: usize) -> InitialCondition {
        InitialCondition::global_maxwellian(MaxwellianParams::new(Vector::zeros(dim), 1.0).unwrap()).unwrap()
    }

    #[test]
    fn grid_checks() {
        assert!(PhaseGrid::new(1, 3, 16, 4.0).is_err());
        assert!(PhaseGrid::new(1, 8, 16, 0.0).is_err());
        assert!(PhaseGrid::new(4, 8, 16, 1.0).is_err());
        let g = PhaseGrid::new(2, 8, 5, 2.0).unwrap();
        assert_eq!(g.dv(), 1.0);
        assert_eq!(g.velocity(0).as_slice(), &[-2.0, -2.0]);
        assert_eq!(g.velocity(g.n_vel() - 1).as_slice(), &[2.0, 2.0]);
        let total: f64 = (0..g.n_vel()).map(|j| g.velocity_weight(j)).sum();
        assert!((total - 16.0).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_unresolved_grids() {
        let ic = maxwellian_ic(1);
        assert!(KineticSolution::init(&ic, PhaseGrid::new(1, 8, 16, 6.0).unwrap(), Model::Plain).is_err());
        assert!(KineticSolution::init(&ic, PhaseGrid::new(1, 8, 64, 5.0).unwrap(), Model::Plain).is_err());
        assert!(KineticSolution::init(&ic, PhaseGrid::new(2, 8, 64, 6.0).unwrap(), Model::Plain).is_err());
    }

    #[test]
    fn init_maxwellian_moments() {
        let ic = maxwellian_ic(1);
        let sol = KineticSolution::init(&ic, PhaseGrid::new(1, 16, 64, 6.0).unwrap(), Model::Plain).unwrap();
        assert!((sol.mass() - 1.0).abs() < 1e-12);
        for f in sol.hydro_fields().unwrap() {
            assert!((f.rho - 1.0).abs() < 1e-4);
            assert!(f.u.norm() < 1e-4);
            assert!((f.t - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn symmetric_mixture_fields() {
        let (u0, t) = (1.0, 0.5);
        let ic = InitialCondition::symmetric_mixture(1, u0, t).unwrap();
        let grid = PhaseGrid::for_datum(&ic, 8, 96).unwrap();
        let sol = KineticSolution::init(&ic, grid, Model::Plain).unwrap();
        for f in sol.hydro_fields().unwrap() {
            assert!(f.u.norm() < 1e-12);
            assert!((f.t - (t + u0 * u0)).abs() < 1e-4, "T = {}", f.t);
        }
    }

    #[test]
    fn modulated_density_profile() {
        let e1 = Vector::unit(1, 0);
        let ic = InitialCondition::new(vec![
            MixtureComponent {
                weight: WeightProfile { mean: 0.7, amplitude: 0.4, axis: 0 },
                maxwellian: MaxwellianParams::new(e1 * 0.2, 1.0).unwrap(),
            },
            MixtureComponent {
                weight: WeightProfile { mean: 0.3, amplitude: 0.1, axis: 0 },
                maxwellian: MaxwellianParams::new(e1 * -0.3, 0.6).unwrap(),
            },
        ])
        .unwrap();
        let grid = PhaseGrid::for_datum(&ic, 32, 72).unwrap();
        let sol = KineticSolution::init(&ic, grid, Model::Plain).unwrap();
        let sp = grid.spatial();
        for (k, f) in sol.hydro_fields().unwrap().iter().enumerate() {
            let exact = ic.plain_fields(&sp.node(k));
            assert!((f.rho - exact.rho).abs() < 1e-6);
            assert!((f.u.get(0) - exact.u.get(0)).abs() < 1e-6);
            assert!((f.t - exact.t).abs() < 1e-6);
        }
    }

    #[test]
    fn mixture_validation() {
        let m = MaxwellianParams::new(Vector::zeros(1), 1.0).unwrap();
        let bad_mean = MixtureComponent { weight: WeightProfile::constant(0.9), maxwellian: m };
        assert!(InitialCondition::new(vec![bad_mean]).is_err());
        let neg =
            MixtureComponent { weight: WeightProfile { mean: 1.0, amplitude: 1.5, axis: 0 }, maxwellian: m };
        assert!(InitialCondition::new(vec![neg]).is_err());
        assert!(InitialCondition::new(vec![]).is_err());
    }

    #[test]
    fn galilean_relabeling_shifts_u() {
        let ic = maxwellian_ic(1);
        let grid = PhaseGrid::new(1, 4, 161, 8.0).unwrap();
        let sol = KineticSolution::init(&ic, grid, Model::Plain).unwrap();
        let shift = 10;
        let c = shift as f64 * grid.dv();
        let nvl = grid.n_vel();
        let mut values = vec![0.0; grid.len()];
        for ix in 0..grid.n_space() {
            for j in shift..nvl {
                values[ix * nvl + j] = sol.value(ix, j - shift);
            }
        }
        let moved = KineticSolution::from_values(grid, values, 0.0, Model::Plain).unwrap();
        let before = sol.hydro_fields().unwrap();
        let after = moved.hydro_fields().unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((b.u.get(0) - a.u.get(0) - c).abs() < 1e-6);
        }
    }

    #[test]
    fn smeared_fields_special_cases() {
        let ic = InitialCondition::default_inhomogeneous(1).unwrap();
        let grid = PhaseGrid::for_datum(&ic, 32, 80).unwrap();
        let sol = KineticSolution::init(&ic, grid, Model::Plain).unwrap();
        let uni = sol.smeared_fields(&MollifierSpec::uniform(1).unwrap()).unwrap();
        assert!(uni.iter().all(|f| (f.rho - uni[0].rho).abs() < 1e-14));
        assert!((uni[0].rho - 1.0).abs() < 1e-12);

        let flat =
            KineticSolution::init(&maxwellian_ic(1), PhaseGrid::new(1, 16, 64, 6.0).unwrap(), Model::Plain)
                .unwrap();
        let plain = flat.hydro_fields().unwrap();
        let sm = flat.smeared_fields(&MollifierSpec::bump(1, 0.2).unwrap()).unwrap();
        for (a, b) in plain.iter().zip(&sm) {
            assert!((a.rho - b.rho).abs() < 1e-13);
            assert!((a.t - b.t).abs() < 1e-12);
        }
    }

    #[test]
    fn smeared_fields_match_datum() {
        let ic = InitialCondition::default_inhomogeneous(1).unwrap();
        let grid = PhaseGrid::for_datum(&ic, 256, 80).unwrap();
        let sol = KineticSolution::init(&ic, grid, Model::Plain).unwrap();
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        let sm = sol.smeared_fields(&spec).unwrap();
        let sp = grid.spatial();
        for (k, f) in sm.iter().enumerate() {
            let exact = ic.smeared_fields(&spec, &sp.node(k)).unwrap();
            assert!((f.rho - exact.rho).abs() < 1e-5, "{} vs {}", f.rho, exact.rho);
            assert!((f.u.get(0) - exact.u.get(0)).abs() < 1e-5);
            assert!((f.t - exact.t).abs() < 1e-5);
        }
    }

    #[test]
    fn stationary_maxwellian_is_fixed_point() {
        let sol =
            KineticSolution::init(&maxwellian_ic(1), PhaseGrid::new(1, 16, 64, 7.5).unwrap(), Model::Plain)
                .unwrap();
        let next = sol.step(0.05).unwrap();
        let peak = sol.values().iter().fold(0.0f64, |m, f| m.max(*f));
        let change = sol.values().iter().zip(next.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change / peak < 1e-8, "{change}");
    }

    #[test]
    fn step_errors() {
        let sol =
            KineticSolution::init(&maxwellian_ic(1), PhaseGrid::new(1, 8, 64, 6.0).unwrap(), Model::Plain)
                .unwrap();
        assert!(matches!(sol.step(-0.1), Err(Error::Domain(_))));
        assert!(matches!(sol.step(0.5), Err(Error::Domain(_))));
        let mut values = sol.values().to_vec();
        values[3] = f64::NAN;
        assert!(KineticSolution::from_values(*sol.grid(), values, 0.0, Model::Plain).is_err());
        let broken = KineticSolution { values: vec![0.0; sol.grid().len()], ..sol };
        assert!(matches!(broken.step(0.01), Err(Error::Degenerate(_))));
    }

    #[test]
    fn numerical_failure_carries_diagnostics() {
        let sol =
            KineticSolution::init(&maxwellian_ic(1), PhaseGrid::new(1, 8, 64, 6.0).unwrap(), Model::Plain)
                .unwrap();
        let mut fields = sol.hydro_fields().unwrap();
        fields[2].t = f64::NAN;
        match sol.step_with_fields(0.01, &fields) {
            Err(Error::NumericalFailure { diagnostics, .. }) => assert!(diagnostics.contains("time = 0")),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn pure_transport_is_periodic() {
        let grid = PhaseGrid::new(1, 256, 4, 1.0).unwrap();
        let nvl = grid.n_vel();
        let sp = grid.spatial();
        let mut values = vec![0.0; grid.len()];
        for ix in 0..grid.n_space() {
            let x = sp.node(ix).coords()[0];
            for j in 0..nvl {
                values[ix * nvl + j] = (-(x * x) / 0.02).exp();
            }
        }
        let mut sol = KineticSolution::from_values(grid, values.clone(), 0.0, Model::Plain).unwrap();
        // v = 1 is the last node; 100 steps of 0.01 bring it back after a full period
        for _ in 0..100 {
            sol = sol.transport(0.01).unwrap();
        }
        let last = nvl - 1;
        assert_eq!(grid.velocity(last).get(0), 1.0);
        let err = (0..grid.n_space())
            .map(|ix| (sol.value(ix, last) - values[ix * nvl + last]).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
        assert!(
            (sol.mass() - KineticSolution::from_values(grid, values, 0.0, Model::Plain).unwrap().mass())
                .abs()
                < 1e-12
        );
        // a shift of exactly one cell per step is exact
        let exact_dt = grid.dx();
        let mut s2 = KineticSolution::from_values(grid, sol.values().to_vec(), 0.0, Model::Plain).unwrap();
        let before = s2.clone();
        for _ in 0..256 {
            s2 = s2.transport(exact_dt).unwrap();
        }
        for ix in 0..grid.n_space() {
            assert!((s2.value(ix, last) - before.value(ix, last)).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_l1_cases() {
        let grid = PhaseGrid::new(1, 8, 64, 6.0).unwrap();
        let a = KineticSolution::init(&maxwellian_ic(1), grid, Model::Plain).unwrap();
        assert_eq!(a.weighted_l1_distance(&a).unwrap(), 0.0);
        let (ix, j) = (3, 40);
        let delta = 0.25;
        let mut values = a.values().to_vec();
        values[ix * grid.n_vel() + j] += delta;
        let b = KineticSolution::from_values(grid, values, 0.0, Model::Plain).unwrap();
        let v = grid.velocity(j);
        let expect = delta * grid.dx() * grid.dv() * (1.0 + v.norm_squared());
        assert!((a.weighted_l1_distance(&b).unwrap() - expect).abs() < 1e-15);
        let other =
            KineticSolution::init(&maxwellian_ic(1), PhaseGrid::new(1, 16, 64, 6.0).unwrap(), Model::Plain)
                .unwrap();
        assert!(a.weighted_l1_distance(&other).is_err());
        let mut later = a.clone();
        later.time = 1.0;
        assert!(a.weighted_l1_distance(&later).is_err());
    }

    #[test]
    fn field_series_queries() {
        let sp = SpatialGrid::new(1, 4).unwrap();
        let mk = |base: f64| -> Vec<HydroFields> {
            (0..4)
                .map(|k| HydroFields { rho: 1.0, u: Vector::new(&[base + k as f64]).unwrap(), t: 1.0 })
                .collect()
        };
        let s = FieldSeries::new(sp, vec![0.0, 0.5, 1.0], vec![mk(0.0), mk(10.0), mk(20.0)]).unwrap();
        let x = TorusPoint::wrap(&[-0.125]).unwrap(); // halfway between nodes 1 and 2
        assert!((s.fields_at(0.0, &x).u.get(0) - 1.5).abs() < 1e-14);
        assert!((s.fields_at(0.49, &x).u.get(0) - 1.5).abs() < 1e-14);
        assert!((s.fields_at(0.5, &x).u.get(0) - 11.5).abs() < 1e-14);
        let y = TorusPoint::wrap(&[-0.2]).unwrap();
        let v = s.fields_at(0.7, &y).u.get(0);
        assert!((11.0..=12.0).contains(&v));
        assert!(s.covers(0.0, 1.0));
        assert!(!s.covers(0.0, 1.5));
        assert!(FieldSeries::new(sp, vec![0.0, 0.0], vec![mk(0.0), mk(0.0)]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MollifierSpec::bump(1, 0.25).unwrap();
        let ic = InitialCondition::default_inhomogeneous(1).unwrap();
        let sol = KineticSolution::init(
            &ic,
            PhaseGrid::for_datum(&ic, 8, 80).unwrap(),
            Model::Regularized { mollifier: spec },
        )
        .unwrap();
        let diag = vec![sol.diagnostics(4).unwrap()];
        let base = dir.path().join("snap");
        sol.save_checkpoint(&base, &diag).unwrap();
        let bytes = std::fs::read(dir.path().join("snap.bin")).unwrap();
        assert_eq!(bytes.len(), 28 + 8 * sol.grid().len());
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
        let (back, d2) = KineticSolution::load_checkpoint(&base).unwrap();
        assert_eq!(back, sol);
        assert_eq!(d2, diag);
    }
}
