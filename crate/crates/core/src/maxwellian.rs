//! Isotropic Maxwellians M_{u,T}, their exact sampling, and the optimal
//! (2-Wasserstein) coupling between two of them.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::phase_space::{RandomStream, Vector, Velocity};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxwellianParams {
    pub u: Velocity,
    /// Temperature; zero means a Dirac mass at `u`.
    pub t: f64,
}

impl MaxwellianParams {
    pub fn new(u: Velocity, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(domain(format!("temperature must be finite and nonnegative, got {t}")));
        }
        if !u.is_finite() {
            return Err(domain("non-finite mean velocity"));
        }
        Ok(Self { u, t })
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn is_degenerate(&self) -> bool {
        self.t == 0.0
    }

    /// (2πT)^{-d/2} exp(-|v-u|²/2T).
    pub fn density(&self, v: &Velocity) -> Result<f64> {
        if v.dim() != self.dim() {
            return Err(domain("velocity dimension differs from the Maxwellian"));
        }
        if self.is_degenerate() {
            return Err(Error::Degenerate("zero-temperature Maxwellian has no density".into()));
        }
        Ok(self.density_unchecked((*v - self.u).norm_squared()))
    }

    /// Density as a function of |v - u|²; `t` must be positive.
    #[inline]
    pub(crate) fn density_unchecked(&self, gap2: f64) -> f64 {
        let d = self.dim() as i32;
        (2.0 * std::f64::consts::PI * self.t).powf(-0.5 * d as f64) * (-gap2 / (2.0 * self.t)).exp()
    }

    /// Exact draw; returns `u` itself when T = 0.
    pub fn sample(&self, rng: &mut RandomStream) -> Velocity {
        if self.is_degenerate() {
            return self.u;
        }
        let s = self.t.sqrt();
        let u = self.u;
        Vector::from_fn(self.dim(), |k| u.get(k) + s * rng.standard_normal())
    }
}

/// |u_a - u_b|² + d(√T_a - √T_b)².
pub fn w2_squared(a: &MaxwellianParams, b: &MaxwellianParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(domain("Maxwellians of different dimensions"));
    }
    let dt = a.t.sqrt() - b.t.sqrt();
    Ok((a.u - b.u).norm_squared() + a.dim() as f64 * dt * dt)
}

/// Draw `(v, w)` with `v ~ M_a`, `w ~ M_b` jointly distributed by the
/// optimal transport map `w = u_b + √(T_b/T_a)(v - u_a)`.
///
/// When `a` is a Dirac mass no transport map exists; `w` is then drawn
/// independently (product coupling), which is also optimal.
pub fn coupled_sample(
    a: &MaxwellianParams,
    b: &MaxwellianParams,
    rng: &mut RandomStream,
) -> Result<(Velocity, Velocity)> {
    if a.dim() != b.dim() {
        return Err(domain("Maxwellians of different dimensions"));
    }
    Ok(coupled_sample_unchecked(a, b, rng))
}

#[inline]
pub(crate) fn coupled_sample_unchecked(
    a: &MaxwellianParams,
    b: &MaxwellianParams,
    rng: &mut RandomStream,
) -> (Velocity, Velocity) {
    if a.is_degenerate() {
        return (a.u, b.sample(rng));
    }
    let z = Vector::from_fn(a.dim(), |_| rng.standard_normal());
    (a.u + z * a.t.sqrt(), b.u + z * b.t.sqrt())
}
