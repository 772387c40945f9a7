//! Smeared empirical hydrodynamic fields of a particle configuration.
//!
//! For weights w_j = φ(x - x_j):
//!
//! ```text
//! ρ(x) = (1/N) Σ w_j
//! u(x) = Σ w_j v_j / Σ w_j
//! T(x) = Σ w_j |v_j - u(x)|² / (d Σ w_j)
//! ```
//!
//! The temperature is accumulated in a second pass around `u(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::maxwellian::MaxwellianParams;
use crate::mollifier::MollifierSpec;
use crate::phase_space::{
    ParticleConfig, PhasePoint, RandomStream, SpatialGrid, TorusPoint, Vector, Velocity,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroFields {
    pub rho: f64,
    pub u: Velocity,
    pub t: f64,
}

impl HydroFields {
    /// Local Maxwellian M_{u,T} of these fields.
    pub fn maxwellian(&self) -> MaxwellianParams {
        MaxwellianParams { u: self.u, t: self.t.max(0.0) }
    }
}

/// Smeared empirical fields of `cfg` at `x`.
pub fn eval_empirical(cfg: &ParticleConfig, spec: &MollifierSpec, x: &TorusPoint) -> Result<HydroFields> {
    if spec.dim() != cfg.dim() || x.dim() != cfg.dim() {
        return Err(domain("configuration, mollifier and point dimensions must agree"));
    }
    Ok(weighted_fields(cfg.positions(), cfg.velocities(), spec, x))
}

/// Core two-pass evaluation shared by the simulators.
pub(crate) fn weighted_fields(
    positions: &[TorusPoint],
    velocities: &[Velocity],
    spec: &MollifierSpec,
    x: &TorusPoint,
) -> HydroFields {
    let n = positions.len();
    let dim = x.dim();
    let mut total = 0.0;
    let mut mom = Vector::zeros(dim);
    if spec.is_uniform() {
        for v in velocities {
            mom += *v;
        }
        total = n as f64;
        let u = mom * (1.0 / total);
        let spread: f64 = velocities.iter().map(|v| (*v - u).norm_squared()).sum();
        return HydroFields { rho: 1.0, u, t: spread / (dim as f64 * total) };
    }
    let weights: Vec<f64> = positions.iter().map(|p| spec.kernel(x, p)).collect();
    for (w, v) in weights.iter().zip(velocities) {
        total += w;
        mom += *v * *w;
    }
    let u = mom * (1.0 / total);
    let spread: f64 = weights.iter().zip(velocities).map(|(w, v)| w * (*v - u).norm_squared()).sum();
    HydroFields { rho: total / n as f64, u, t: spread / (dim as f64 * total) }
}

/// [`eval_empirical`] at every node of a spatial grid.
pub fn eval_empirical_grid(
    cfg: &ParticleConfig,
    spec: &MollifierSpec,
    grid: &SpatialGrid,
) -> Result<Vec<HydroFields>> {
    if grid.dim != cfg.dim() || spec.dim() != cfg.dim() {
        return Err(domain("configuration, mollifier and grid dimensions must agree"));
    }
    Ok((0..grid.len())
        .into_par_iter()
        .map(|k| weighted_fields(cfg.positions(), cfg.velocities(), spec, &grid.node(k)))
        .collect())
}

/// A probability density on phase space that can be sampled and whose
/// smeared hydrodynamic fields are known.
pub trait PhaseDensity: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut RandomStream) -> PhasePoint;
    /// ρ^φ, u^φ, T^φ of the density at `x`.
    fn smeared_fields(&self, spec: &MollifierSpec, x: &TorusPoint) -> Result<HydroFields>;

    /// `n` i.i.d. draws as a configuration at time zero.
    fn sample_config(&self, n: usize, rng: &mut RandomStream) -> Result<ParticleConfig> {
        let pts: Vec<PhasePoint> = (0..n).map(|_| self.sample(rng)).collect();
        ParticleConfig::from_points(&pts, 0.0)
    }
}

/// Spatially uniform global Maxwellian: the stationary state of both the
/// plain and the regularized equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMaxwellian(pub MaxwellianParams);

impl PhaseDensity for GlobalMaxwellian {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample(&self, rng: &mut RandomStream) -> PhasePoint {
        let x = rng.torus_point(self.dim());
        PhasePoint { x, v: self.0.sample(rng) }
    }

    fn smeared_fields(&self, _spec: &MollifierSpec, _x: &TorusPoint) -> Result<HydroFields> {
        Ok(HydroFields { rho: 1.0, u: self.0.u, t: self.0.t })
    }
}

/// Squared error of the empirical fields of `n` i.i.d. draws from `density`
/// against the density's own smeared fields at `x`:
/// `|ũ(x) - u^φ(x)|² + |T̃(x) - T^φ(x)|²`.
pub fn lln_field_error(
    density: &dyn PhaseDensity,
    spec: &MollifierSpec,
    n: usize,
    x: &TorusPoint,
    rng: &mut RandomStream,
) -> Result<f64> {
    if n == 0 {
        return Err(domain("need at least one particle"));
    }
    let cfg = density.sample_config(n, rng)?;
    let emp = eval_empirical(&cfg, spec, x)?;
    let exact = density.smeared_fields(spec, x)?;
    Ok((emp.u - exact.u).norm_squared() + (emp.t - exact.t).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(xs: &[f64], vs: &[f64]) -> ParticleConfig {
        ParticleConfig::new(
            xs.iter().map(|x| TorusPoint::wrap(&[*x]).unwrap()).collect(),
            vs.iter().map(|v| Vector::new(&[*v]).unwrap()).collect(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn two_particle_example() {
        let c = cfg(&[0.0, 0.0], &[1.0, -1.0]);
        let f = eval_empirical(&c, &MollifierSpec::uniform(1).unwrap(), &TorusPoint::wrap(&[0.3]).unwrap())
            .unwrap();
        assert_eq!((f.rho, f.u.get(0), f.t), (1.0, 0.0, 1.0));
    }

    #[test]
    fn equal_velocities_zero_temperature() {
        let c = cfg(&[0.1, -0.3, 0.2], &[0.7, 0.7, 0.7]);
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        for x in [-0.4, 0.0, 0.25] {
            let f = eval_empirical(&c, &spec, &TorusPoint::wrap(&[x]).unwrap()).unwrap();
            assert!((f.u.get(0) - 0.7).abs() < 1e-15);
            assert!(f.t.abs() < 1e-30);
        }
    }

    #[test]
    fn single_particle() {
        let c = cfg(&[0.2], &[-1.5]);
        let spec = MollifierSpec::bump(1, 0.5).unwrap();
        let x = TorusPoint::wrap(&[0.3]).unwrap();
        let f = eval_empirical(&c, &spec, &x).unwrap();
        assert!((f.u.get(0) + 1.5).abs() < 1e-15);
        assert!(f.t < 1e-30);
        let phi = spec.evaluate(&TorusPoint::wrap(&[0.1]).unwrap());
        assert!((f.rho - phi).abs() < 1e-14);
    }

    #[test]
    fn dimension_errors() {
        let c = cfg(&[0.2], &[-1.5]);
        assert!(eval_empirical(&c, &MollifierSpec::uniform(2).unwrap(), &TorusPoint::origin(1)).is_err());
        assert!(eval_empirical(&c, &MollifierSpec::uniform(1).unwrap(), &TorusPoint::origin(2)).is_err());
    }

    /// Independent O(N·grid) reference written directly from the definitions.
    fn brute_force(c: &ParticleConfig, spec: &MollifierSpec, x: &TorusPoint) -> (f64, f64, f64) {
        let n = c.len() as f64;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (p, v) in c.positions().iter().zip(c.velocities()) {
            let mut dx = x.coords()[0] - p.coords()[0];
            dx -= dx.round();
            let w = spec.evaluate(&TorusPoint::wrap(&[dx]).unwrap());
            s0 += w;
            s1 += w * v.get(0);
            s2 += w * v.get(0) * v.get(0);
        }
        let u = s1 / s0;
        (s0 / n, u, s2 / s0 - u * u)
    }

    #[test]
    fn grid_matches_pointwise_and_reference() {
        let c = cfg(&[-0.45, -0.1, 0.05, 0.4], &[1.0, -0.5, 2.0, 0.25]);
        let spec = MollifierSpec::bump(1, 0.4).unwrap();
        let g = SpatialGrid::new(1, 64).unwrap();
        let fields = eval_empirical_grid(&c, &spec, &g).unwrap();
        for (k, f) in fields.iter().enumerate() {
            let node = g.node(k);
            let p = eval_empirical(&c, &spec, &node).unwrap();
            assert_eq!(*f, p);
            let (rho, u, t) = brute_force(&c, &spec, &node);
            assert!((rho - f.rho).abs() < 1e-12);
            assert!((u - f.u.get(0)).abs() < 1e-12);
            assert!((t - f.t).abs() < 1e-10);
        }
        let uni = eval_empirical_grid(&c, &MollifierSpec::uniform(1).unwrap(), &g).unwrap();
        assert!(uni.iter().all(|f| *f == uni[0]));
    }

    #[test]
    fn grid_matches_random_nodes_2d() {
        let mut rng = RandomStream::new(3, 0);
        let d = GlobalMaxwellian(MaxwellianParams::new(Vector::new(&[0.1, -0.2]).unwrap(), 0.8).unwrap());
        let c = d.sample_config(50, &mut rng).unwrap();
        let spec = MollifierSpec::bump(2, 0.3).unwrap();
        let g = SpatialGrid::new(2, 16).unwrap();
        let all = eval_empirical_grid(&c, &spec, &g).unwrap();
        for _ in 0..100 {
            let k = rng.index(g.len());
            assert_eq!(all[k], eval_empirical(&c, &spec, &g.node(k)).unwrap());
        }
    }

    #[test]
    fn lln_single_draw_is_finite() {
        let d = GlobalMaxwellian(MaxwellianParams::new(Vector::zeros(1), 1.0).unwrap());
        let mut rng = RandomStream::new(1, 1);
        let e =
            lln_field_error(&d, &MollifierSpec::bump(1, 0.2).unwrap(), 1, &TorusPoint::origin(1), &mut rng)
                .unwrap();
        assert!(e.is_finite() && e >= 0.0);
        assert!(lln_field_error(
            &d,
            &MollifierSpec::uniform(1).unwrap(),
            0,
            &TorusPoint::origin(1),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn lln_error_matches_clt_variance() {
        // uniform φ, d = 1: ũ is the sample mean (variance T/N) and T̃ the
        // biased sample variance, E(T̃-T)² = (2N-1)T²/N²
        let d = GlobalMaxwellian(MaxwellianParams::new(Vector::zeros(1), 1.0).unwrap());
        let spec = MollifierSpec::uniform(1).unwrap();
        let n = 64;
        let reps = 4000;
        let errs: Vec<f64> = (0..reps)
            .map(|r| {
                let mut rng = RandomStream::new(17, r);
                lln_field_error(&d, &spec, n, &TorusPoint::origin(1), &mut rng).unwrap()
            })
            .collect();
        let m = errs.iter().sum::<f64>() / reps as f64;
        let sd = (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let nf = n as f64;
        let expect = 1.0 / nf + (2.0 * nf - 1.0) / (nf * nf);
        assert!((m - expect).abs() < 4.0 * sd / (reps as f64).sqrt(), "{m} vs {expect}");
    }

    #[test]
    fn lln_error_decreases_with_n() {
        let d = GlobalMaxwellian(MaxwellianParams::new(Vector::zeros(1), 1.0).unwrap());
        let spec = MollifierSpec::bump(1, 0.2).unwrap();
        let x = TorusPoint::wrap(&[0.1]).unwrap();
        let avg = |n: usize| {
            (0..16)
                .map(|r| lln_field_error(&d, &spec, n, &x, &mut RandomStream::new(23, r)).unwrap())
                .sum::<f64>()
                / 16.0
        };
        assert!(avg(4096) <= avg(256));
    }

    fn small_config() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (prop::collection::vec(-0.5..0.5f64, n), prop::collection::vec(-3.0..3.0f64, n))
        })
    }

    proptest! {
        #[test]
        fn invariances((xs, vs) in small_config(), c in -2.0..2.0f64, lam in 0.1..3.0f64, at in -0.5..0.5f64) {
            let spec = MollifierSpec::bump(1, 0.35).unwrap();
            let x = TorusPoint::wrap(&[at]).unwrap();
            let base = eval_empirical(&cfg(&xs, &vs), &spec, &x).unwrap();
            prop_assert!(base.rho > 0.0 && base.t >= 0.0);
            let max_gap = vs.iter().map(|v| (v - base.u.get(0)).powi(2)).fold(0.0, f64::max);
            prop_assert!(base.t <= max_gap + 1e-12);

            let shifted: Vec<f64> = vs.iter().map(|v| v + c).collect();
            let s = eval_empirical(&cfg(&xs, &shifted), &spec, &x).unwrap();
            prop_assert!((s.u.get(0) - base.u.get(0) - c).abs() < 1e-12);
            prop_assert!((s.t - base.t).abs() < 1e-10 * (1.0 + base.t));

            let scaled: Vec<f64> = vs.iter().map(|v| v * lam).collect();
            let s = eval_empirical(&cfg(&xs, &scaled), &spec, &x).unwrap();
            prop_assert!((s.t - lam * lam * base.t).abs() < 1e-10 * (1.0 + base.t));

            let mut rx = xs.clone();
            let mut rv = vs.clone();
            rx.reverse();
            rv.reverse();
            let p = eval_empirical(&cfg(&rx, &rv), &spec, &x).unwrap();
            prop_assert!((p.rho - base.rho).abs() < 1e-12);
            prop_assert!((p.u.get(0) - base.u.get(0)).abs() < 1e-12);
            prop_assert!((p.t - base.t).abs() < 1e-10);
        }

        #[test]
        fn uniform_gives_global_moments((xs, vs) in small_config()) {
            let f = eval_empirical(&cfg(&xs, &vs), &MollifierSpec::uniform(1).unwrap(), &TorusPoint::origin(1)).unwrap();
            let n = vs.len() as f64;
            let m = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            prop_assert_eq!(f.rho, 1.0);
            prop_assert!((f.u.get(0) - m).abs() < 1e-12);
            prop_assert!((f.t - var).abs() < 1e-12);
        }
    }
}
