//! Event-driven simulation of the interacting N-particle jump process, the
//! auxiliary process driven by solver fields, and their coupling.
//!
//! All three processes share one mechanism: free streaming between events,
//! and at an event a particle moves by a φ-distributed shift ξ and redraws
//! its velocity from a local Maxwellian at the landing point. The
//! interacting process has a single Poisson clock of rate N and uses the
//! empirical smeared fields of the configuration just before the jump
//! (the jumping particle included). The auxiliary process gives every
//! particle its own rate-one clock and reads the fields from a
//! [`FieldSource`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical_fields::weighted_fields;
use crate::error::{config, domain, Result};
use crate::kinetic_solver::FieldSource;
use crate::maxwellian::coupled_sample_unchecked;
use crate::metrics::compensated_sum;
use crate::mollifier::MollifierSpec;
use crate::phase_space::{
    mix_stream_id, CoupledConfig, ParticleConfig, RandomStream, TorusPoint, Vector, Velocity,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Interacting,
    Auxiliary,
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n_particles: usize,
    pub t_end: f64,
    pub spec: MollifierSpec,
    pub mode: Mode,
    pub seed: u64,
    pub stream_id: u64,
    /// Sorted times in `[0, t_end]` at which the state is recorded.
    pub observation_times: Vec<f64>,
    /// Keep a log of every jump.
    #[serde(default)]
    pub record_events: bool,
}

impl SimulationPlan {
    pub fn new(
        n_particles: usize,
        t_end: f64,
        spec: MollifierSpec,
        mode: Mode,
        seed: u64,
        observation_times: Vec<f64>,
    ) -> Result<Self> {
        let plan = Self {
            n_particles,
            t_end,
            spec,
            mode,
            seed,
            stream_id: 0,
            observation_times,
            record_events: false,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `k + 1` evenly spaced observation times `0, t_end/k, ..., t_end`.
    pub fn uniform_times(t_end: f64, k: usize) -> Vec<f64> {
        (0..=k).map(|i| t_end * i as f64 / k as f64).collect()
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn with_events(mut self) -> Self {
        self.record_events = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(config("need at least one particle"));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(config(format!("t_end must be finite and nonnegative, got {}", self.t_end)));
        }
        if self.observation_times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) {
            return Err(config("observation times must lie in [0, t_end]"));
        }
        if self.observation_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config("observation times must be strictly increasing"));
        }
        Ok(())
    }

    fn check(&self, mode: Mode, n: usize, dim: usize, t0: f64) -> Result<()> {
        self.validate()?;
        if self.mode != mode {
            return Err(config(format!("plan is for {:?}, not {mode:?}", self.mode)));
        }
        if n != self.n_particles {
            return Err(config(format!("plan expects {} particles, got {n}", self.n_particles)));
        }
        if self.spec.dim() != dim {
            return Err(config("mollifier and configuration dimensions differ"));
        }
        if self.observation_times.first().is_some_and(|t| *t < t0) {
            return Err(config("observation before the initial time"));
        }
        Ok(())
    }
}

/// One jump. `velocity` is the post-jump velocity of the jumping particle
/// (of the Z side in a coupled run, with the Σ side in `partner_velocity`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub particle: usize,
    pub xi: TorusPoint,
    pub velocity: Velocity,
    pub partner_velocity: Option<Velocity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<ParticleConfig>,
    pub n_events: usize,
    pub events: Vec<JumpEvent>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|c| c.time).collect()
    }

    /// Rows `time, particle, x0.., v0..` at full precision.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.observations.first() else {
            w.flush()?;
            return Ok(());
        };
        let dim = first.dim();
        let mut header = vec!["time".to_string(), "particle".to_string()];
        header.extend((0..dim).map(|k| format!("x{k}")));
        header.extend((0..dim).map(|k| format!("v{k}")));
        w.write_record(&header)?;
        for cfg in &self.observations {
            for i in 0..cfg.len() {
                let p = cfg.particle(i);
                let mut rec = vec![format!("{:.17e}", cfg.time), i.to_string()];
                rec.extend(p.x.coords().iter().map(|c| format!("{c:.17e}")));
                rec.extend(p.v.as_slice().iter().map(|c| format!("{c:.17e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrajectory {
    pub observations: Vec<CoupledConfig>,
    /// I_N at each observation time.
    pub i_n: Vec<f64>,
    pub n_events: usize,
    pub events: Vec<JumpEvent>,
}

impl CoupledTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|c| c.time()).collect()
    }

    /// The Z side alone.
    pub fn interacting_side(&self) -> Trajectory {
        Trajectory {
            observations: self.observations.iter().map(|c| c.z.clone()).collect(),
            n_events: self.n_events,
            events: vec![],
        }
    }

    /// The Σ side alone.
    pub fn auxiliary_side(&self) -> Trajectory {
        Trajectory {
            observations: self.observations.iter().map(|c| c.sigma.clone()).collect(),
            n_events: self.n_events,
            events: vec![],
        }
    }
}

#[inline]
fn draw_velocity(m: &crate::maxwellian::MaxwellianParams, rng: &mut RandomStream) -> Velocity {
    m.sample(rng)
}

/// Simulate Z_N from `init` up to `plan.t_end`.
pub fn simulate_interacting(plan: &SimulationPlan, init: &ParticleConfig) -> Result<Trajectory> {
    plan.check(Mode::Interacting, init.len(), init.dim(), init.time)?;
    let n = init.len();
    let rate = n as f64;
    let mut rng = RandomStream::new(plan.seed, plan.stream_id);
    let mut cfg = init.clone();
    let mut observations = Vec::with_capacity(plan.observation_times.len());
    let mut obs = plan.observation_times.iter().copied().peekable();
    let mut events = vec![];
    let mut n_events = 0;
    loop {
        let next = cfg.time + rng.exponential(rate);
        while let Some(t) = obs.next_if(|t| *t < next) {
            let mut snap = cfg.clone();
            snap.stream(t - cfg.time);
            snap.time = t;
            observations.push(snap);
        }
        if next > plan.t_end {
            break;
        }
        cfg.stream(next - cfg.time);
        cfg.time = next;
        let i = rng.index(n);
        let xi = plan.spec.sample_shift(&mut rng);
        let x_new = cfg.positions()[i].translate(xi.as_vector());
        let fields = weighted_fields(cfg.positions(), cfg.velocities(), &plan.spec, &x_new);
        let v_new = draw_velocity(&fields.maxwellian(), &mut rng);
        cfg.set_particle(i, x_new, v_new);
        n_events += 1;
        if plan.record_events {
            events.push(JumpEvent { time: next, particle: i, xi, velocity: v_new, partner_velocity: None });
        }
    }
    Ok(Trajectory { observations, n_events, events })
}

/// Simulate the coupled pair (Z_N, Σ_N): shared clock, shared particle
/// choice and shared shift; velocities drawn from the optimal coupling of
/// the empirical and the source Maxwellians.
pub fn simulate_coupled(
    plan: &SimulationPlan,
    source: &dyn FieldSource,
    init: &CoupledConfig,
) -> Result<CoupledTrajectory> {
    plan.check(Mode::Coupled, init.z.len(), init.z.dim(), init.time())?;
    if source.dim() != init.z.dim() {
        return Err(config("field source dimension differs from the configuration"));
    }
    if !source.covers(init.time(), plan.t_end) {
        return Err(config(format!("field source does not cover [{}, {}]", init.time(), plan.t_end)));
    }
    let n = init.z.len();
    let rate = n as f64;
    let mut rng = RandomStream::new(plan.seed, plan.stream_id);
    let mut state = init.clone();
    let mut observations = Vec::with_capacity(plan.observation_times.len());
    let mut i_n = Vec::with_capacity(plan.observation_times.len());
    let mut obs = plan.observation_times.iter().copied().peekable();
    let mut events = vec![];
    let mut n_events = 0;
    loop {
        let now = state.time();
        let next = now + rng.exponential(rate);
        while let Some(t) = obs.next_if(|t| *t < next) {
            let mut snap = state.clone();
            snap.z.stream(t - now);
            snap.sigma.stream(t - now);
            snap.z.time = t;
            snap.sigma.time = t;
            i_n.push(snap.mean_squared_gap());
            observations.push(snap);
        }
        if next > plan.t_end {
            break;
        }
        state.z.stream(next - now);
        state.sigma.stream(next - now);
        state.z.time = next;
        state.sigma.time = next;
        let i = rng.index(n);
        let xi = plan.spec.sample_shift(&mut rng);
        let shift = xi.as_vector();
        let x_new = state.z.positions()[i].translate(shift);
        let y_new = state.sigma.positions()[i].translate(shift);
        let a = weighted_fields(state.z.positions(), state.z.velocities(), &plan.spec, &x_new);
        let b = source.fields_at(next, &y_new);
        let (v_new, w_new) = coupled_sample_unchecked(&a.maxwellian(), &b.maxwellian(), &mut rng);
        state.z.set_particle(i, x_new, v_new);
        state.sigma.set_particle(i, y_new, w_new);
        n_events += 1;
        if plan.record_events {
            events.push(JumpEvent {
                time: next,
                particle: i,
                xi,
                velocity: v_new,
                partner_velocity: Some(w_new),
            });
        }
    }
    Ok(CoupledTrajectory { observations, i_n, n_events, events })
}

/// Path of a single auxiliary particle observed at `times`; returns the
/// observed states and the number of jumps.
pub fn auxiliary_path(
    source: &dyn FieldSource,
    spec: &MollifierSpec,
    start: (TorusPoint, Velocity, f64),
    t_end: f64,
    times: &[f64],
    rng: &mut RandomStream,
) -> (Vec<(TorusPoint, Velocity)>, usize) {
    let (mut x, mut v, mut t) = start;
    let mut out = Vec::with_capacity(times.len());
    let mut obs = times.iter().copied().peekable();
    let mut jumps = 0;
    loop {
        let next = t + rng.exponential(1.0);
        while let Some(s) = obs.next_if(|s| *s < next) {
            out.push((x.translate(v * (s - t)), v));
        }
        if next > t_end {
            break;
        }
        x = x.translate(v * (next - t));
        t = next;
        let x_new = x.translate(spec.sample_shift(rng).as_vector());
        let m = source.fields_at(t, &x_new).maxwellian();
        v = draw_velocity(&m, rng);
        x = x_new;
        jumps += 1;
    }
    (out, jumps)
}

/// Stream of auxiliary particle `i` in a plan.
pub fn auxiliary_stream(plan: &SimulationPlan, i: usize) -> RandomStream {
    RandomStream::new(plan.seed, mix_stream_id(plan.stream_id, i as u64))
}

/// N independent auxiliary particles; particle `i` uses
/// [`auxiliary_stream`]`(plan, i)`.
pub fn simulate_auxiliary(
    plan: &SimulationPlan,
    source: &dyn FieldSource,
    init: &ParticleConfig,
) -> Result<Trajectory> {
    plan.check(Mode::Auxiliary, init.len(), init.dim(), init.time)?;
    if source.dim() != init.dim() {
        return Err(config("field source dimension differs from the configuration"));
    }
    if !source.covers(init.time, plan.t_end) {
        return Err(config(format!("field source does not cover [{}, {}]", init.time, plan.t_end)));
    }
    let paths: Vec<(Vec<(TorusPoint, Velocity)>, usize)> = (0..init.len())
        .into_par_iter()
        .map(|i| {
            let p = init.particle(i);
            let mut rng = auxiliary_stream(plan, i);
            auxiliary_path(
                source,
                &plan.spec,
                (p.x, p.v, init.time),
                plan.t_end,
                &plan.observation_times,
                &mut rng,
            )
        })
        .collect();
    let n_events = paths.iter().map(|p| p.1).sum();
    let observations = plan
        .observation_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (xs, vs) = paths.iter().map(|p| p.0[k]).unzip();
            ParticleConfig::new(xs, vs, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { observations, n_events, events: vec![] })
}

/// `(time, (1/N) Σ |v_j|^p)` for `p ∈ {2, 4, 8, 16}`.
pub fn moment_diagnostic(traj: &Trajectory, p: u32) -> Result<Vec<(f64, f64)>> {
    if ![2, 4, 8, 16].contains(&p) {
        return Err(domain(format!("moment order must be 2, 4, 8 or 16, got {p}")));
    }
    Ok(traj
        .observations
        .iter()
        .map(|cfg| {
            let terms: Vec<f64> =
                cfg.velocities().iter().map(|v| v.norm_squared().powi(p as i32 / 2)).collect();
            (cfg.time, compensated_sum(&terms) / cfg.len() as f64)
        })
        .collect())
}

/// Mean kinetic energy `(1/2N) Σ |v_j|²` of a configuration.
pub fn kinetic_energy(cfg: &ParticleConfig) -> f64 {
    let terms: Vec<f64> = cfg.velocities().iter().map(Vector::norm_squared).collect();
    0.5 * compensated_sum(&terms) / cfg.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical_fields::{GlobalMaxwellian, HydroFields, PhaseDensity};
    use crate::kinetic_solver::ConstantFields;
    use crate::maxwellian::MaxwellianParams;
    use crate::phase_space::displacement;

    fn gm(dim: usize) -> GlobalMaxwellian {
        GlobalMaxwellian(MaxwellianParams::new(Vector::zeros(dim), 1.0).unwrap())
    }

    fn const_source(dim: usize) -> ConstantFields {
        ConstantFields(HydroFields { rho: 1.0, u: Vector::zeros(dim), t: 1.0 })
    }

    #[test]
    fn plan_validation() {
        let spec = MollifierSpec::uniform(1).unwrap();
        assert!(SimulationPlan::new(0, 1.0, spec, Mode::Interacting, 0, vec![]).is_err());
        assert!(SimulationPlan::new(4, 1.0, spec, Mode::Interacting, 0, vec![0.0, 2.0]).is_err());
        assert!(SimulationPlan::new(4, 1.0, spec, Mode::Interacting, 0, vec![0.5, 0.5]).is_err());
        let plan = SimulationPlan::new(4, 1.0, spec, Mode::Auxiliary, 0, vec![0.0, 1.0]).unwrap();
        let init = gm(1).sample_config(4, &mut RandomStream::new(0, 0)).unwrap();
        assert!(simulate_interacting(&plan, &init).is_err());
        let wrong_n = gm(1).sample_config(5, &mut RandomStream::new(0, 0)).unwrap();
        let plan = plan.clone();
        assert!(simulate_auxiliary(&plan, &const_source(1), &wrong_n).is_err());
    }

    #[test]
    fn jump_count_matches_rate() {
        let n = 100;
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        let plan = SimulationPlan::new(n, 2.0, spec, Mode::Interacting, 3, vec![2.0]).unwrap();
        let init = gm(1).sample_config(n, &mut RandomStream::new(1, 0)).unwrap();
        let traj = simulate_interacting(&plan, &init).unwrap();
        assert!((traj.n_events as f64 - 200.0).abs() < 4.0 * 200f64.sqrt());
    }

    #[test]
    fn equal_velocities_stay_equal() {
        let n = 30;
        let v0 = Vector::new(&[0.4]).unwrap();
        let init = ParticleConfig::new(vec![TorusPoint::origin(1); n], vec![v0; n], 0.0).unwrap();
        let spec = MollifierSpec::uniform(1).unwrap();
        let plan = SimulationPlan::new(n, 3.0, spec, Mode::Interacting, 9, vec![3.0]).unwrap();
        let traj = simulate_interacting(&plan, &init).unwrap();
        let last = &traj.observations[0];
        assert!(last.velocities().iter().all(|v| (v.get(0) - 0.4).abs() < 1e-15));
        let spread = last.positions().iter().map(|x| x.coords()[0]).fold(0.0f64, |m, c| m.max(c.abs()));
        assert!(spread > 0.1);
    }

    #[test]
    fn free_streaming_between_events() {
        let n = 20;
        let spec = MollifierSpec::bump(1, 0.25).unwrap();
        let init = gm(1).sample_config(n, &mut RandomStream::new(2, 0)).unwrap();
        let events = SimulationPlan::new(n, 1.0, spec, Mode::Interacting, 5, vec![]).unwrap().with_events();
        let log = simulate_interacting(&events, &init).unwrap().events;
        let first = log[0].time;
        let plan = SimulationPlan::new(n, 1.0, spec, Mode::Interacting, 5, vec![0.5 * first]).unwrap();
        let obs = &simulate_interacting(&plan, &init).unwrap().observations[0];
        for i in 0..n {
            let expect = init.positions()[i].translate(init.velocities()[i] * (0.5 * first));
            assert_eq!(obs.positions()[i], expect);
        }
        assert!(log.windows(2).all(|w| w[1].time > w[0].time));
    }

    #[test]
    fn deterministic_given_seed() {
        let n = 50;
        let spec = MollifierSpec::bump(2, 0.3).unwrap();
        let init = gm(2).sample_config(n, &mut RandomStream::new(7, 0)).unwrap();
        let plan = SimulationPlan::new(n, 1.0, spec, Mode::Interacting, 11, vec![0.5, 1.0]).unwrap();
        let a = simulate_interacting(&plan, &init).unwrap();
        let b = simulate_interacting(&plan, &init).unwrap();
        assert_eq!(a, b);
        let c = simulate_interacting(&plan.clone().with_stream(1), &init).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coupled_starts_at_zero_and_preserves_displacement() {
        let n = 64;
        let spec = MollifierSpec::bump(1, 0.2).unwrap();
        let init = CoupledConfig::diagonal(gm(1).sample_config(n, &mut RandomStream::new(3, 0)).unwrap());
        let plan =
            SimulationPlan::new(n, 1.0, spec, Mode::Coupled, 4, vec![0.0, 0.5, 1.0]).unwrap().with_events();
        let traj = simulate_coupled(&plan, &const_source(1), &init).unwrap();
        assert_eq!(traj.i_n[0], 0.0);
        assert!(traj.i_n[2] > 0.0);
        let ev = &traj.events;
        assert_eq!(ev.len(), traj.n_events);
        // replay the first event to check the shift is shared
        let e = &ev[0];
        let mut st = init.clone();
        st.z.stream(e.time);
        st.sigma.stream(e.time);
        let before = displacement(&st.z.positions()[e.particle], &st.sigma.positions()[e.particle]).unwrap();
        let xz = st.z.positions()[e.particle].translate(e.xi.as_vector());
        let xs = st.sigma.positions()[e.particle].translate(e.xi.as_vector());
        assert_eq!(displacement(&xz, &xs).unwrap(), before);
    }

    #[test]
    fn coupled_requires_coverage() {
        let sp = crate::phase_space::SpatialGrid::new(1, 4).unwrap();
        let snap = vec![HydroFields { rho: 1.0, u: Vector::zeros(1), t: 1.0 }; 4];
        let series =
            crate::kinetic_solver::FieldSeries::new(sp, vec![0.0, 0.5], vec![snap.clone(), snap]).unwrap();
        let spec = MollifierSpec::bump(1, 0.2).unwrap();
        let init = CoupledConfig::diagonal(gm(1).sample_config(8, &mut RandomStream::new(3, 0)).unwrap());
        let plan = SimulationPlan::new(8, 1.0, spec, Mode::Coupled, 4, vec![1.0]).unwrap();
        assert!(simulate_coupled(&plan, &series, &init).is_err());
    }

    #[test]
    fn auxiliary_independence() {
        let n = 12;
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        let init = gm(1).sample_config(n, &mut RandomStream::new(13, 0)).unwrap();
        let times = vec![0.5, 1.0, 2.0];
        let plan = SimulationPlan::new(n, 2.0, spec, Mode::Auxiliary, 21, times.clone()).unwrap();
        let src = const_source(1);
        let traj = simulate_auxiliary(&plan, &src, &init).unwrap();
        // each particle follows its own stream regardless of where it sits
        for i in (0..n).rev() {
            let p = init.particle(i);
            let mut rng = auxiliary_stream(&plan, i);
            let (path, _) = auxiliary_path(&src, &spec, (p.x, p.v, 0.0), 2.0, &times, &mut rng);
            for (k, (x, v)) in path.iter().enumerate() {
                assert_eq!(traj.observations[k].positions()[i], *x);
                assert_eq!(traj.observations[k].velocities()[i], *v);
            }
        }
    }

    #[test]
    fn auxiliary_jump_counts_are_poisson() {
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        let src = const_source(1);
        let plan = SimulationPlan::new(1, 3.0, spec, Mode::Auxiliary, 1, vec![]).unwrap();
        let counts: Vec<f64> = (0..4000)
            .map(|i| {
                let mut rng = auxiliary_stream(&plan, i);
                let start = (TorusPoint::origin(1), Vector::zeros(1), 0.0);
                auxiliary_path(&src, &spec, start, 3.0, &[], &mut rng).1 as f64
            })
            .collect();
        let m = counts.iter().sum::<f64>() / counts.len() as f64;
        let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        assert!((m - 3.0).abs() < 4.0 * (3.0f64 / 4000.0).sqrt());
        assert!((var / m - 1.0).abs() < 0.1, "{}", var / m);
    }

    #[test]
    fn moments() {
        let cfg =
            ParticleConfig::new(vec![TorusPoint::origin(2); 3], vec![Vector::zeros(2); 3], 0.0).unwrap();
        let traj = Trajectory { observations: vec![cfg], n_events: 0, events: vec![] };
        assert_eq!(moment_diagnostic(&traj, 8).unwrap(), vec![(0.0, 0.0)]);
        assert!(moment_diagnostic(&traj, 3).is_err());
        let cfg = ParticleConfig::new(
            vec![TorusPoint::origin(1); 2],
            vec![Vector::new(&[1.0]).unwrap(), Vector::new(&[-2.0]).unwrap()],
            0.0,
        )
        .unwrap();
        let traj = Trajectory { observations: vec![cfg], n_events: 0, events: vec![] };
        assert_eq!(moment_diagnostic(&traj, 4).unwrap()[0].1, 8.5);
    }

    #[test]
    fn csv_is_reproducible() {
        let n = 10;
        let spec = MollifierSpec::bump(1, 0.3).unwrap();
        let init = gm(1).sample_config(n, &mut RandomStream::new(1, 1)).unwrap();
        let plan = SimulationPlan::new(n, 1.0, spec, Mode::Interacting, 2, vec![0.0, 1.0]).unwrap();
        let mut a = vec![];
        let mut b = vec![];
        simulate_interacting(&plan, &init).unwrap().write_csv(&mut a).unwrap();
        simulate_interacting(&plan, &init).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * n);
    }
}
