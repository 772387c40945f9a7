//! Named experiments: configuration, orchestration, raw tables and verdicts.
//!
//! Every runner produces a set of raw [`Table`]s. The verdict is computed
//! from those tables alone by [`evaluate`], so a stored report can be
//! re-judged without simulating again.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical_fields::PhaseDensity;
use crate::error::{config, domain, Error, Result};
use crate::kinetic_solver::{FieldSeries, InitialCondition, KineticSolution, Model, PhaseGrid, SolverRun};
use crate::maxwellian::MaxwellianParams;
use crate::metrics::{compensated_sum, fit_loglog_slope, w2_assignment, SlopeFit};
use crate::mollifier::MollifierSpec;
use crate::particle_dynamics::{
    kinetic_energy, moment_diagnostic, simulate_coupled, simulate_interacting, Mode, SimulationPlan,
};
use crate::phase_space::{mix_stream_id, CoupledConfig, RandomStream, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Stationarity,
    HomogeneousOracle,
    ConvergeN,
    ConvergeEps,
    Combined,
    Diagnostics,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::Stationarity,
        Self::HomogeneousOracle,
        Self::ConvergeN,
        Self::ConvergeEps,
        Self::Combined,
        Self::Diagnostics,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Stationarity => "stationarity",
            Self::HomogeneousOracle => "homogeneous-oracle",
            Self::ConvergeN => "converge-n",
            Self::ConvergeEps => "converge-eps",
            Self::Combined => "combined",
            Self::Diagnostics => "diagnostics",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown experiment '{s}'")))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dim: usize,
    /// Particle numbers (converge-n, combined).
    pub n_list: Vec<usize>,
    /// Mollifier widths (converge-eps).
    pub eps_list: Vec<f64>,
    /// Fixed mollifier width where one is needed.
    pub epsilon: f64,
    /// Exponent in ε_N = (ln N)^{-1/γ} (combined).
    pub gamma: f64,
    /// Particle number for single-N runs (stationarity, diagnostics).
    pub n_particles: usize,
    pub t_end: f64,
    pub dt: f64,
    pub nx: usize,
    pub nv: usize,
    pub replicas: usize,
    pub seed: u64,
}

/// Partial configuration as read from a file; unset fields keep the
/// experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<ExperimentKind>,
    pub dim: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub eps_list: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub n_particles: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub nx: Option<usize>,
    pub nv: Option<usize>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

impl ConfigFile {
    /// Parse TOML or JSON, chosen by extension (`.json` is JSON, anything
    /// else TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    pub fn resolve(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(config(format!("config file is for '{k}', not '{kind}'")));
            }
        }
        let mut c = ExperimentConfig::defaults(kind);
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        take!(dim, n_list, eps_list, epsilon, gamma, n_particles, t_end, dt, nx, nv, replicas, seed);
        c.validate()?;
        Ok(c)
    }
}

/// η = 10(d + 1), the growth exponent of Γ_φ in 1/ε.
pub fn eta(dim: usize) -> f64 {
    10.0 * (dim as f64 + 1.0)
}

/// ε_N = (ln N)^{-1/γ}.
pub fn epsilon_for_n(n: usize, gamma: f64) -> f64 {
    (n as f64).ln().powf(-1.0 / gamma)
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            dim: 1,
            n_list: vec![],
            eps_list: vec![],
            epsilon: 0.2,
            gamma: 25.0,
            n_particles: 256,
            t_end: 1.0,
            dt: 0.01,
            nx: 128,
            nv: 80,
            replicas: 16,
            seed: 20240601,
        };
        match kind {
            ExperimentKind::Stationarity => Self { t_end: 5.0, nx: 32, nv: 64, ..base },
            ExperimentKind::HomogeneousOracle => Self { nx: 4, nv: 128, dt: 0.02, replicas: 1, ..base },
            ExperimentKind::ConvergeN => Self { n_list: vec![128, 256, 512, 1024, 2048], ..base },
            ExperimentKind::ConvergeEps => {
                Self { eps_list: vec![0.4, 0.2, 0.1, 0.05], nx: 256, replicas: 1, ..base }
            }
            ExperimentKind::Combined => Self { n_list: vec![256, 1024, 4096], replicas: 8, ..base },
            ExperimentKind::Diagnostics => {
                Self { t_end: 5.0, nx: 64, n_particles: 1024, replicas: 4, ..base }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if !(1..=3).contains(&self.dim) {
            return Err(config(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(config("t_end must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= crate::kinetic_solver::MAX_DT) {
            return Err(config(format!("dt must lie in (0, {}]", crate::kinetic_solver::MAX_DT)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(config("epsilon must lie in (0, 1]"));
        }
        if self.replicas == 0 || self.n_particles == 0 {
            return Err(config("replicas and n_particles must be positive"));
        }
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[1] > w[0]);
        match self.experiment {
            ConvergeN => {
                if self.n_list.len() < 4 || !increasing(&self.n_list) || self.n_list[0] == 0 {
                    return Err(config("converge-n needs at least 4 strictly increasing N values"));
                }
                if self.replicas < 2 {
                    return Err(config("converge-n needs at least 2 replicas"));
                }
            }
            ConvergeEps => {
                if self.eps_list.len() < 4 || self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(config("converge-eps needs at least 4 strictly decreasing epsilon values"));
                }
                if self.eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    return Err(config("epsilon values must lie in (0, 1]"));
                }
            }
            Combined => {
                if !(self.gamma > eta(self.dim)) {
                    return Err(config(format!(
                        "gamma = {} must exceed eta = {} for d = {}",
                        self.gamma,
                        eta(self.dim),
                        self.dim
                    )));
                }
                if self.n_list.len() < 2 || !increasing(&self.n_list) || self.n_list[0] < 3 {
                    return Err(config("combined needs at least 2 strictly increasing N values >= 3"));
                }
                if self.replicas < 2 {
                    return Err(config("combined needs at least 2 replicas"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// A raw numeric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| domain(format!("table '{}' has no column '{name}'", self.name)))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(name: &str, input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let columns = rd.headers()?.iter().map(String::from).collect();
        let mut rows = vec![];
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| domain(format!("bad number '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { name: name.into(), columns, rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    fn range(name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Self { name: name.into(), value, lower, upper, pass }
    }

    fn at_most(name: &str, value: f64, upper: f64) -> Self {
        Self::range(name, value, None, Some(upper))
    }

    fn at_least(name: &str, value: f64, lower: f64) -> Self {
        Self::range(name, value, Some(lower), None)
    }

    /// Recorded measurement without a threshold; passes when finite.
    fn info(name: &str, value: f64) -> Self {
        Self::range(name, value, None, None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub slope: Option<SlopeFit>,
}

impl Verdict {
    fn new(checks: Vec<Check>, slope: Option<SlopeFit>) -> Self {
        Self { pass: checks.iter().all(|c| c.pass), checks, slope }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub verdict: Verdict,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Recompute the verdict from the stored tables.
    pub fn reevaluate(&self) -> Result<Verdict> {
        evaluate(&self.config, &self.tables)
    }

    /// Write the raw tables (`<name>.csv` or one `tables.json`), the JSON
    /// report and, for rate experiments, a gnuplot script.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        match format {
            OutputFormat::Csv => {
                for t in &self.tables {
                    t.write_csv(std::fs::File::create(dir.join(format!("{}.csv", t.name)))?)?;
                }
            }
            OutputFormat::Json => {
                std::fs::write(dir.join("tables.json"), serde_json::to_string_pretty(&self.tables)?)?;
            }
        }
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        if let Some(script) = plot_script(self) {
            std::fs::write(dir.join("slope.gp"), script)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: {} ({:.1}s)",
            self.experiment,
            if self.verdict.pass { "PASS" } else { "FAIL" },
            self.wall_clock_seconds
        );
        for c in &self.verdict.checks {
            let bounds = match (c.lower, c.upper) {
                (Some(l), Some(u)) => format!(" in [{l}, {u}]"),
                (Some(l), None) => format!(" >= {l}"),
                (None, Some(u)) => format!(" <= {u}"),
                (None, None) => String::new(),
            };
            let _ =
                writeln!(s, "  [{}] {} = {:.6e}{bounds}", if c.pass { "ok" } else { "!!" }, c.name, c.value);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(config(format!("unknown format '{s}'"))),
        }
    }
}

fn plot_script(report: &Report) -> Option<String> {
    let fit = report.verdict.slope.as_ref()?;
    let (xlabel, ylabel, data) = match report.experiment {
        ExperimentKind::ConvergeN => ("N", "mean I_N(t)", "summary.csv"),
        ExperimentKind::ConvergeEps => ("epsilon", "weighted L1 distance (floor corrected)", "corrected.csv"),
        _ => return None,
    };
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set logscale xy");
    let _ = writeln!(s, "set key top left");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let _ =
        writeln!(s, "set title '{}: slope {:.3}, r^2 {:.3}'", report.experiment, fit.slope, fit.r_squared);
    let _ = writeln!(s, "fit_line(x) = exp({:.17e}) * x**({:.17e})", fit.intercept, fit.slope);
    let _ = writeln!(
        s,
        "plot '{data}' every ::1 using 1:2 with linespoints title 'measured', fit_line(x) with lines title 'fit'"
    );
    Some(s)
}

/// Run an experiment and judge it.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let tables = match cfg.experiment {
        ExperimentKind::Stationarity => run_stationarity(cfg)?,
        ExperimentKind::HomogeneousOracle => run_homogeneous_oracle(cfg)?,
        ExperimentKind::ConvergeN => run_converge_n(cfg)?,
        ExperimentKind::ConvergeEps => run_converge_eps(cfg)?,
        ExperimentKind::Combined => run_combined(cfg)?,
        ExperimentKind::Diagnostics => run_diagnostics(cfg)?,
    };
    let verdict = evaluate(cfg, &tables)?;
    Ok(Report {
        experiment: cfg.experiment,
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        verdict,
        tables,
    })
}

fn unit_maxwellian(dim: usize) -> Result<MaxwellianParams> {
    MaxwellianParams::new(Vector::zeros(dim), 1.0)
}

fn bump(cfg: &ExperimentConfig, eps: f64) -> Result<MollifierSpec> {
    MollifierSpec::bump(cfg.dim, eps)
}

/// Stream keys for replica `r` of particle number `n`: one for the
/// initial sample, one for the dynamics.
fn replica_streams(seed: u64, n: usize, r: usize) -> (RandomStream, u64) {
    let base = mix_stream_id(n as u64, r as u64);
    (RandomStream::new(seed, mix_stream_id(base, 0)), mix_stream_id(base, 1))
}

fn solve(ic: &InitialCondition, grid: PhaseGrid, model: Model, t_end: f64, dt: f64) -> Result<SolverRun> {
    KineticSolution::init(ic, grid, model)?.solve_to(t_end, dt, grid.dim + 3)
}

fn stationarity_tables(cfg: &ExperimentConfig) -> Result<(Table, Table)> {
    let ic = InitialCondition::global_maxwellian(unit_maxwellian(cfg.dim)?)?;
    let grid = PhaseGrid::for_datum(&ic, cfg.nx, cfg.nv)?;
    let model = Model::Regularized { mollifier: bump(cfg, cfg.epsilon)? };
    let mut sol = KineticSolution::init(&ic, grid, model)?;
    let reference = sol.values().to_vec();
    let peak = reference.iter().fold(0.0f64, |m, f| m.max(*f));
    let mut drift = Table::new("solver_drift", &["time", "max_rel_drift"]);
    drift.push(vec![0.0, 0.0]);
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    for k in 1..=n_steps {
        sol = sol.step(cfg.dt)?;
        let change = sol.values().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        drift.push(vec![k as f64 * cfg.dt, change / peak]);
    }

    // particle energy band over replicas
    let spec = bump(cfg, cfg.epsilon)?;
    let times = SimulationPlan::uniform_times(cfg.t_end, 10);
    let density = crate::empirical_fields::GlobalMaxwellian(unit_maxwellian(cfg.dim)?);
    let n = cfg.n_particles;
    let per_rep: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let (mut rng, stream) = replica_streams(cfg.seed, n, r);
            let init = density.sample_config(n, &mut rng)?;
            let plan = SimulationPlan::new(n, cfg.t_end, spec, Mode::Interacting, cfg.seed, times.clone())?
                .with_stream(stream);
            let traj = simulate_interacting(&plan, &init)?;
            Ok(traj.observations.iter().map(kinetic_energy).collect())
        })
        .collect::<Result<_>>()?;
    let mut energy = Table::new("energy", &["time", "replica", "energy"]);
    for (r, series) in per_rep.iter().enumerate() {
        for (t, e) in times.iter().zip(series) {
            energy.push(vec![*t, r as f64, *e]);
        }
    }
    Ok((drift, energy))
}

fn run_stationarity(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let (a, b) = stationarity_tables(cfg)?;
    Ok(vec![a, b])
}

/// Max-norm gap between the solver and `e^{-t} f₀ + (1 - e^{-t}) ρ M`
/// for the homogeneous symmetric mixture.
pub fn homogeneous_error(cfg: &ExperimentConfig, dt: f64) -> Result<f64> {
    let (u0, t) = (1.0, 0.5);
    let ic = InitialCondition::symmetric_mixture(cfg.dim, u0, t)?;
    let grid = PhaseGrid::for_datum(&ic, cfg.nx, cfg.nv)?;
    let sol0 = KineticSolution::init(&ic, grid, Model::Plain)?;
    let run = sol0.solve_to(cfg.t_end, dt, cfg.dim + 3)?;
    let sol = run.solution;
    // conserved fields of the mixture: ρ = 1, u = 0, T = t + u₀²/d
    let m = MaxwellianParams::new(Vector::zeros(cfg.dim), t + u0 * u0 / cfg.dim as f64)?;
    let decay = (-cfg.t_end).exp();
    let nvl = grid.n_vel();
    let mut err = 0.0f64;
    for ix in 0..grid.n_space() {
        for j in 0..nvl {
            let v = grid.velocity(j);
            let exact = decay * sol0.value(ix, j) + (1.0 - decay) * m.density_unchecked(v.norm_squared());
            err = err.max((sol.value(ix, j) - exact).abs());
        }
    }
    Ok(err)
}

fn run_homogeneous_oracle(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let ic = InitialCondition::symmetric_mixture(cfg.dim, 1.0, 0.5)?;
    let grid = PhaseGrid::for_datum(&ic, cfg.nx, cfg.nv)?;
    let mut t = Table::new("errors", &["dt", "dv", "max_error"]);
    for dt in [cfg.dt, cfg.dt / 2.0, cfg.dt / 4.0] {
        t.push(vec![dt, grid.dv(), homogeneous_error(cfg, dt)?]);
    }
    Ok(vec![t])
}

/// Solve the regularized equation from the default datum and return the
/// field series that drives the auxiliary side.
fn regularized_fields(
    cfg: &ExperimentConfig,
    ic: &InitialCondition,
    eps: f64,
) -> Result<(FieldSeries, KineticSolution)> {
    let grid = PhaseGrid::for_datum(ic, cfg.nx, cfg.nv)?;
    let run = solve(ic, grid, Model::Regularized { mollifier: bump(cfg, eps)? }, cfg.t_end, cfg.dt)?;
    let (sol, _, series) = run.into_parts();
    Ok((series, sol))
}

struct CoupledOutcome {
    i_n: f64,
    /// W2² between the two sides' one-particle empirical measures, when
    /// computed.
    w2_squared: Option<f64>,
}

fn coupled_replica(
    cfg: &ExperimentConfig,
    ic: &InitialCondition,
    series: &FieldSeries,
    spec: MollifierSpec,
    n: usize,
    r: usize,
    marginal: bool,
) -> Result<CoupledOutcome> {
    let (mut rng, stream) = replica_streams(cfg.seed, n, r);
    let init = CoupledConfig::diagonal(ic.sample_config(n, &mut rng)?);
    let plan = SimulationPlan::new(n, cfg.t_end, spec, Mode::Coupled, cfg.seed, vec![cfg.t_end])?
        .with_stream(stream);
    let traj = simulate_coupled(&plan, series, &init)?;
    let last = &traj.observations[0];
    let w2_squared =
        if marginal { Some(w2_assignment(&last.z.points(), &last.sigma.points())?.w2_squared) } else { None };
    Ok(CoupledOutcome { i_n: traj.i_n[0], w2_squared })
}

/// Largest N for which the one-particle marginal W2 is computed exactly.
const MARGINAL_CHECK_MAX_N: usize = 512;

fn run_converge_n(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let ic = InitialCondition::default_inhomogeneous(cfg.dim)?;
    let (series, _) = regularized_fields(cfg, &ic, cfg.epsilon)?;
    let spec = bump(cfg, cfg.epsilon)?;
    let jobs: Vec<(usize, usize)> =
        cfg.n_list.iter().flat_map(|&n| (0..cfg.replicas).map(move |r| (n, r))).collect();
    let out: Vec<CoupledOutcome> = jobs
        .par_iter()
        .map(|&(n, r)| coupled_replica(cfg, &ic, &series, spec, n, r, r == 0 && n <= MARGINAL_CHECK_MAX_N))
        .collect::<Result<_>>()?;
    let mut replicas = Table::new("replicas", &["n", "replica", "i_n"]);
    let mut marginal = Table::new("marginal", &["n", "i_n", "w2_squared"]);
    for (&(n, r), o) in jobs.iter().zip(&out) {
        replicas.push(vec![n as f64, r as f64, o.i_n]);
        if let Some(w) = o.w2_squared {
            marginal.push(vec![n as f64, o.i_n, w]);
        }
    }
    let summary = summarize_replicas(&replicas)?;
    Ok(vec![replicas, summary, marginal])
}

/// Per-N replica mean and standard error of the `i_n` column.
fn summarize_replicas(replicas: &Table) -> Result<Table> {
    let ns = replicas.column("n")?;
    let vals = replicas.column("i_n")?;
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (n, v) in ns.iter().zip(&vals) {
        groups.entry(*n as u64).or_default().push(*v);
    }
    let mut t = Table::new("summary", &["n", "mean", "std_err", "replicas"]);
    for (n, v) in groups {
        let r = v.len() as f64;
        let mean = compensated_sum(&v) / r;
        let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        let se = if v.len() > 1 { (compensated_sum(&dev) / (r - 1.0) / r).sqrt() } else { 0.0 };
        t.push(vec![n as f64, mean, se, r]);
    }
    Ok(t)
}

fn eps_distance(cfg: &ExperimentConfig, ic: &InitialCondition, eps: f64, nx: usize, dt: f64) -> Result<f64> {
    let grid = PhaseGrid::for_datum(ic, nx, cfg.nv)?;
    let (plain, reg) = rayon::join(
        || solve(ic, grid, Model::Plain, cfg.t_end, dt),
        || -> Result<SolverRun> {
            solve(ic, grid, Model::Regularized { mollifier: bump(cfg, eps)? }, cfg.t_end, dt)
        },
    );
    plain?.solution.weighted_l1_distance(&reg?.solution)
}

fn run_converge_eps(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let ic = InitialCondition::default_inhomogeneous(cfg.dim)?;
    let eps_min = *cfg.eps_list.last().expect("validated");
    let mut jobs: Vec<(f64, usize, f64)> = cfg.eps_list.iter().map(|&e| (e, cfg.nx, cfg.dt)).collect();
    jobs.push((eps_min, 2 * cfg.nx, cfg.dt / 2.0));
    let dist: Vec<f64> =
        jobs.par_iter().map(|&(e, nx, dt)| eps_distance(cfg, &ic, e, nx, dt)).collect::<Result<_>>()?;
    let mut t = Table::new("distances", &["epsilon", "nx", "dt", "distance"]);
    for (&(e, nx, dt), d) in jobs.iter().zip(dist) {
        t.push(vec![e, nx as f64, dt, d]);
    }
    let corrected = floor_corrected(cfg, &t)?.0;
    Ok(vec![t, corrected])
}

/// Subtract the grid floor in quadrature. The floor is the Richardson
/// estimate `2 |D_h - D_{h/2}|` at the smallest ε.
fn floor_corrected(cfg: &ExperimentConfig, distances: &Table) -> Result<(Table, f64)> {
    let eps = distances.column("epsilon")?;
    let nx = distances.column("nx")?;
    let d = distances.column("distance")?;
    let eps_min = *cfg.eps_list.last().ok_or_else(|| config("empty eps list"))?;
    let find = |e: f64, n: f64| {
        eps.iter()
            .zip(&nx)
            .zip(&d)
            .find(|((a, b), _)| **a == e && **b == n)
            .map(|(_, d)| *d)
            .ok_or_else(|| domain(format!("missing distance for epsilon {e}, nx {n}")))
    };
    let coarse = find(eps_min, cfg.nx as f64)?;
    let fine = find(eps_min, 2.0 * cfg.nx as f64)?;
    let floor = 2.0 * (coarse - fine).abs();
    let mut t = Table::new("corrected", &["epsilon", "distance", "floor", "corrected"]);
    for &e in &cfg.eps_list {
        let raw = find(e, cfg.nx as f64)?;
        let c = (raw * raw - floor * floor).max(0.0).sqrt();
        t.push(vec![e, raw, floor, c]);
    }
    Ok((t, floor))
}

fn run_combined(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let ic = InitialCondition::default_inhomogeneous(cfg.dim)?;
    let grid = PhaseGrid::for_datum(&ic, cfg.nx, cfg.nv)?;
    let plain = solve(&ic, grid, Model::Plain, cfg.t_end, cfg.dt)?.solution;
    let mut replicas = Table::new("replicas", &["n", "replica", "epsilon", "i_n"]);
    let mut distances = Table::new("distances", &["n", "epsilon", "distance"]);
    for &n in &cfg.n_list {
        let eps = epsilon_for_n(n, cfg.gamma);
        let spec = bump(cfg, eps)?;
        let (series, reg) = regularized_fields(cfg, &ic, eps)?;
        distances.push(vec![n as f64, eps, plain.weighted_l1_distance(&reg)?]);
        let out: Vec<CoupledOutcome> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| coupled_replica(cfg, &ic, &series, spec, n, r, false))
            .collect::<Result<_>>()?;
        for (r, o) in out.iter().enumerate() {
            replicas.push(vec![n as f64, r as f64, eps, o.i_n]);
        }
    }
    Ok(vec![replicas, distances])
}

fn run_diagnostics(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let ic = InitialCondition::default_inhomogeneous(cfg.dim)?;
    let grid = PhaseGrid::for_datum(&ic, cfg.nx, cfg.nv)?;
    let spec = bump(cfg, cfg.epsilon)?;
    let run = solve(&ic, grid, Model::Regularized { mollifier: spec }, cfg.t_end, cfg.dt)?;
    let c2 = ic.lower_envelope_mass(&grid);
    let (c1, alpha) = ic.gaussian_bound(&grid);
    let mut constants = Table::new("constants", &["c1", "alpha", "c2"]);
    constants.push(vec![c1, alpha, c2]);
    let mut solver = Table::new(
        "solver",
        &["time", "rho_min", "rho_relax_min", "t_min", "t_max", "u_max", "nq", "grad_nq", "mass"],
    );
    for d in &run.diagnostics {
        solver.push(vec![
            d.time,
            d.rho_min,
            d.rho_relax_min,
            d.t_min,
            d.t_max,
            d.u_max,
            d.nq,
            d.grad_nq,
            d.mass,
        ]);
    }

    let n = cfg.n_particles;
    let times = SimulationPlan::uniform_times(cfg.t_end, (cfg.t_end * 10.0).round().max(1.0) as usize);
    let per_rep: Vec<Vec<[f64; 4]>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<[f64; 4]>> {
            let (mut rng, stream) = replica_streams(cfg.seed, n, r);
            let init = ic.sample_config(n, &mut rng)?;
            let plan = SimulationPlan::new(n, cfg.t_end, spec, Mode::Interacting, cfg.seed, times.clone())?
                .with_stream(stream);
            let traj = simulate_interacting(&plan, &init)?;
            let m: Vec<Vec<(f64, f64)>> =
                [2, 4, 8, 16].iter().map(|&p| moment_diagnostic(&traj, p)).collect::<Result<_>>()?;
            Ok((0..times.len()).map(|k| [m[0][k].1, m[1][k].1, m[2][k].1, m[3][k].1]).collect())
        })
        .collect::<Result<_>>()?;
    let mut moments = Table::new("moments", &["time", "replica", "m2", "m4", "m8", "m16"]);
    for (r, series) in per_rep.iter().enumerate() {
        for (t, m) in times.iter().zip(series) {
            moments.push(vec![*t, r as f64, m[0], m[1], m[2], m[3]]);
        }
    }
    Ok(vec![constants, solver, moments])
}

fn table<'a>(tables: &'a [Table], name: &str) -> Result<&'a Table> {
    tables.iter().find(|t| t.name == name).ok_or_else(|| domain(format!("missing table '{name}'")))
}

/// Per-time mean over replicas of `column` in a `(time, replica, ...)` table.
fn replica_mean_series(t: &Table, column: &str) -> Result<Vec<(f64, f64)>> {
    let times = t.column("time")?;
    let vals = t.column(column)?;
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (time, v) in times.iter().zip(&vals) {
        groups.entry(time.to_bits()).or_insert((*time, vec![])).1.push(*v);
    }
    let mut out: Vec<(f64, f64)> =
        groups.into_values().map(|(t, v)| (t, compensated_sum(&v) / v.len() as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Pure verdict from raw tables.
pub fn evaluate(cfg: &ExperimentConfig, tables: &[Table]) -> Result<Verdict> {
    match cfg.experiment {
        ExperimentKind::Stationarity => {
            let drift = table(tables, "solver_drift")?.column("max_rel_drift")?;
            let max_drift = drift.iter().fold(0.0f64, |m, d| m.max(*d));
            let energy = table(tables, "energy")?;
            let times = energy.column("time")?;
            let vals = energy.column("energy")?;
            let target = 0.5 * cfg.dim as f64;
            let mut worst = 0.0f64;
            let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for (t, v) in times.iter().zip(&vals) {
                groups.entry(t.to_bits()).or_default().push(*v);
            }
            for v in groups.values() {
                let r = v.len() as f64;
                let m = compensated_sum(v) / r;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
                let se = (var / r).sqrt();
                worst = worst.max(if se > 0.0 { (m - target).abs() / se } else { 0.0 });
            }
            Ok(Verdict::new(
                vec![
                    Check::at_most("solver_fixed_point", max_drift, 1e-6),
                    Check::at_most("energy_band_z", worst, 4.0),
                ],
                None,
            ))
        }
        ExperimentKind::HomogeneousOracle => {
            let t = table(tables, "errors")?;
            let dts = t.column("dt")?;
            let errs = t.column("max_error")?;
            let dv = t.column("dv")?[0];
            let ratio = errs[0] / errs[1];
            let ratio2 = errs[1] / errs[2];
            Ok(Verdict::new(
                vec![
                    Check::range("richardson_ratio", ratio, Some(1.7), Some(2.3)),
                    Check::info("richardson_ratio_fine", ratio2),
                    Check::at_most("error_bound", errs[0], 5.0 * (dts[0] + dv * dv)),
                ],
                None,
            ))
        }
        ExperimentKind::ConvergeN => {
            let summary = summarize_replicas(table(tables, "replicas")?)?;
            let ns = summary.column("n")?;
            let means = summary.column("mean")?;
            let ses = summary.column("std_err")?;
            let pts: Vec<(f64, f64)> = ns.iter().copied().zip(means.iter().copied()).collect();
            let fit = fit_loglog_slope(&pts)?;
            let mut worst_rise = f64::NEG_INFINITY;
            for k in 1..means.len() {
                let band = 2.0 * (ses[k].powi(2) + ses[k - 1].powi(2)).sqrt();
                worst_rise = worst_rise.max(means[k] - means[k - 1] - band);
            }
            let marginal = table(tables, "marginal")?;
            let i_n = marginal.column("i_n")?;
            let w2 = marginal.column("w2_squared")?;
            let excess = i_n.iter().zip(&w2).map(|(i, w)| w - i).fold(f64::NEG_INFINITY, f64::max);
            let mut checks = vec![
                Check::range("slope", fit.slope, Some(-1.3), Some(-0.7)),
                Check::at_least("r_squared", fit.r_squared, 0.9),
                Check::at_most("monotone_excess", worst_rise, 0.0),
            ];
            if !i_n.is_empty() {
                checks.push(Check::at_most("marginal_w2_excess", excess, 1e-12));
            }
            Ok(Verdict::new(checks, Some(fit)))
        }
        ExperimentKind::ConvergeEps => {
            let (corrected, floor) = floor_corrected(cfg, table(tables, "distances")?)?;
            let eps = corrected.column("epsilon")?;
            let vals = corrected.column("corrected")?;
            let raw = corrected.column("distance")?;
            let pts: Vec<(f64, f64)> = eps.iter().copied().zip(vals.iter().copied()).collect();
            let mut checks = vec![
                Check::info("floor", floor),
                Check::at_most("floor_fraction", floor / raw[raw.len() - 1], 1.0),
            ];
            let fit = match fit_loglog_slope(&pts) {
                Ok(fit) => {
                    checks.push(Check::range("slope", fit.slope, Some(0.7), Some(1.3)));
                    checks.push(Check::at_least("r_squared", fit.r_squared, 0.9));
                    Some(fit)
                }
                Err(_) => {
                    checks.push(Check::range("slope", f64::NAN, Some(0.7), Some(1.3)));
                    None
                }
            };
            Ok(Verdict::new(checks, fit))
        }
        ExperimentKind::Combined => {
            let rep = table(tables, "replicas")?;
            let summary = summarize_replicas(rep)?;
            let means = summary.column("mean")?;
            let ses = summary.column("std_err")?;
            let dist = table(tables, "distances")?.column("distance")?;
            let combined: Vec<f64> = means.iter().zip(&dist).map(|(m, d)| m.sqrt() + d).collect();
            let mut worst_rise = f64::NEG_INFINITY;
            for k in 1..combined.len() {
                let se = |i: usize| if means[i] > 0.0 { ses[i] / (2.0 * means[i].sqrt()) } else { 0.0 };
                let band = 2.0 * (se(k).powi(2) + se(k - 1).powi(2)).sqrt();
                worst_rise = worst_rise.max(combined[k] - combined[k - 1] - band);
            }
            Ok(Verdict::new(
                vec![
                    Check::at_most("combined_monotone_excess", worst_rise, 0.0),
                    Check::info("combined_error_last", *combined.last().unwrap_or(&f64::NAN)),
                ],
                None,
            ))
        }
        ExperimentKind::Diagnostics => {
            let c2 = table(tables, "constants")?.column("c2")?[0];
            let solver = table(tables, "solver")?;
            let time = solver.column("time")?;
            let rho = solver.column("rho_min")?;
            let ratio =
                time.iter().zip(&rho).map(|(t, r)| r / (c2 * (-t).exp())).fold(f64::INFINITY, f64::min);
            let scaled: Vec<f64> = time.iter().zip(&rho).map(|(t, r)| r * t.exp()).collect();
            let floor_ratio = scaled.iter().fold(f64::INFINITY, |m, s| m.min(*s)) / scaled[0];
            let nq = solver.column("nq")?;
            let growth = (nq[nq.len() - 1] / nq[0]).ln() / time[time.len() - 1];
            let grad = solver.column("grad_nq")?;
            let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(*g));
            let t_min = solver.column("t_min")?.iter().fold(f64::INFINITY, |m, t| m.min(*t));
            let m8 = replica_mean_series(table(tables, "moments")?, "m8")?;
            let vals: Vec<f64> = m8.iter().map(|p| p.1).collect();
            let m8_ratio = vals[vals.len() - 1] / median(&vals);
            Ok(Verdict::new(
                vec![
                    Check::at_least("rho_lower_bound_ratio", ratio, 0.5),
                    Check::info("rho_exp_t_min_over_initial", floor_ratio),
                    Check::at_least("rho_exp_t_min_over_c2", floor_ratio * scaled[0] / c2, 1.0),
                    Check::at_most("moment8_final_over_median", m8_ratio, 2.0),
                    Check::info("nq_growth_rate", growth),
                    Check::info("grad_nq_max", grad_max),
                    Check::at_least("temperature_min", t_min, 0.0),
                ],
                None,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("bogus".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn defaults_validate() {
        for k in ExperimentKind::ALL {
            ExperimentConfig::defaults(k).validate().unwrap();
        }
    }

    #[test]
    fn gamma_must_exceed_eta() {
        assert_eq!(eta(1), 20.0);
        let mut c = ExperimentConfig::defaults(ExperimentKind::Combined);
        c.gamma = 25.0;
        assert!(c.validate().is_ok());
        c.gamma = 10.0;
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        c.gamma = 20.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn epsilon_decreases_with_n() {
        assert!(epsilon_for_n(10_000, 25.0) < epsilon_for_n(100, 25.0));
    }

    #[test]
    fn list_orderings() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::ConvergeN);
        c.n_list = vec![128, 256, 256, 1024];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(ExperimentKind::ConvergeEps);
        c.eps_list = vec![0.05, 0.1, 0.2, 0.4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_files() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "experiment = \"converge-n\"\nn_list = [16, 32, 64, 128]\nseed = 5\n")
            .unwrap();
        let c = ConfigFile::from_path(&toml_path).unwrap().resolve(ExperimentKind::ConvergeN).unwrap();
        assert_eq!(c.n_list, vec![16, 32, 64, 128]);
        assert_eq!(c.seed, 5);
        assert_eq!(c.epsilon, 0.2);
        assert!(ConfigFile::from_path(&toml_path).unwrap().resolve(ExperimentKind::Combined).is_err());
        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"gamma": 10}"#).unwrap();
        let f = ConfigFile::from_path(&json_path).unwrap();
        assert!(matches!(f.resolve(ExperimentKind::Combined), Err(Error::Configuration(_))));
        std::fs::write(&json_path, r#"{"gama": 30}"#).unwrap();
        assert!(ConfigFile::from_path(&json_path).is_err());
    }

    #[test]
    fn table_csv_round_trip() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![0.1, 128.0]);
        t.push(vec![1.0 / 3.0, f64::NAN]);
        let mut buf = vec![];
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv("x", buf.as_slice()).unwrap();
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1][0], t.rows[1][0]);
        assert!(back.rows[1][1].is_nan());
    }

    #[test]
    fn verdict_from_tables() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::ConvergeN);
        let mut rep = Table::new("replicas", &["n", "replica", "i_n"]);
        for &n in &cfg.n_list {
            for r in 0..4 {
                rep.push(vec![n as f64, r as f64, (1.0 + 0.01 * r as f64) / n as f64]);
            }
        }
        let marginal = Table::new("marginal", &["n", "i_n", "w2_squared"]);
        let v = evaluate(&cfg, &[rep.clone(), marginal.clone()]).unwrap();
        assert!(v.pass, "{v:?}");
        assert!((v.slope.unwrap().slope + 1.0).abs() < 1e-9);
        // flat data fails the slope
        for row in &mut rep.rows {
            row[2] = 1.0 + 0.001 * row[1];
        }
        assert!(!evaluate(&cfg, &[rep, marginal]).unwrap().pass);
    }

    #[test]
    fn floor_correction() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::ConvergeEps);
        let mut t = Table::new("distances", &["epsilon", "nx", "dt", "distance"]);
        for &e in &cfg.eps_list {
            t.push(vec![e, cfg.nx as f64, cfg.dt, (e * e + 0.01f64.powi(2)).sqrt()]);
        }
        // refinement halves the floor: 2 |D_h - D_{h/2}| recovers it
        let eps_min = *cfg.eps_list.last().unwrap();
        let coarse = (eps_min * eps_min + 1e-4f64).sqrt();
        t.push(vec![eps_min, 2.0 * cfg.nx as f64, cfg.dt / 2.0, coarse - 0.005]);
        let (c, floor) = floor_corrected(&cfg, &t).unwrap();
        assert!((floor - 0.01).abs() < 1e-12);
        for (e, v) in c.column("epsilon").unwrap().iter().zip(c.column("corrected").unwrap()) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
