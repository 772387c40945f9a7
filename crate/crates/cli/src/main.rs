use std::path::PathBuf;
use std::process::ExitCode;

use bgklab::experiments::{self, ConfigFile, ExperimentKind, OutputFormat, Report};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bgklab", version, about = "Particle approximation experiments for the BGK equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed point of the solver and energy stationarity of the particles
    Stationarity(RunArgs),
    /// Solver against the exact homogeneous relaxation
    HomogeneousOracle(RunArgs),
    /// Coupling error I_N against N at fixed ε
    ConvergeN(RunArgs),
    /// Plain vs regularized solution distance against ε
    ConvergeEps(RunArgs),
    /// Joint limit with ε_N = (ln N)^(-1/γ)
    Combined(RunArgs),
    /// Field bounds, norms and velocity moments over time
    Diagnostics(RunArgs),
    /// Recompute the verdict of a stored report.json
    Evaluate { report: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: bgklab-out/<experiment>)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> bgklab::Result<bool> {
    let file = match &args.config {
        Some(p) => ConfigFile::from_path(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.resolve(kind)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_dir = args
        .out_dir
        .or_else(|| file.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bgklab-out").join(kind.name()));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(bgklab::Error::Configuration("--workers must be positive".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool =
        pool.build().map_err(|e| bgklab::Error::Configuration(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| experiments::run(&cfg))?;
    report.write(&out_dir, args.format.into())?;
    print!("{}", report.summary());
    println!("outputs in {}", out_dir.display());
    Ok(report.verdict.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Stationarity(a) => run(ExperimentKind::Stationarity, a),
        Command::HomogeneousOracle(a) => run(ExperimentKind::HomogeneousOracle, a),
        Command::ConvergeN(a) => run(ExperimentKind::ConvergeN, a),
        Command::ConvergeEps(a) => run(ExperimentKind::ConvergeEps, a),
        Command::Combined(a) => run(ExperimentKind::Combined, a),
        Command::Diagnostics(a) => run(ExperimentKind::Diagnostics, a),
        Command::Evaluate { report } => Report::load(&report).and_then(|r| {
            let v = r.reevaluate()?;
            let r = Report { verdict: v, ..r };
            print!("{}", r.summary());
            Ok(r.verdict.pass)
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
