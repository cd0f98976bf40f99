//! `parahom`: runs one experiment from a JSON configuration and writes its
//! tables, a resolved copy of the configuration and a checksummed manifest.

mod commands;
mod config;
mod error;
mod output;
mod plotdata;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::CliError;
use output::{sha256_hex, RunManifest, RunWriter};

#[derive(Parser)]
#[command(name = "parahom", version, about = "Homogenization experiments for space-time random parabolic operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PARAHOM_WORKERS")]
    workers: Option<usize>,
    /// Overrides `run.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.tol`.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Correctors and the effective tensor of one sample.
    Effective(RunArgs),
    /// Massive correctors over `run.betas`.
    BetaSweep(RunArgs),
    /// Flux corrector identities and the growth of its time row.
    FluxcorVerify(RunArgs),
    /// Monte Carlo convergence rate of `u_eps` to `u_0`.
    Rate(RunArgs),
    /// Residual of the two-scale expansion, optionally under refinement.
    Residual(RunArgs),
    /// Fluctuation moments with bootstrap bands.
    Fluct(RunArgs),
    /// Minimal radius per sample.
    Minrad(RunArgs),
    /// Variance scaling of the homogenization commutator.
    Commutator(RunArgs),
    /// Coefficient and corrector fields as PHOM files.
    DumpField(RunArgs),
    /// Plot table of a completed run.
    Plotdata {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/plotdata.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the configuration schema.
    Schema,
}

type Runner = fn(&ExperimentConfig, u64, &mut RunWriter) -> Result<(), CliError>;

fn execute(name: &str, args: &RunArgs, run: Runner) -> Result<(), CliError> {
    let start = Instant::now();
    if !args.config.is_file() {
        return Err(CliError::Schema(format!("config file {} not found", args.config.display())));
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = args.tol {
        cfg.run.tol = Some(t);
    }
    if let Some(w) = args.workers {
        cfg.run.workers = Some(w);
    }
    let out_dir = args.out.clone().or_else(|| cfg.run.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("parahom-out"));
    cfg.run.output = Some(out_dir.display().to_string());
    // re-check overrides
    let resolved = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Schema(e.to_string()))?;
    let cfg = ExperimentConfig::parse(&resolved)?;
    let workers = cfg.run.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Schema(e.to_string()))?;

    let mut writer = RunWriter::new(&out_dir)?;
    writer.write("config.json", resolved.as_bytes())?;
    let result = pool.install(|| run(&cfg, cfg.run.seed, &mut writer));
    if let Err(e) = result {
        writer.fail(&e)?;
        return Err(e);
    }
    writer.finish(RunManifest {
        tool: "parahom".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        config_sha256: sha256_hex(resolved.as_bytes()),
        seed: cfg.run.seed,
        workers,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: Vec::new(),
    })?;
    Ok(())
}

fn plotdata(run: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = plotdata::emit(run)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("plotdata.csv"));
    std::fs::write(&target, bytes).map_err(|e| CliError::Io(format!("{}: {e}", target.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Effective(a) => execute("effective", a, commands::effective_cmd),
        Command::BetaSweep(a) => execute("beta-sweep", a, commands::beta_sweep_cmd),
        Command::FluxcorVerify(a) => execute("fluxcor-verify", a, commands::fluxcor_cmd),
        Command::Rate(a) => execute("rate", a, commands::rate_cmd),
        Command::Residual(a) => execute("residual", a, commands::residual_cmd),
        Command::Fluct(a) => execute("fluct", a, commands::fluct_cmd),
        Command::Minrad(a) => execute("minrad", a, commands::minrad_cmd),
        Command::Commutator(a) => execute("commutator", a, commands::commutator_cmd),
        Command::DumpField(a) => execute("dump-field", a, commands::dump_cmd),
        Command::Plotdata { run, out } => plotdata(run, out.as_deref()),
        Command::Schema => {
            print!("{}", config::SCHEMA);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parahom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
