use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lippfm::config::{load_config, write_resolved_config, ConfigError, SweepConfig};
use lippfm::control::lqr_gain;
use lippfm::model::{derive_constants, linearize};
use lippfm::output::{emit_csv, emit_svg, OutputError};
use lippfm::sim::{Classification, SimError, Simulator};
use lippfm::sweep::{run_sweep, SweepError};

#[derive(Parser)]
#[command(
    name = "lippfm",
    version,
    about = "Flywheel-pendulum balance control: LQR design, episodes and push-recovery sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a grid of initial leans and lean rates; writes region.csv.
    Sweep(CommonArgs),
    /// Run one episode from the configured initial state; writes trajectory.csv.
    Episode(CommonArgs),
    /// Print the LQR design report for the configured plant and weights.
    Design(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config; omitted sections use defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides [output].dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write region.svg (sweep only).
    #[arg(long)]
    svg: bool,
    /// Worker threads; 0 = all cores, 1 = serial.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Reserved. Runs are deterministic, so the value is ignored.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn resolve(args: &CommonArgs) -> Result<SweepConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => SweepConfig::default(),
    };
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.output.jobs = jobs;
    }
    cfg.output.svg |= args.svg;
    Ok(cfg)
}

fn prepare_out_dir(cfg: &SweepConfig) -> Result<&Path, Failure> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    write_resolved_config(cfg, dir)?;
    Ok(dir)
}

fn sweep(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let spec = cfg.sweep_spec();
    let started = Instant::now();
    let map = run_sweep(&spec)?;
    let elapsed = started.elapsed();

    let dir = prepare_out_dir(&cfg)?;
    emit_csv(&map, &dir.join("region.csv"))?;
    if cfg.output.svg {
        emit_svg(&map, &dir.join("region.svg"))?;
    }
    let warnings = map.ray_warnings();
    let mut text = String::new();
    for w in &warnings {
        text.push_str(w);
        text.push('\n');
    }
    let path = dir.join("warnings.txt");
    fs::write(&path, text).map_err(|e| io_failure(&path, e))?;

    println!(
        "{} cells in {:.2} s -> {}",
        map.cells.len(),
        elapsed.as_secs_f64(),
        dir.display()
    );
    for status in Classification::ALL {
        println!("  {:<14} {}", status.as_str(), map.count(status));
    }
    if !warnings.is_empty() {
        println!("  {} ray warnings, see warnings.txt", warnings.len());
    }
    Ok(())
}

fn episode(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let episode = cfg.episode_config();
    let sim = Simulator::new(&cfg.model, &episode.controller.weights)?;
    let result = sim.run(&episode)?;

    let dir = prepare_out_dir(&cfg)?;
    let path = dir.join("trajectory.csv");
    let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
    let mut w = BufWriter::new(file);
    result
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(&path, e))?;

    let summary = result.summary_json(&episode.thresholds);
    let path = dir.join("episode.json");
    fs::write(&path, format!("{summary:#}\n")).map_err(|e| io_failure(&path, e))?;
    println!(
        "{}: {} samples -> {}",
        result.classification,
        result.samples.len(),
        dir.display()
    );
    Ok(())
}

fn design(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let consts = derive_constants(&cfg.model).map_err(|e| Failure::Invalid(e.to_string()))?;
    let plant = linearize(&cfg.model, &consts);
    let design = lqr_gain(&plant, &cfg.weights()).map_err(|e| Failure::Invalid(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = write!(std::io::stdout().lock(), "{design}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Episode(a) => episode(a),
        Command::Design(a) => design(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
