mod output;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand};
use gate_lab_core::config::{ExperimentConfig, ExperimentKind};

use crate::output::{write_run, RunInfo};
use crate::runs::Ctx;

#[derive(Parser)]
#[command(name = "gate-lab", version, about = "Simulate the microwave-dressed J-coupling gate on two trapped ions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration; defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; defaults to runs/<experiment>-<config hash prefix>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides sampling.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "GATE_LAB_JOBS")]
    jobs: Option<usize>,

    /// Compare the result against its expected behaviour; exit 3 on mismatch.
    #[arg(long, global = true)]
    check: bool,

    /// Allow full-scale sampling runs.
    #[arg(long, global = true)]
    full: bool,

    /// Write the state vector at every sample time (evolve only).
    #[arg(long, global = true)]
    dump_states: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Closed-form couplings, gate time, error budget and cooling limits.
    Params,
    /// Fidelity time series of one gate run.
    Evolve,
    /// Intrinsic gate error over a drive, trap and gradient grid.
    ErrorScan,
    /// Continuous against pulsed decoupling under magnetic-field noise.
    NoiseCompare,
    /// Gate on a thermal, heating motional state via quantum trajectories.
    HotGate,
    /// Electrode-voltage noise propagated to magnetic-field noise.
    VoltageNoise,
    /// Free-induction decay with and without dressing.
    Fid,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Params => ExperimentKind::Params,
            Command::Evolve => ExperimentKind::Evolve,
            Command::ErrorScan => ExperimentKind::ErrorScan,
            Command::NoiseCompare => ExperimentKind::NoiseCompare,
            Command::HotGate => ExperimentKind::HotGate,
            Command::VoltageNoise => ExperimentKind::VoltageNoise,
            Command::Fid => ExperimentKind::Fid,
        }
    }
}

enum Outcome {
    Done,
    CheckFailed,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<gate_lab_core::Error>() {
        Some(core) if core.is_numerical() => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let kind = cli.command.kind();
    let config_bytes = match &cli.config {
        Some(p) => std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => b"{}\n".to_vec(),
    };
    let text = std::str::from_utf8(&config_bytes).context("configuration is not UTF-8")?;
    let loaded = ExperimentConfig::parse(text)?;
    let cfg = &loaded.config;
    if let Some(k) = cfg.experiment {
        if k != kind {
            bail!("configuration is for `{}`, not `{}`", k.name(), kind.name());
        }
    }
    if cli.dump_states && kind != ExperimentKind::Evolve {
        bail!("--dump-states only applies to evolve");
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("configuring worker threads")?;
    }
    let seed = cli.seed.unwrap_or(cfg.sampling.master_seed);
    let ctx = Ctx { cfg, hash: &loaded.hash, seed, check: cli.check, full: cli.full, dump_states: cli.dump_states };
    let started = Utc::now();
    log::info!("{} with config {}", kind.name(), &loaded.hash[..12]);
    let art = match kind {
        ExperimentKind::Params => runs::params(&ctx),
        ExperimentKind::Evolve => runs::evolve(&ctx),
        ExperimentKind::ErrorScan => runs::error_scan_run(&ctx),
        ExperimentKind::NoiseCompare => runs::noise_compare_run(&ctx),
        ExperimentKind::HotGate => runs::hot_gate_run(&ctx),
        ExperimentKind::VoltageNoise => runs::voltage_noise(&ctx),
        ExperimentKind::Fid => runs::fid(&ctx),
    }?;
    let dir = cli
        .out
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", kind.name(), &loaded.hash[..8])));
    let info = RunInfo {
        experiment: kind.name(),
        config_hash: &loaded.hash,
        config_bytes: &config_bytes,
        seed,
        started,
        formats: &cfg.output.formats,
    };
    let manifest = write_run(&dir, &info, &art)?;
    eprintln!("wrote {}", manifest.display());
    match &art.check {
        Some(c) if !c.passed => {
            eprintln!("check FAILED: {}", c.detail);
            Ok(Outcome::CheckFailed)
        }
        Some(c) => {
            eprintln!("check passed: {}", c.detail);
            Ok(Outcome::Done)
        }
        None => Ok(Outcome::Done),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
