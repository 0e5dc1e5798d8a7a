//! `nhalab`: runs one experiment from a config file and writes CSV/JSON
//! outputs plus a manifest into the output directory.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nhalab::Execution;

use crate::commands::{Outputs, Run};
use crate::config::ExperimentConfig;
use crate::manifest::{Conventions, OutputFile, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "nhalab", version, about = "Spectra and level curves of the non-Hermitian Anderson model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true, env = "NHALAB_OUT_DIR")]
    out: Option<PathBuf>,
    /// Seed for every random part of the potential.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Verify the level identity on every emitted eigenvalue.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Eigenvalues of H_n^g for every n and g (`g = 0` gives the Hermitian energies).
    Spectrum,
    /// Level arcs of U_n and the eigenvalues predicted on them.
    Curves,
    /// Nearest-neighbour spacings and counts on the central half of each arc.
    Spacings,
    /// Empirical integrated density of states.
    Dos,
    /// Growth statistic s_n of a sparse-peak potential.
    Sparse,
    /// Lyapunov exponents next to U_n on a grid above the axis.
    Lyapunov,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Curves => "curves",
            Command::Spacings => "spacings",
            Command::Dos => "dos",
            Command::Sparse => "sparse",
            Command::Lyapunov => "lyapunov",
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let path = cli.config.context("--config is required")?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    cfg.potential = cfg.resolved_potential();
    let out_dir = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let started = manifest::unix_now();
    let run = Run { cfg: &cfg, spec: cfg.potential.clone(), exec: Execution::default(), check: cli.check };
    let mut outputs = Outputs::default();
    let result = match cli.command {
        Command::Spectrum => commands::spectrum(&run, &mut outputs),
        Command::Curves => commands::curves(&run, &mut outputs),
        Command::Spacings => commands::spacings(&run, &mut outputs),
        Command::Dos => commands::dos(&run, &mut outputs),
        Command::Sparse => commands::sparse(&run, &mut outputs),
        Command::Lyapunov => commands::lyapunov(&run, &mut outputs),
    };

    let mut files = Vec::with_capacity(outputs.files.len());
    for (name, contents) in &outputs.files {
        std::fs::write(out_dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        files.push(OutputFile::new(name, contents));
    }
    let failed_checks: Vec<_> = outputs.checks.iter().filter(|c| !c.pass).collect();
    let (status, code) = match (&result, failed_checks.is_empty()) {
        (Err(_), _) => ("partial", ExitCode::from(1)),
        (Ok(()), false) => ("check_failed", ExitCode::from(3)),
        (Ok(()), true) => ("complete", ExitCode::SUCCESS),
    };
    for c in &failed_checks {
        eprintln!("check failed: {} = {:e} > {:e}", c.name, c.value, c.bound);
    }
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    let manifest = RunManifest {
        tool: "nhalab",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().to_owned(),
        status,
        error: result.err().map(|e| format!("{e:#}")),
        started_unix: started,
        finished_unix: manifest::unix_now(),
        threads: rayon::current_num_threads(),
        seeds: cfg.potential.seeds(),
        conventions: Conventions::default(),
        config: cfg.clone(),
        checks: outputs.checks,
        outputs: files,
    };
    manifest::write(&out_dir, &manifest).context("writing manifest.json")?;
    Ok(code)
}
