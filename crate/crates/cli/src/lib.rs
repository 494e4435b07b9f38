//! Command-line front end: config loading, the subcommands and the run manifest.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use multipass_core::Exec;
use serde_json::json;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Spot pattern, beam radii and reflection count.
    Spots,
    /// Monte Carlo ray trace compared with the paraxial spots.
    Trace,
    /// Diffusion correlation, full correlation and spectrum.
    Noise,
    /// Reflection counts over a grid of separations and entry slopes.
    Sweep,
    /// Reflection count only.
    Nrefl,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spots => "spots",
            Command::Trace => "trace",
            Command::Noise => "noise",
            Command::Sweep => "sweep",
            Command::Nrefl => "nrefl",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "multipass", version, about = "Multipass cell geometry, ray tracing and spin-noise correlations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: `output.dir`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of traced rays.
    #[arg(long, global = true)]
    pub rays: Option<usize>,
    /// Also run the Monte Carlo diffusion oracle.
    #[arg(long, global = true)]
    pub oracle: bool,
    /// Free-flight beam evolution over the whole round trip, without per-pass power normalization.
    #[arg(long, global = true)]
    pub paper_literal: bool,
    /// Echo angles in degrees.
    #[arg(long, global = true, conflicts_with = "rad")]
    pub deg: bool,
    /// Echo angles in radians.
    #[arg(long, global = true)]
    pub rad: bool,
}

impl Cli {
    /// Loads the config and applies the command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let path = self.config.as_ref().ok_or_else(|| ConfigError("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rays {
            cfg.trace.rays = r;
        }
        if self.oracle {
            cfg.noise.oracle = true;
        }
        if self.paper_literal {
            cfg.noise.evolution = multipass_core::noise::Evolution::PaperLiteral;
            cfg.noise.power_normalized = Some(false);
        }
        if self.deg {
            cfg.output.angles = config::AngleEcho::Deg;
        }
        if self.rad {
            cfg.output.angles = config::AngleEcho::Rad;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for a failed run: 2 for bad input, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let input = e.chain().any(|c| {
        c.is::<ConfigError>() || c.downcast_ref::<multipass_core::Error>().is_some_and(|e| e.is_input_error())
    });
    if input {
        2
    } else {
        1
    }
}

/// Runs one command with a resolved config and writes `manifest.json`.
pub fn execute(command: Command, cfg: &RunConfig, out: &std::path::Path) -> Result<serde_json::Value> {
    let start = Instant::now();
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let exec = Exec::Parallel;
    let outcome = match command {
        Command::Spots => commands::spots(cfg, out)?,
        Command::Trace => commands::trace(cfg, out, exec)?,
        Command::Noise => commands::noise(cfg, out, exec)?,
        Command::Sweep => commands::sweep(cfg, out, exec)?,
        Command::Nrefl => commands::nrefl(cfg, out)?,
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = json!({
        "tool": "multipass",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": cfg,
        "seed": cfg.seed,
        "wall_clock_s": start.elapsed().as_secs_f64(),
        "derived": commands::derived(cfg),
        "summary": outcome.summary,
        "warnings": outcome.warnings,
        "tolerances": { "rel": cfg.noise.rel_tol, "abs": cfg.noise.abs_tol },
    });
    commands::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let out = cli.out.clone().or_else(|| cfg.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| "out".into());
    execute(cli.command, &cfg, &out)?;
    Ok(())
}
