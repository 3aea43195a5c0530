//! Argument parsing and command dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::commands;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::Ctx;
use crate::lock::DirLock;

#[derive(Debug, Parser)]
#[command(name = "jmfusion", version, about = "Multimodal jaw-movement event recognition experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into --out.
    Synth(Common),
    /// Train every configured run, fold by fold (resumable).
    Train(Common),
    /// Score trained runs, or TSV directories given in [score].
    Evaluate(Common),
    /// Rank the configured fusion levels and window sizes.
    CompareFusion(Common),
    /// Ablation table: metrics, parameters, FLOPs, inference time.
    Ablate(Common),
    /// Post-training f16 quantization and metric deltas.
    Quantize(Common),
    /// Parameter and FLOP counts (full-width architecture without --config).
    Flops(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::CompareFusion(_) => "compare-fusion",
            Command::Ablate(_) => "ablate",
            Command::Quantize(_) => "quantize",
            Command::Flops(_) => "flops",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Train(c)
            | Command::Evaluate(c)
            | Command::CompareFusion(c)
            | Command::Ablate(c)
            | Command::Quantize(c)
            | Command::Flops(c) => c,
        }
    }
}

fn load_config(c: &Common) -> Result<Option<ExperimentConfig>> {
    let cfg = match &c.config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => None,
    };
    cfg.map(|cfg| cfg.finalize(c.seed)).transpose()
}

pub fn run(cmd: &Command) -> Result<Value> {
    let c = cmd.common();
    if c.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let cfg = load_config(c)?;
    if let Command::Flops(_) = cmd {
        let out = c.out.clone().or_else(|| cfg.as_ref().and_then(|f| f.out.clone()));
        let _lock = out.as_deref().map(|o| DirLock::acquire(o, cmd.name())).transpose()?;
        return commands::flops(cfg.as_ref(), out.as_deref());
    }
    // synth works from defaults; everything else reads the experiment file
    let cfg = match cfg {
        Some(cfg) => cfg,
        None if matches!(cmd, Command::Synth(_)) => ExperimentConfig::default().finalize(c.seed)?,
        None => return Err(CliError::Usage(format!("{} requires --config", cmd.name()))),
    };
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out` in the config".into()))?;
    let _lock = DirLock::acquire(&out, cmd.name())?;
    let ctx = Ctx { out, cfg, jobs: c.jobs };
    match cmd {
        Command::Synth(_) => commands::synth(&ctx),
        Command::Train(_) => commands::train(&ctx),
        Command::Evaluate(_) => commands::evaluate(&ctx),
        Command::CompareFusion(_) => commands::compare_fusion(&ctx),
        Command::Ablate(_) => commands::ablate(&ctx),
        Command::Quantize(_) => commands::quantize(&ctx),
        Command::Flops(_) => unreachable!("handled above"),
    }
}
