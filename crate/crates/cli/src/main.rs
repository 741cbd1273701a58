//! `nfseg`: motion segmentation of normal-flow files.
//!
//! Exit codes: 0 on success, 1 on input, format or evaluation errors, 2 on
//! configuration errors (and on command-line usage errors).

mod bench;
mod eval;
mod output;
mod render;
mod segment;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "nfseg", version, about = "Normal-flow based motion segmentation for event cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every window of a flow file.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the manifest; segmentation itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic flow file with ground truth from a scene spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Score a result file against ground-truth boxes, masks or a sidecar.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt_boxes: Option<PathBuf>,
        #[arg(long)]
        gt_masks: Option<PathBuf>,
        #[arg(long)]
        gt_sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-stage median timings.
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
}

/// Applies `NFSEG_THREADS` (0 or unset: one thread per core).
fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("NFSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("NFSEG_THREADS must be a non-negative integer, got `{value}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<nfseg_core::Error>(),
            Some(nfseg_core::Error::Config(_) | nfseg_core::Error::MissingKey(_))
        )
    })
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Segment { input, config, out, seed } => segment::cmd_segment(&input, &config, &out, seed),
        Command::Synth { spec, out, seed } => synth::cmd_synth(&spec, &out, seed),
        Command::Eval {
            results,
            gt_boxes,
            gt_masks,
            gt_sidecar,
            out,
        } => eval::cmd_eval(&eval::EvalArgs {
            results: &results,
            gt_boxes: gt_boxes.as_deref(),
            gt_masks: gt_masks.as_deref(),
            gt_sidecar: gt_sidecar.as_deref(),
            out: &out,
        }),
        Command::Bench { input, config, reps } => bench::cmd_bench(&input, &config, reps),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let uses_config = matches!(cli.command, Command::Segment { .. } | Command::Bench { .. });
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if uses_config && is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
