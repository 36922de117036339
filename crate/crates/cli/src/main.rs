use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use flowstab::lie::GroupTag;
use flowstab_cli::{
    cmd_estimate, cmd_metrics, cmd_stabilize, cmd_synth, cmd_warp, Overrides, PipelineConfig, Trajectory,
    DATASET_CONFIG,
};

#[derive(Parser, Debug)]
#[command(name = "flowstab", version, about = "Video stabilization from 3D scene flow")]
struct Cli {
    /// Key = value config file. Without it, commands reading a dataset use
    /// the dataset's own config when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// se3, sim3, sa3 or ga3.
    #[arg(long, global = true)]
    group: Option<GroupTag>,
    /// Remove the mean velocity before averaging induced twists.
    #[arg(long, global = true)]
    recenter: bool,
    #[arg(long, global = true)]
    keyframe_interval: Option<usize>,
    /// Weight of the shape-preserving term of the warp.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic plane sequence with exact flow.
    Synth {
        /// static, constant, random-smooth, jitter, or a twist table.
        #[arg(long, default_value = "random-smooth")]
        trajectory: Trajectory,
        /// Number of inter-frame steps (frames = steps + 1).
        #[arg(long, default_value_t = 89)]
        steps: usize,
    },
    /// Estimate inter-frame motion from depth and flow.
    Estimate { dataset: PathBuf },
    /// Solve for the stabilized path from a table of step transforms.
    Stabilize {
        transforms: PathBuf,
        /// Keyframe corrections, one `frame m00 .. m33` line each.
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// Render stabilized frames.
    Warp { dataset: PathBuf, render: PathBuf },
    /// Score a stabilized sequence.
    Metrics { dataset: PathBuf, stabilized: PathBuf },
}

/// Commands that read a dataset need its intrinsics: from `--config`, or
/// from the config `synth` stored next to the data.
fn load_config(cli: &Cli, dataset: Option<&Path>) -> Result<PipelineConfig> {
    let mut config = match (&cli.config, dataset) {
        (Some(p), None) => PipelineConfig::load(p)?,
        (Some(p), Some(_)) => PipelineConfig::load_with_intrinsics(p)?,
        (None, Some(d)) => {
            let p = d.join(DATASET_CONFIG);
            if !p.exists() {
                bail!(
                    "camera intrinsics are required: pass --config or add {} to {}",
                    DATASET_CONFIG,
                    d.display()
                );
            }
            let mut c = PipelineConfig::load_with_intrinsics(&p)?;
            c.out = PathBuf::from(".");
            c
        }
        (None, None) => PipelineConfig::default(),
    };
    config.apply(&Overrides {
        group: cli.group,
        recenter: cli.recenter,
        keyframe_interval: cli.keyframe_interval,
        alpha: cli.alpha,
        seed: cli.seed,
        out: cli.out.clone(),
    })?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { trajectory, steps } => {
            let s = cmd_synth(&load_config(cli, None)?, trajectory, *steps)?;
            println!("wrote {} frames to {}", s.frames, s.dir.display());
        }
        Command::Estimate { dataset } => {
            let r = cmd_estimate(&load_config(cli, Some(dataset))?, dataset)?;
            println!("estimated {} steps", r.steps.len());
            for s in &r.low_confidence_steps {
                eprintln!("warning: step {s} has too few valid pixels, using identity motion");
            }
        }
        Command::Stabilize { transforms, constraints } => {
            let r = cmd_stabilize(&load_config(cli, None)?, transforms, constraints.as_deref())?;
            for s in &r.segments {
                println!(
                    "segment {}-{}: cost {:.3e}, residual {:.1e}, {} iterations{}",
                    s.start,
                    s.end,
                    s.cost,
                    s.residual,
                    s.iterations,
                    if s.converged { "" } else { " (not converged)" }
                );
            }
        }
        Command::Warp { dataset, render } => {
            let r = cmd_warp(&load_config(cli, Some(dataset))?, dataset, render)?;
            println!("rendered {} frames", r.frames);
            for f in &r.failed_frames {
                eprintln!("warning: frame {f} could not be warped");
            }
        }
        Command::Metrics { dataset, stabilized } => {
            let r = cmd_metrics(&load_config(cli, Some(dataset))?, dataset, stabilized)?;
            println!(
                "cropping {:.4}  distortion {:.4}  stability {:.4}{}",
                r.cropping,
                r.distortion,
                r.stability,
                if r.failed { "  FAILED" } else { "" }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
