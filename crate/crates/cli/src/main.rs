use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ditctrl_cli::{
    cmd_ablate, cmd_dump_attention, cmd_edit, cmd_eval_cscv, cmd_generate, parse_toggles,
    CmdResult, EditMode, Failure, RunConfig, TrajectorySource,
};
use ditctrl_core::metrics::{TrajectoryKind, DEFAULT_LAMBDA};
use ditctrl_core::pipeline::Toggles;

#[derive(Parser)]
#[command(
    name = "ditctrl",
    version,
    about = "Multi-prompt video latent generation with attention control on a toy MM-DiT"
)]
struct Cli {
    /// Worker threads for tensor kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Swap,
    Reweight,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Smooth,
    TwoCluster,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-prompt generation with KV-sharing and latent blending.
    Generate(RunArgs),
    /// Word-swap or token-reweight editing of a single segment.
    Edit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Text token index to reweight.
        #[arg(long)]
        token: Option<usize>,
        /// Reweight factor.
        #[arg(long)]
        factor: Option<f64>,
    },
    /// Run one ablation configuration.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// `none`, `all`, or a comma list of `kv`, `mask`, `blend`.
        #[arg(long, value_parser = parse_toggles)]
        toggles: Toggles,
    },
    /// Score a per-frame embedding trajectory.
    EvalCscv {
        /// CSV with header `frame,v0,...`.
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        embeddings: Option<PathBuf>,
        /// Use a seeded synthetic trajectory instead.
        #[arg(long, value_enum)]
        synthetic: Option<Synthetic>,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Also write the normalized trajectory as CSV.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Dump attention matrices, diagnostics, semantic maps and masks.
    DumpAttention {
        #[command(flatten)]
        run: RunArgs,
        /// Sampler step whose noise level is used.
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
}

fn run(command: Command) -> CmdResult<()> {
    match command {
        Command::Generate(a) => {
            let cfg = RunConfig::resolve(a.config.as_deref())?;
            cmd_generate(&cfg, &a.out)?;
        }
        Command::Edit {
            run,
            mode,
            token,
            factor,
        } => {
            let cfg = RunConfig::resolve(run.config.as_deref())?;
            let mode = match mode {
                Mode::Swap => EditMode::Swap,
                Mode::Reweight => EditMode::Reweight {
                    token: token.ok_or_else(|| Failure::usage("--mode reweight needs --token"))?,
                    factor: factor
                        .ok_or_else(|| Failure::usage("--mode reweight needs --factor"))?,
                },
            };
            cmd_edit(&cfg, mode, &run.out)?;
        }
        Command::Ablate { run, toggles } => {
            let cfg = RunConfig::resolve(run.config.as_deref())?;
            cmd_ablate(&cfg, toggles, &run.out)?;
        }
        Command::EvalCscv {
            embeddings,
            synthetic,
            frames,
            seed,
            lambda,
            export,
        } => {
            let source = match (&embeddings, synthetic) {
                (Some(path), _) => TrajectorySource::Csv(path),
                (None, Some(kind)) => TrajectorySource::Synthetic {
                    kind: match kind {
                        Synthetic::Smooth => TrajectoryKind::Smooth,
                        Synthetic::TwoCluster => TrajectoryKind::TwoCluster,
                    },
                    frames,
                    seed,
                },
                (None, None) => return Err(Failure::usage("need --embeddings or --synthetic")),
            };
            let score = cmd_eval_cscv(source, lambda, export.as_deref())?;
            println!("{score:.6}");
        }
        Command::DumpAttention { run, step } => {
            let cfg = RunConfig::resolve(run.config.as_deref())?;
            cmd_dump_attention(&cfg, step, &run.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Failure::usage(format!("cannot start {n} threads: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
