use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowlm::cli::{
    cmd_eval, cmd_inspect, cmd_sample, cmd_sweep, cmd_train, exit_code_for, EvalOpts, InspectOpts,
    SampleOpts, SweepOpts, TrainOpts,
};

#[derive(Parser)]
#[command(name = "flowlm", about = "Flow-matching language model on synthetic corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints + metrics CSV.
    Train {
        /// Config file (key=value lines); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Config overrides, e.g. --set train.steps=100 (repeatable).
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = false)]
        quiet: bool,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Self-conditioning CFG scale ω.
        #[arg(long)]
        cfg: Option<f64>,
        /// Condition CFG scale for conditional models.
        #[arg(long = "cond-cfg")]
        cond_cfg: Option<f64>,
        /// Grid kind: logit_normal | uniform.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score sample dumps against the corpus oracle.
    Eval {
        /// Dump directories (containing samples.txt + samples.json).
        #[arg(long = "dump", required = true)]
        dumps: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one axis across values and seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Axis: omega | steps | gamma | schedule | bottleneck | mode_prob | pred_target.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds (default 0,1,2).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Checkpoints, one per seed (sampling axes only).
        #[arg(long = "ckpt")]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Print checkpoint metadata.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            overrides,
            quiet,
        } => cmd_train(&TrainOpts {
            config,
            out,
            overrides,
            quiet,
        }),
        Command::Sample {
            ckpt,
            out,
            steps,
            gamma,
            cfg,
            cond_cfg,
            schedule,
            seed,
            n,
        } => cmd_sample(&SampleOpts {
            ckpt,
            out,
            steps,
            gamma,
            cfg,
            cond_cfg,
            schedule,
            seed,
            n,
        }),
        Command::Eval { dumps, out } => cmd_eval(&EvalOpts { dumps, out }),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            ckpts,
            out,
            overrides,
        } => cmd_sweep(&SweepOpts {
            config,
            axis,
            values,
            seeds,
            ckpts,
            out,
            overrides,
        }),
        Command::Inspect { ckpt } => cmd_inspect(&InspectOpts { ckpt }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
