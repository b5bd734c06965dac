//! `ktrace` — reproducible knowledge-tracing runs from the command line.
//!
//! Subcommands: `ingest` (CSV → canonical dataset), `synth` (seeded
//! generator), `transform-spread` (interleave per-skill runs), `train`,
//! `eval` (k-fold comparison tables), and `probe` (model inspection:
//! tsne, deltas, oracle, streak, memory, gradcheck).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

use config::{CliError, Overrides};

#[derive(Parser)]
#[command(
    name = "ktrace",
    version,
    about = "Knowledge-tracing training, evaluation, and model probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw interaction CSV into the canonical dataset layout.
    Ingest {
        /// Input CSV file.
        input: PathBuf,
        /// CSV layout: assistments or ednet_kt1.
        #[arg(long)]
        format: String,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic dataset with per-skill learning curves.
    Synth {
        #[arg(long, default_value_t = 2000)]
        students: usize,
        #[arg(long, default_value_t = 50)]
        skills: usize,
        /// Minimum interactions per student.
        #[arg(long, default_value_t = 12)]
        min_len: usize,
        /// Maximum interactions per student.
        #[arg(long, default_value_t = 28)]
        max_len: usize,
        /// Within-student skill presentation: blocked or random.
        #[arg(long, default_value = "blocked")]
        skill_order: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite a dataset with each student's per-skill runs interleaved.
    TransformSpread {
        /// Canonical dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write checkpoint, loss log, and manifest.
    Train {
        /// JSON run config; any field can be overridden by flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// K-fold cross-validated metrics for one model on one dataset.
    Eval {
        /// JSON run config; any field can be overridden by flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Inspect a trained model (or check gradients).
    Probe {
        #[command(subcommand)]
        kind: ProbeKind,
    },
}

/// Flag mirrors of the run-config fields.
#[derive(Args)]
struct OverrideArgs {
    /// Model: dkt, dkt_frozen, dkvmn, bkt, or pfa.
    #[arg(long)]
    model: Option<String>,
    /// Dataset path (canonical directory or CSV file).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset format: canonical, assistments, or ednet_kt1.
    #[arg(long)]
    format: Option<String>,
    /// Interaction ordering: original or spread.
    #[arg(long)]
    ordering: Option<String>,
    /// LSTM hidden size H.
    #[arg(long)]
    hidden: Option<usize>,
    /// Memory slot count M.
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    d_k: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    d_f: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Chunk training sequences longer than this.
    #[arg(long)]
    max_len: Option<usize>,
    /// Cross-validation folds k.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            model: self.model,
            dataset: self.dataset,
            format: self.format,
            ordering: self.ordering,
            hidden: self.hidden,
            slots: self.slots,
            d_k: self.d_k,
            d_v: self.d_v,
            d_f: self.d_f,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_len: self.max_len,
            folds: self.folds,
            seed: self.seed,
            out: self.out,
        }
    }
}

#[derive(Subcommand)]
enum ProbeKind {
    /// Embed every first-step activation in 2-D and plot it.
    Tsne {
        /// Trained DKT checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Embedding-initialization seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-step prediction-vector changes over one student's history.
    Deltas {
        /// Trained DKT checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Canonical dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Student id (default: first sequence in the dataset).
        #[arg(long)]
        student: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feed constant responses and log how activations settle.
    Oracle {
        /// Trained DKT checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated skill ids.
        #[arg(long, default_value = "7,8,24")]
        skills: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Response stream: correct or incorrect.
        #[arg(long, default_value = "correct")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction vector after a run of correct answers on one skill.
    Streak {
        /// Trained DKT checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated skill ids.
        #[arg(long, default_value = "7,8,24")]
        skills: String,
        #[arg(long, default_value_t = 20)]
        streak: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention and value-memory writes of a key-value memory model.
    Memory {
        /// Trained DKVMN checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated skill ids.
        #[arg(long, default_value = "7,8,24")]
        skills: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences at desk scale.
    Gradcheck {
        /// Which model to check: dkt or dkvmn (default: both).
        #[arg(long)]
        model: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { input, format, out } => commands::cmd_ingest(&input, &format, &out),
        Command::Synth {
            students,
            skills,
            min_len,
            max_len,
            skill_order,
            seed,
            out,
        } => commands::cmd_synth(students, skills, min_len, max_len, &skill_order, seed, &out),
        Command::TransformSpread { data, out } => commands::cmd_transform_spread(&data, &out),
        Command::Train { config, overrides } => {
            commands::cmd_train(config.as_deref(), &overrides.into_overrides())
        }
        Command::Eval { config, overrides } => {
            commands::cmd_eval(config.as_deref(), &overrides.into_overrides())
        }
        Command::Probe { kind } => match kind {
            ProbeKind::Tsne {
                checkpoint,
                out,
                perplexity,
                iters,
                seed,
            } => commands::cmd_probe_tsne(&checkpoint, &out, perplexity, iters, seed),
            ProbeKind::Deltas {
                checkpoint,
                data,
                student,
                out,
            } => commands::cmd_probe_deltas(&checkpoint, &data, student.as_deref(), &out),
            ProbeKind::Oracle {
                checkpoint,
                skills,
                steps,
                direction,
                out,
            } => commands::cmd_probe_oracle(&checkpoint, &skills, steps, &direction, &out),
            ProbeKind::Streak {
                checkpoint,
                skills,
                streak,
                out,
            } => commands::cmd_probe_streak(&checkpoint, &skills, streak, &out),
            ProbeKind::Memory {
                checkpoint,
                skills,
                out,
            } => commands::cmd_probe_memory(&checkpoint, &skills, &out),
            ProbeKind::Gradcheck { model } => commands::cmd_probe_gradcheck(model.as_deref()),
        },
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is misuse.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}
