//! `ard`: generate teacher trajectories, distil students and analyse them.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use ard_core::ArdError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ard", version, about = "Autoregressive distillation lab")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Experiment configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0: all cores, 1: sequential).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Grid size `S`.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
}

/// Student overrides shared by the commands that build a model.
#[derive(Args, Debug, Clone, Default)]
pub struct StudentFlags {
    #[arg(long)]
    pub mask: Option<String>,
    /// Number of lower layers that see history.
    #[arg(long = "n-history", visible_alias = "n")]
    pub n_history: Option<usize>,
    /// Prediction target: `next` or `x0`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
}

/// A trained run directory and the checkpoint inside it.
#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    /// Directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Use the raw weights instead of the EMA.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve and store teacher trajectories.
    Gen {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        count: usize,
        /// Guidance scale.
        #[arg(long = "cfg")]
        cfg_scale: Option<f64>,
        #[arg(long = "fine-steps")]
        fine_steps: Option<usize>,
    },
    /// Distil a student from a trajectory dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        student: StudentFlags,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Cosine decay of the learning rate to zero.
        #[arg(long)]
        cosine: bool,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
        #[arg(long = "ema-decay")]
        ema_decay: Option<f64>,
        /// Add the hinge discriminator term.
        #[arg(long)]
        disc: bool,
        #[arg(long = "checkpoint-every")]
        checkpoint_every: Option<usize>,
    },
    /// Autoregressive sampling from noise.
    Sample {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        class: Option<usize>,
        /// Also write one PGM image per sample.
        #[arg(long)]
        images: bool,
    },
    /// Endpoint MSE and MMD² on held-out trajectories.
    Eval {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate on the first `limit` trajectories.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Attention shares per input step.
    Attn {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        limit: usize,
    },
    /// FLOPs accounting.
    Flops {
        /// Named architecture; defaults to the configured student.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        mask: Option<String>,
        #[arg(long = "n-history", visible_alias = "n")]
        n_history: Option<usize>,
        /// `student`, `teacher-with-cfg` or `kd`.
        #[arg(long, default_value = "student")]
        mode: String,
    },
    /// Error curves with teacher-solved prefixes `k = 0..S-1`.
    Exposure {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Inject a dataset state into the sampling chain.
    Manipulate {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        /// Record whose state is injected.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long = "s-inject")]
        s_inject: usize,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        class: Option<usize>,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Refused(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Refused(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl From<ArdError> for Failure {
    fn from(e: ArdError) -> Self {
        match e {
            ArdError::NonFinite { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ARD_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("error", m),
                Failure::Refused(m) => ("refused", m),
                Failure::Numeric(m) => ("numeric failure", m),
            };
            eprintln!("ard: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
