use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ftseg", version, about = "Unsupervised CT infection segmentation with Fourier style transfer")]
pub struct Cli {
    /// JSON config for the subcommand (phantom, ingest or training settings).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides seeds found in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain dataset.
    Phantom,

    /// Convert raw CT volumes into graymap slices and a manifest.
    Ingest {
        /// Directory of labeled source volumes (each with a `.mask.json` volume).
        #[arg(long)]
        source: PathBuf,
        /// Directory of target volumes.
        #[arg(long)]
        target: PathBuf,
    },

    /// Style-transfer one image onto another, or apply an elastic warp.
    Augment {
        #[arg(long)]
        source: PathBuf,
        /// Style image; required unless `--elastic` is given.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0.005)]
        alpha: f64,
        /// Output image (`.pgm` or `.png`).
        #[arg(long)]
        output: PathBuf,
        /// Warp the source instead: SEED SIGMA MAGNITUDE.
        #[arg(long, num_args = 3, value_names = ["SEED", "SIGMA", "MAGNITUDE"])]
        elastic: Option<Vec<String>>,
    },

    /// Train student and teacher networks.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// One of full, source-only, no-cgftda, no-con, no-ent.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write checkpoints every N steps under `checkpoints/`.
        #[arg(long, default_value_t = 0)]
        save_every: u64,
    },

    /// Evaluate a student checkpoint on the target test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Score ground truth against itself (pipeline check).
        #[arg(long)]
        gt_as_pred: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Ingest { .. } => "ingest",
            Command::Augment { .. } => "augment",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
        }
    }
}
