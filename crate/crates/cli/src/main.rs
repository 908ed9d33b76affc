mod artifacts;
mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use pathrank::envgraph::Split;
use std::path::PathBuf;
use std::process::ExitCode;

/// Train and evaluate a path-instruction compatibility model on synthetic
/// navigation environments.
///
/// Artifacts are written under the output directory. Each one records the hash
/// of the config that produced it, and later stages refuse inputs whose hash
/// differs from the current config. Failures print one JSON line
/// `{"error": KIND, "message": TEXT}` to stderr. Exit codes: 1 internal,
/// 2 usage or config, 3 missing input, 4 hash mismatch, 5 training diverged.
#[derive(Debug, Parser)]
#[command(name = "pathrank", version)]
struct Cli {
    /// JSON run config. Keys it omits keep their defaults (see `show-config`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config entry by dotted path, e.g. `training.finetune.epochs=4`.
    /// The value is parsed as JSON, falling back to a plain string. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Experiment seed. Takes precedence over the config's `seed`.
    #[arg(long, global = true, env = "PATHRANK_SEED")]
    seed: Option<u64>,

    /// Artifact root directory. Overrides `paths.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for episode-parallel work. Defaults to one per core.
    /// Results do not depend on this value.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    ValSeen,
    ValUnseen,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::ValSeen => Split::ValSeen,
            SplitArg::ValUnseen => Split::ValUnseen,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate navigation graphs and the region-feature cache.
    GenEnv,
    /// Generate train, val-seen and val-unseen episodes.
    GenEpisodes,
    /// Mine follower candidate paths for every episode.
    Mine,
    /// Run one pretraining stage and save a checkpoint.
    Pretrain {
        /// 1: language, 2: image-caption, 3: path-instruction.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Starting checkpoint name or path, or `scratch`.
        /// Defaults to scratch for stage 1 and the previous stage otherwise.
        #[arg(long, value_name = "CKPT")]
        init: Option<String>,
        /// Output checkpoint name. Defaults to `stage<N>`.
        #[arg(long)]
        name: Option<String>,
        /// Override the stage's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune path selection on mined candidates, keeping the best val-unseen epoch.
    Finetune {
        /// Starting checkpoint name or path, or `scratch`. Defaults to `stage3`.
        #[arg(long, value_name = "CKPT")]
        init: Option<String>,
        /// Output checkpoint name.
        #[arg(long, default_value = "finetune")]
        name: String,
        /// Override the fine-tuning epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score candidates, select a path per episode and write navigation metrics.
    Evaluate {
        #[arg(long, value_name = "CKPT", default_value = "finetune")]
        checkpoint: String,
        #[arg(long, value_enum, default_value = "val-unseen")]
        split: SplitArg,
        /// Charge the exploration of every candidate to the path length.
        #[arg(long)]
        leaderboard_mode: bool,
    },
    /// Grid-search weights combining compatibility and follower scores on val-unseen.
    Ensemble {
        #[arg(long, value_name = "CKPT", default_value = "finetune")]
        checkpoint: String,
        /// Simplex grid step. Defaults to `ensemble_grid_step`.
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Region importance and goal-phrase deletion study on val-unseen episodes.
    Analyze {
        #[arg(long, value_name = "CKPT", default_value = "finetune")]
        checkpoint: String,
        /// Checkpoint trained without stage 2, for the held-out grounding comparison.
        #[arg(long, value_name = "CKPT")]
        baseline: Option<String>,
        /// Episodes to analyze. Defaults to `analysis_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train every curriculum row for every seed and write the val-unseen SR table.
    AblateCurriculum {
        /// Comma-separated training seeds. Defaults to `ablation_seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Print the resolved config and its hashes.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            if matches!(
                e.kind(),
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return commands::fail("usage", first, 2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => commands::report(&e),
    }
}
