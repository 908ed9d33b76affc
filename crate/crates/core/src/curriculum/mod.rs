//! Pretraining stages and path-selection fine-tuning.
//!
//! Stage 1 trains on text only, stage 2 on single web panoramas with
//! captions, stage 3 on ground-truth paths with their instructions, and
//! fine-tuning ranks one successful path against three unsuccessful ones.
//! Each stage starts from the parameters the previous one produced.

mod ablation;
mod corpus;
mod masking;
mod objectives;
mod optim;
mod trainer;

pub use ablation::{
    median_by_row, run_ablation, run_ablation_with, write_ablation_csv, AblationConfig, AblationResult, CurriculumRow,
};
pub use corpus::{
    caption_examples, finetune_quads, path_sequence, stage1_corpus, stage2_corpus, stage3_corpus, text_pairs,
    CaptionExample, PathExample, TextPair,
};
pub use masking::{MaskSpec, MaskingPlan, MASK_RATE};
pub use objectives::{
    encode_masked, finetune_step, score_paths, score_row, stage1_step, stage2_step, stage3_step, LossParts, StageLoss,
};
pub use optim::{Adam, LrSchedule};
pub use trainer::{
    candidate_scores, run_curriculum, run_stage, selection_sr, write_log_csv, CurriculumRun, LogRow, StageReport,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    Language,
    #[serde(rename = "2")]
    Visual,
    #[serde(rename = "3")]
    Action,
    #[serde(rename = "ft")]
    Finetune,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Language => "1",
            Stage::Visual => "2",
            Stage::Action => "3",
            Stage::Finetune => "ft",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Stage::Language => 1,
            Stage::Visual => 2,
            Stage::Action => 3,
            Stage::Finetune => 4,
        }
    }

    /// Masked streams for the stage's objectives.
    pub fn mask_spec(self, rate: f64) -> MaskSpec {
        match self {
            Stage::Language => MaskSpec {
                rate,
                text: true,
                regions: false,
            },
            Stage::Visual | Stage::Action => MaskSpec {
                rate,
                text: true,
                regions: true,
            },
            Stage::Finetune => MaskSpec::none(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::Language),
            "2" => Ok(Stage::Visual),
            "3" => Ok(Stage::Action),
            "ft" | "FT" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub mask_rate: f64,
    /// Fine-tuning only: epochs without a validation gain before stopping.
    pub patience: usize,
}

impl StageSpec {
    pub fn new(stage: Stage) -> Self {
        let (epochs, batch_size) = match stage {
            Stage::Language => (8, 8),
            Stage::Visual => (100, 8),
            Stage::Action => (10, 4),
            Stage::Finetune => (6, 2),
        };
        Self {
            stage,
            epochs,
            batch_size,
            lr: 1e-3,
            warmup_frac: 0.1,
            mask_rate: MASK_RATE,
            patience: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "stage {}: epochs and batch size must be positive",
                self.stage
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "stage {}: bad learning-rate schedule",
                self.stage
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!("stage {}: mask rate outside [0, 1]", self.stage)));
        }
        Ok(())
    }
}
