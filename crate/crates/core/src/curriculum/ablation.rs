use super::trainer::{run_stage, LogRow};
use super::{Stage, StageSpec};
use crate::envgraph::Split;
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::seeds::derive;
use crate::world::World;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Pretraining stages run before fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CurriculumRow {
    Scratch,
    S1,
    S1S2,
    S1S3,
    Full,
}

impl CurriculumRow {
    pub const ALL: [CurriculumRow; 5] = [Self::Scratch, Self::S1, Self::S1S2, Self::S1S3, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::Scratch => "ft",
            Self::S1 => "1+ft",
            Self::S1S2 => "1+2+ft",
            Self::S1S3 => "1+3+ft",
            Self::Full => "1+2+3+ft",
        }
    }

    pub fn stages(self) -> Vec<Stage> {
        use Stage::*;
        match self {
            Self::Scratch => vec![Finetune],
            Self::S1 => vec![Language, Finetune],
            Self::S1S2 => vec![Language, Visual, Finetune],
            Self::S1S3 => vec![Language, Action, Finetune],
            Self::Full => vec![Language, Visual, Action, Finetune],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub stage1: StageSpec,
    pub stage2: StageSpec,
    pub stage3: StageSpec,
    pub finetune: StageSpec,
}

impl AblationConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            stage1: StageSpec::new(Stage::Language),
            stage2: StageSpec::new(Stage::Visual),
            stage3: StageSpec::new(Stage::Action),
            finetune: StageSpec::new(Stage::Finetune),
        }
    }

    pub fn spec(&self, stage: Stage) -> &StageSpec {
        match stage {
            Stage::Language => &self.stage1,
            Stage::Visual => &self.stage2,
            Stage::Action => &self.stage3,
            Stage::Finetune => &self.finetune,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: CurriculumRow,
    pub seed: u64,
    /// Val-unseen path-selection SR in [0, 1].
    pub val_unseen_sr: f64,
}

/// Trains every row for every seed. Shared prefixes (stage 1, then stage 2)
/// are trained once per seed and branched.
pub fn run_ablation(world: &World, cfg: &AblationConfig, seeds: &[u64]) -> Result<Vec<AblationResult>> {
    run_ablation_with(world, cfg, seeds, |_, _, _| {})
}

/// As [`run_ablation`], handing each fine-tuned model to `keep`.
pub fn run_ablation_with(
    world: &World,
    cfg: &AblationConfig,
    seeds: &[u64],
    mut keep: impl FnMut(u64, CurriculumRow, &Model<f32>),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let mut log: Vec<LogRow> = Vec::new();
        let mut finish = |mut m: Model<f32>, row: CurriculumRow, log: &mut Vec<LogRow>| -> Result<()> {
            run_stage(&mut m, world, &cfg.finetune, seed, log)?;
            let sr = super::selection_sr(&m, world, Split::ValUnseen)?;
            keep(seed, row, &m);
            out.push(AblationResult {
                row,
                seed,
                val_unseen_sr: sr,
            });
            Ok(())
        };
        let init = Model::<f32>::new(cfg.model.clone(), derive(seed, &[0x1417]))?;
        finish(init.clone(), CurriculumRow::Scratch, &mut log)?;

        let mut s1 = init;
        run_stage(&mut s1, world, &cfg.stage1, seed, &mut log)?;
        finish(s1.clone(), CurriculumRow::S1, &mut log)?;

        let mut s12 = s1.clone();
        run_stage(&mut s12, world, &cfg.stage2, seed, &mut log)?;
        finish(s12.clone(), CurriculumRow::S1S2, &mut log)?;

        let mut s13 = s1;
        run_stage(&mut s13, world, &cfg.stage3, seed, &mut log)?;
        finish(s13, CurriculumRow::S1S3, &mut log)?;

        let mut full = s12;
        run_stage(&mut full, world, &cfg.stage3, seed, &mut log)?;
        finish(full, CurriculumRow::Full, &mut log)?;
    }
    Ok(out)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median SR per row over seeds, in table order.
pub fn median_by_row(results: &[AblationResult]) -> Vec<(CurriculumRow, f64)> {
    CurriculumRow::ALL
        .iter()
        .filter_map(|&row| {
            let xs: Vec<f64> = results
                .iter()
                .filter(|r| r.row == row)
                .map(|r| r.val_unseen_sr)
                .collect();
            (!xs.is_empty()).then(|| (row, median(xs)))
        })
        .collect()
}

/// One row per curriculum: stage flags, per-seed SR and the median (×100).
pub fn write_ablation_csv<W: Write>(mut w: W, results: &[AblationResult], config_hash: Option<&str>) -> Result<()> {
    if let Some(h) = config_hash {
        writeln!(w, "# config_hash={h}")?;
    }
    let mut seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    write!(w, "row,stage1,stage2,stage3,curriculum")?;
    for s in &seeds {
        write!(w, ",sr_seed{s}")?;
    }
    writeln!(w, ",sr_median")?;
    for (row, med) in median_by_row(results) {
        let st = row.stages();
        let flag = |s: Stage| u8::from(st.contains(&s));
        write!(
            w,
            "{},{},{},{},{}",
            CurriculumRow::ALL.iter().position(|&r| r == row).unwrap_or(0) + 1,
            flag(Stage::Language),
            flag(Stage::Visual),
            flag(Stage::Action),
            row.label()
        )?;
        for s in &seeds {
            match results.iter().find(|r| r.row == row && r.seed == *s) {
                Some(r) => write!(w, ",{:.2}", r.val_unseen_sr * 100.0)?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w, ",{:.2}", med * 100.0)?;
    }
    Ok(())
}
