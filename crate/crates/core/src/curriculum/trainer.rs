use super::corpus::{finetune_quads, path_sequence, stage1_corpus, stage2_corpus, stage3_corpus};
use super::masking::MaskingPlan;
use super::objectives::{finetune_step, score_paths, stage1_step, stage2_step, stage3_step, LossParts, StageLoss};
use super::optim::{Adam, LrSchedule};
use super::{Stage, StageSpec};
use crate::autodiff::{Array, ParamStore, Tape};
use crate::envgraph::{EpisodeSpec, Split};
use crate::error::{Error, Result};
use crate::evalmetrics::select_path;
use crate::featurize::MultimodalSequence;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::seeds::derive;
use crate::world::World;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

/// One optimizer step: batch-mean loss components and the learning rate used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: Stage,
    pub parts: LossParts,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub spec: StageSpec,
    pub steps: usize,
    pub examples: usize,
    /// Mean loss over the first and last epoch.
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    /// Fine-tuning: validation SR after each epoch.
    pub val_history: Vec<f64>,
    pub best_val_sr: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct CurriculumRun {
    pub reports: Vec<StageReport>,
    pub log: Vec<LogRow>,
}

pub fn write_log_csv<W: Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "step,stage,total,mlm,nsp,region,align,select,lr")?;
    for r in rows {
        let p = &r.parts;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            r.step,
            r.stage,
            p.total(),
            p.mlm,
            p.nsp,
            p.region,
            p.align,
            p.select,
            r.lr
        )?;
    }
    Ok(())
}

/// A training example of any stage, ready to be turned into a sequence.
enum Example {
    Text {
        id: String,
        seq: MultimodalSequence,
        is_next: bool,
    },
    Caption {
        id: String,
        seq: MultimodalSequence,
        matched: bool,
    },
    Path {
        id: String,
        seq: MultimodalSequence,
    },
    Quad {
        seqs: Vec<MultimodalSequence>,
    },
}

fn examples(world: &World, stage: Stage, seed: u64) -> Result<Vec<Example>> {
    match stage {
        Stage::Language => stage1_corpus(world, seed)?
            .into_iter()
            .map(|p| {
                Ok(Example::Text {
                    seq: p.sequence(world)?,
                    id: p.id,
                    is_next: p.is_next,
                })
            })
            .collect(),
        Stage::Visual => stage2_corpus(world, seed)?
            .into_iter()
            .map(|c| {
                Ok(Example::Caption {
                    seq: c.sequence(world)?,
                    id: c.id,
                    matched: c.matched,
                })
            })
            .collect(),
        Stage::Action => stage3_corpus(world)
            .into_iter()
            .map(|p| {
                Ok(Example::Path {
                    seq: p.sequence(world)?,
                    id: p.id,
                })
            })
            .collect(),
        Stage::Finetune => quad_examples(world, seed),
    }
}

fn quad_examples(world: &World, seed: u64) -> Result<Vec<Example>> {
    let by_id: HashMap<&str, &EpisodeSpec> = world
        .episodes(Split::Train)
        .iter()
        .map(|e| (e.episode_id.as_str(), e))
        .collect();
    finetune_quads(world, seed)
        .into_iter()
        .map(|q| {
            let ep = by_id.get(q.episode_id.as_str()).ok_or_else(|| Error::Invalid {
                op: "fine-tuning quads",
                msg: format!("unknown episode {}", q.episode_id),
            })?;
            let seqs = q
                .paths
                .iter()
                .map(|p| path_sequence(world, ep.graph_id, p, &ep.instruction.tokens))
                .collect::<Result<Vec<_>>>()?;
            Ok(Example::Quad { seqs })
        })
        .collect()
}

fn example_loss<T: Scalar>(
    model: &Model<T>,
    world: &World,
    tape: &mut Tape<T>,
    ex: &Example,
    spec: &StageSpec,
    mask_seed: u64,
) -> Result<StageLoss> {
    let mask = spec.stage.mask_spec(spec.mask_rate);
    let vocab = &world.bench.vocab;
    match ex {
        Example::Text { id, seq, is_next } => {
            let plan = MaskingPlan::sample(seq, vocab, mask, mask_seed, id);
            stage1_step(model, tape, seq, &plan, *is_next)
        }
        Example::Caption { id, seq, matched } => {
            let plan = MaskingPlan::sample(seq, vocab, mask, mask_seed, id);
            stage2_step(model, tape, seq, &plan, *matched)
        }
        Example::Path { id, seq } => {
            let plan = MaskingPlan::sample(seq, vocab, mask, mask_seed, id);
            stage3_step(model, tape, seq, &plan)
        }
        Example::Quad { seqs } => Ok(finetune_step(model, tape, seqs, 0)?.0),
    }
}

fn example_grads<T: Scalar>(
    model: &Model<T>,
    world: &World,
    ex: &Example,
    spec: &StageSpec,
    mask_seed: u64,
) -> Result<Option<(Vec<Array<T>>, LossParts)>> {
    let mut tape = Tape::new();
    let loss = example_loss(model, world, &mut tape, ex, spec, mask_seed)?;
    match loss.var {
        None => Ok(None),
        Some(v) => {
            let grads = tape.backward(v)?;
            Ok(Some((grads.for_store(&model.params), loss.parts)))
        }
    }
}

fn diverged(stage: Stage, step: usize, loss: f64) -> Error {
    Error::Diverged {
        stage: stage.label().to_string(),
        step,
        loss,
    }
}

/// Trains `model` in place for one stage and appends one log row per step.
/// Fine-tuning keeps the parameters of the epoch with the best val-unseen SR.
pub fn run_stage<T: Scalar>(
    model: &mut Model<T>,
    world: &World,
    spec: &StageSpec,
    seed: u64,
    log: &mut Vec<LogRow>,
) -> Result<StageReport> {
    spec.validate()?;
    let stage = spec.stage;
    let stage_seed = derive(seed, &[stage.tag()]);
    let data = if stage == Stage::Finetune {
        Vec::new()
    } else {
        examples(world, stage, stage_seed)?
    };
    let per_epoch = if stage == Stage::Finetune {
        world
            .candidates(Split::Train)
            .iter()
            .filter(|s| crate::mining::sample_quad(s, 0).is_ok())
            .count()
    } else {
        data.len()
    };
    if per_epoch == 0 {
        return Err(Error::Empty("stage corpus"));
    }
    let batches = per_epoch.div_ceil(spec.batch_size);
    let schedule = LrSchedule::new(spec.lr, batches * spec.epochs, spec.warmup_frac);
    let mut adam = Adam::new(&model.params);
    let mut step = 0;
    let mut report = StageReport {
        spec: spec.clone(),
        steps: 0,
        examples: 0,
        first_epoch_loss: f64::NAN,
        last_epoch_loss: f64::NAN,
        val_history: Vec::new(),
        best_val_sr: None,
        best_epoch: None,
    };
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut since_best = 0;

    for epoch in 0..spec.epochs {
        let epoch_seed = derive(stage_seed, &[epoch as u64]);
        let owned;
        // Fine-tuning negatives and stage-2 captions are redrawn every epoch.
        let data = match stage {
            Stage::Finetune => {
                owned = quad_examples(world, epoch_seed)?;
                &owned
            }
            Stage::Visual if epoch > 0 => {
                owned = examples(world, stage, epoch_seed)?;
                &owned
            }
            _ => &data,
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let lr = schedule.at(step);
            let results: Vec<Result<Option<(Vec<Array<T>>, LossParts)>>> = chunk
                .par_iter()
                .map(|&i| example_grads(model, world, &data[i], spec, epoch_seed))
                .collect();
            let mut sum: Option<Vec<Array<T>>> = None;
            let mut parts = LossParts::default();
            for r in results {
                let r = r.map_err(|e| match e {
                    Error::NonFinite { .. } => diverged(stage, step, f64::NAN),
                    other => other,
                })?;
                let Some((g, p)) = r else { continue };
                parts += p;
                match &mut sum {
                    None => sum = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b);
                        }
                    }
                }
            }
            let parts = parts.scaled(1.0 / chunk.len() as f64);
            if !parts.total().is_finite() {
                return Err(diverged(stage, step, parts.total()));
            }
            if let Some(mut g) = sum {
                let inv = T::from_f64c(1.0 / chunk.len() as f64);
                for a in &mut g {
                    a.scale_in_place(inv);
                }
                adam.step(&mut model.params, &g, lr);
            }
            epoch_loss += parts.total() * chunk.len() as f64;
            log.push(LogRow { step, stage, parts, lr });
            step += 1;
            report.examples += chunk.len();
        }
        let mean = epoch_loss / data.len() as f64;
        if epoch == 0 {
            report.first_epoch_loss = mean;
        }
        report.last_epoch_loss = mean;

        if stage == Stage::Finetune {
            let sr = selection_sr(model, world, Split::ValUnseen)?;
            report.val_history.push(sr);
            if best.as_ref().is_none_or(|(b, _)| sr > *b) {
                best = Some((sr, model.params.clone()));
                report.best_val_sr = Some(sr);
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= spec.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    report.steps = step;
    Ok(report)
}

/// Runs the stages in order, each continuing from the previous parameters.
pub fn run_curriculum<T: Scalar>(
    model: &mut Model<T>,
    world: &World,
    stages: &[StageSpec],
    seed: u64,
) -> Result<CurriculumRun> {
    let mut run = CurriculumRun::default();
    for spec in stages {
        let r = run_stage(model, world, spec, seed, &mut run.log)?;
        run.reports.push(r);
    }
    Ok(run)
}

/// Compatibility scores for every candidate set of `split`, in episode order.
pub fn candidate_scores<T: Scalar>(model: &Model<T>, world: &World, split: Split) -> Result<Vec<Vec<f64>>> {
    let eps = world.episodes(split);
    let sets = world.candidates(split);
    if eps.len() != sets.len() {
        return Err(Error::Invalid {
            op: "candidate_scores",
            msg: format!("{} episodes but {} candidate sets", eps.len(), sets.len()),
        });
    }
    eps.par_iter()
        .zip(sets)
        .map(|(ep, set)| {
            if ep.episode_id != set.episode_id {
                return Err(Error::Invalid {
                    op: "candidate_scores",
                    msg: format!("candidate set {} paired with episode {}", set.episode_id, ep.episode_id),
                });
            }
            let seqs = set
                .paths
                .iter()
                .map(|c| path_sequence(world, ep.graph_id, &c.nodes, &ep.instruction.tokens))
                .collect::<Result<Vec<_>>>()?;
            score_paths(model, &seqs)
        })
        .collect()
}

/// Fraction of episodes whose highest-scoring candidate succeeds.
pub fn selection_sr<T: Scalar>(model: &Model<T>, world: &World, split: Split) -> Result<f64> {
    let scores = candidate_scores(model, world, split)?;
    let sets = world.candidates(split);
    let hits = scores
        .iter()
        .zip(sets)
        .filter(|(s, set)| select_path(s).is_some_and(|i| set.paths[i].success))
        .count();
    Ok(hits as f64 / sets.len().max(1) as f64)
}
