//! Per-example losses of each stage, recorded on a tape.

use super::masking::MaskingPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::featurize::MultimodalSequence;
use crate::model::{Encoded, Model};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::ops::AddAssign;

/// Loss components of one example (or a batch mean).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mlm: f64,
    pub nsp: f64,
    pub region: f64,
    pub align: f64,
    pub select: f64,
}

impl LossParts {
    /// Equal-weight sum of the components.
    pub fn total(&self) -> f64 {
        self.mlm + self.nsp + self.region + self.align + self.select
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            mlm: self.mlm * c,
            nsp: self.nsp * c,
            region: self.region * c,
            align: self.align * c,
            select: self.select * c,
        }
    }
}

impl AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.mlm += o.mlm;
        self.nsp += o.nsp;
        self.region += o.region;
        self.align += o.align;
        self.select += o.select;
    }
}

/// Loss node of one example; `var` is `None` when no term is active.
#[derive(Clone, Copy, Debug)]
pub struct StageLoss {
    pub var: Option<Var>,
    pub parts: LossParts,
}

#[derive(Clone, Copy)]
enum Term {
    Mlm,
    Nsp,
    Region,
    Align,
    Select,
}

struct Acc {
    var: Option<Var>,
    parts: LossParts,
}

impl Acc {
    fn new() -> Self {
        Self {
            var: None,
            parts: LossParts::default(),
        }
    }

    fn push<T: Scalar>(&mut self, tape: &mut Tape<T>, v: Var, term: Term) -> Result<()> {
        let x = tape.value(v).item().to_f64c();
        match term {
            Term::Mlm => self.parts.mlm += x,
            Term::Nsp => self.parts.nsp += x,
            Term::Region => self.parts.region += x,
            Term::Align => self.parts.align += x,
            Term::Select => self.parts.select += x,
        }
        self.var = Some(match self.var {
            Some(acc) => tape.add(acc, v)?,
            None => v,
        });
        Ok(())
    }

    fn finish(self) -> StageLoss {
        StageLoss {
            var: self.var,
            parts: self.parts,
        }
    }
}

/// Forward pass over the masked copy of `seq`, with masked regions zeroed.
pub fn encode_masked<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seq: &MultimodalSequence,
    plan: &MaskingPlan,
) -> Result<Encoded> {
    let masked = plan.apply(seq);
    let lang = model.encode_language(tape, &masked)?;
    let features = if masked.visual.is_empty() {
        None
    } else {
        Some(tape.constant(model.feature_matrix(&masked, &plan.regions))?)
    };
    model.encode_joint(tape, &masked, lang, features)
}

fn masked_terms<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seq: &MultimodalSequence,
    enc: &Encoded,
    plan: &MaskingPlan,
    acc: &mut Acc,
) -> Result<()> {
    if !plan.text.is_empty() {
        let rows = tape.gather_rows(enc.text, &plan.text_positions())?;
        let logits = model.mlm_logits(tape, rows)?;
        let l = tape.softmax_cross_entropy(logits, &plan.text_targets())?;
        acc.push(tape, l, Term::Mlm)?;
    }
    if !plan.regions.is_empty() {
        let visual = enc.visual.ok_or(Error::Invalid {
            op: "masked region loss",
            msg: "regions masked on a text-only sequence".into(),
        })?;
        let targets = plan
            .regions
            .iter()
            .map(|&p| {
                seq.visual[p].class.map(|c| c as usize).ok_or(Error::Invalid {
                    op: "masked region loss",
                    msg: format!("visual position {p} is not a region"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = tape.gather_rows(visual, &plan.regions)?;
        let logits = model.region_logits(tape, rows)?;
        let l = tape.softmax_cross_entropy(logits, &targets)?;
        acc.push(tape, l, Term::Region)?;
    }
    Ok(())
}

/// Language stage: masked-LM plus next-sentence BCE on a text pair.
pub fn stage1_step<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seq: &MultimodalSequence,
    plan: &MaskingPlan,
    is_next: bool,
) -> Result<StageLoss> {
    let enc = encode_masked(model, tape, seq, plan)?;
    let mut acc = Acc::new();
    masked_terms(model, tape, seq, &enc, plan, &mut acc)?;
    let logit = model.nsp_logit(tape, &enc)?;
    let l = tape.bce_with_logits(logit, if is_next { T::one() } else { T::zero() })?;
    acc.push(tape, l, Term::Nsp)?;
    Ok(acc.finish())
}

/// Visual grounding stage: masked-LM, masked-region class and alignment BCE
/// on a single panorama with a caption. Mismatched pairs are masked the same
/// way (so masking carries no label information) but only contribute the
/// alignment term.
pub fn stage2_step<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seq: &MultimodalSequence,
    plan: &MaskingPlan,
    matched: bool,
) -> Result<StageLoss> {
    let enc = encode_masked(model, tape, seq, plan)?;
    let mut acc = Acc::new();
    if matched {
        masked_terms(model, tape, seq, &enc, plan, &mut acc)?;
    }
    let logit = model.alignment_logit(tape, &enc)?;
    let l = tape.bce_with_logits(logit, if matched { T::one() } else { T::zero() })?;
    acc.push(tape, l, Term::Align)?;
    Ok(acc.finish())
}

/// Action grounding stage: masked-LM and masked-region losses on a path.
pub fn stage3_step<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seq: &MultimodalSequence,
    plan: &MaskingPlan,
) -> Result<StageLoss> {
    let mut acc = Acc::new();
    if !plan.is_empty() {
        let enc = encode_masked(model, tape, seq, plan)?;
        masked_terms(model, tape, seq, &enc, plan, &mut acc)?;
    }
    Ok(acc.finish())
}

/// Compatibility scores of several paths sharing one instruction, as a `1 × n` row.
/// The language stream is encoded once.
pub fn score_row<T: Scalar>(model: &Model<T>, tape: &mut Tape<T>, seqs: &[MultimodalSequence]) -> Result<Var> {
    let first = seqs.first().ok_or(Error::Empty("candidate sequences"))?;
    if seqs
        .iter()
        .any(|s| s.text != first.text || s.text_mask != first.text_mask)
    {
        return Err(Error::Invalid {
            op: "score_row",
            msg: "candidates must share one instruction".into(),
        });
    }
    let lang = model.encode_language(tape, first)?;
    let mut scores = Vec::with_capacity(seqs.len());
    for s in seqs {
        let f = tape.constant(model.feature_matrix(s, &[]))?;
        let enc = model.encode_joint(tape, s, lang, Some(f))?;
        scores.push(model.score(tape, &enc)?);
    }
    tape.concat_cols(&scores)
}

/// Path selection: cross-entropy of softmax over the candidates' scores
/// against the positive at `positive`.
pub fn finetune_step<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    seqs: &[MultimodalSequence],
    positive: usize,
) -> Result<(StageLoss, Var)> {
    let row = score_row(model, tape, seqs)?;
    let l = tape.softmax_cross_entropy(row, &[positive])?;
    let mut acc = Acc::new();
    acc.push(tape, l, Term::Select)?;
    Ok((acc.finish(), row))
}

/// Scores of paths sharing one instruction, without keeping gradients.
pub fn score_paths<T: Scalar>(model: &Model<T>, seqs: &[MultimodalSequence]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let row = score_row(model, &mut tape, seqs)?;
    Ok(tape.value(row).data().iter().map(|x| x.to_f64c()).collect())
}
