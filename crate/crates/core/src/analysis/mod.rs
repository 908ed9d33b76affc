//! Attribution of compatibility scores to regions.
//!
//! A region's importance is the gradient of the score with respect to its
//! feature vector, summed over the feature dimension (signed, unnormalized).

use crate::autodiff::Tape;
use crate::envgraph::{Instruction, Vocab};
use crate::error::{Error, Result};
use crate::featurize::{MultimodalSequence, SeqLimits};
use crate::model::Model;
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A region token's place in the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRef {
    pub pano: usize,
    /// Index within its panorama.
    pub region: usize,
    pub class: u32,
    /// Position in the visual stream.
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub instruction: Vec<u32>,
    pub deleted_span: Option<(usize, usize)>,
    pub score: f64,
    /// Ordered by (panorama, region).
    pub regions: Vec<RegionRef>,
    pub importances: Vec<f64>,
}

impl ImportanceProfile {
    /// Indices of the `k` largest importances, largest first (ties: earlier region).
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.importances.len()).collect();
        idx.sort_by(|&a, &b| self.importances[b].total_cmp(&self.importances[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    /// Summed importance of regions whose class is in `classes`.
    pub fn mass_on(&self, classes: &[u32]) -> f64 {
        self.regions
            .iter()
            .zip(&self.importances)
            .filter(|(r, _)| classes.contains(&r.class))
            .map(|(_, &v)| v)
            .sum()
    }
}

fn region_refs(seq: &MultimodalSequence) -> Vec<RegionRef> {
    let mut out = Vec::new();
    let mut within = 0;
    for (i, t) in seq.visual.iter().enumerate() {
        if t.is_img {
            within = 0;
            continue;
        }
        out.push(RegionRef {
            pano: t.pano,
            region: within,
            class: t.class.unwrap_or(u32::MAX),
            position: i,
        });
        within += 1;
    }
    out
}

/// `importance_r = Σ_d ∂s/∂feature_{r,d}` for every region of `seq`.
pub fn region_importance<T: Scalar>(model: &Model<T>, seq: &MultimodalSequence) -> Result<ImportanceProfile> {
    if seq.visual.is_empty() {
        return Err(Error::Empty("visual stream"));
    }
    let mut tape = Tape::new();
    let lang = model.encode_language(&mut tape, seq)?;
    let features = tape.leaf(model.feature_matrix(seq, &[]))?;
    let enc = model.encode_joint(&mut tape, seq, lang, Some(features))?;
    let s = model.score(&mut tape, &enc)?;
    let grads = tape.backward(s)?;
    let regions = region_refs(seq);
    let importances = match grads.wrt(features) {
        Some(g) => regions
            .iter()
            .map(|r| g.row(r.position).iter().map(|x| x.to_f64c()).sum())
            .collect(),
        None => vec![0.0; regions.len()],
    };
    Ok(ImportanceProfile {
        instruction: seq.text[1..seq.text.len().saturating_sub(1)].to_vec(),
        deleted_span: None,
        score: tape.value(s).item().to_f64c(),
        regions,
        importances,
    })
}

/// Profiles before and after deleting one instruction span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub span: (usize, usize),
    /// Landmark classes named inside the deleted span.
    pub deleted_classes: Vec<u32>,
    pub before: ImportanceProfile,
    pub after: ImportanceProfile,
    pub mass_before: f64,
    pub mass_after: f64,
}

impl Perturbation {
    pub fn mass_change(&self) -> f64 {
        self.mass_after - self.mass_before
    }

    pub fn top1_changed(&self) -> bool {
        self.before.top_k(1) != self.after.top_k(1)
    }
}

/// Recomputes importance with each span of `instruction` deleted. `seq` must
/// carry `instruction` as its text.
pub fn perturbation_study<T: Scalar>(
    model: &Model<T>,
    seq: &MultimodalSequence,
    instruction: &Instruction,
    spans: &[(usize, usize)],
    vocab: &Vocab,
    limits: &SeqLimits,
) -> Result<Vec<Perturbation>> {
    let before = region_importance(model, seq)?;
    spans
        .iter()
        .map(|&span| {
            if span.0 > span.1 || span.1 > instruction.len() {
                return Err(Error::Invalid {
                    op: "perturbation_study",
                    msg: format!("span {span:?} outside instruction of {} tokens", instruction.len()),
                });
            }
            let mut deleted_classes: Vec<u32> = instruction.tokens[span.0..span.1]
                .iter()
                .filter_map(|&t| vocab.token_class(t))
                .collect();
            deleted_classes.sort_unstable();
            deleted_classes.dedup();
            let cut = instruction.without_span(span);
            let mut after = region_importance(model, &seq.with_text(&cut.tokens, limits)?)?;
            after.deleted_span = Some(span);
            after.instruction = cut.tokens;
            Ok(Perturbation {
                span,
                mass_before: before.mass_on(&deleted_classes),
                mass_after: after.mass_on(&deleted_classes),
                deleted_classes,
                before: before.clone(),
                after,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub episodes: usize,
    /// Fraction of episodes with a held-out-class region among the top 5, per model.
    pub full: f64,
    pub no_stage2: f64,
}

fn heldout_in_top5<T: Scalar>(
    model: &Model<T>,
    seqs: &[MultimodalSequence],
    is_heldout: &(dyn Fn(u32) -> bool + Sync),
) -> Result<f64> {
    let hits: Vec<bool> = seqs
        .par_iter()
        .map(|s| {
            let p = region_importance(model, s)?;
            Ok(p.top_k(5).iter().any(|&i| is_heldout(p.regions[i].class)))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
}

/// Compares how often each model ranks a held-out-class region in its top 5.
pub fn curriculum_grounding_compare<T: Scalar>(
    full: &Model<T>,
    no_stage2: &Model<T>,
    seqs: &[MultimodalSequence],
    is_heldout: &(dyn Fn(u32) -> bool + Sync),
) -> Result<GroundingReport> {
    Ok(GroundingReport {
        episodes: seqs.len(),
        full: heldout_in_top5(full, seqs, is_heldout)?,
        no_stage2: heldout_in_top5(no_stage2, seqs, is_heldout)?,
    })
}

#[derive(Serialize)]
struct TopEntry {
    pano: usize,
    region: usize,
    class: String,
}

#[derive(Serialize)]
struct ProfileJson<'a> {
    instruction: String,
    deleted_span: Option<(usize, usize)>,
    score: f64,
    importances: &'a [f64],
    top5: Vec<TopEntry>,
}

/// `{instruction, deleted_span, score, importances, top5: [{pano, region, class}]}`.
pub fn profile_json(profile: &ImportanceProfile, vocab: &Vocab) -> Result<String> {
    let top5 = profile
        .top_k(5)
        .into_iter()
        .map(|i| {
            let r = profile.regions[i];
            TopEntry {
                pano: r.pano,
                region: r.region,
                class: if (r.class as usize) < vocab.n_classes() {
                    vocab.word(vocab.class_token(r.class))
                } else {
                    r.class.to_string()
                },
            }
        })
        .collect();
    Ok(serde_json::to_string(&ProfileJson {
        instruction: vocab.decode(&profile.instruction),
        deleted_span: profile.deleted_span,
        score: profile.score,
        importances: &profile.importances,
        top5,
    })?)
}

/// Long-format histogram: one line per region in sequence order.
pub fn write_histogram_csv<W: Write>(mut w: W, profiles: &[(String, &ImportanceProfile)]) -> Result<()> {
    writeln!(w, "episode_id,variant,bin,pano,region,class,importance")?;
    for (id, p) in profiles {
        let variant = match p.deleted_span {
            Some((a, b)) => format!("deleted_{a}_{b}"),
            None => "original".to_string(),
        };
        for (bin, (r, v)) in p.regions.iter().zip(&p.importances).enumerate() {
            writeln!(w, "{id},{variant},{bin},{},{},{},{v:.8e}", r.pano, r.region, r.class)?;
        }
    }
    Ok(())
}
