use crate::envgraph::vocab::MASK;
use crate::envgraph::Vocab;
use crate::featurize::MultimodalSequence;
use crate::mining::episode_key;
use crate::seeds::derive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MASK_RATE: f64 = 0.15;

/// Which text and region positions an example hides, and what replaces the text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    /// `(text position, original token, replacement token)`.
    pub text: Vec<(usize, u32, u32)>,
    /// Visual-stream positions whose features are zeroed.
    pub regions: Vec<usize>,
}

/// Rates and switches for one objective set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub rate: f64,
    pub text: bool,
    pub regions: bool,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self {
            rate: 0.0,
            text: false,
            regions: false,
        }
    }
}

fn choose(candidates: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if candidates.is_empty() || rate <= 0.0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = candidates.iter().copied().filter(|_| rng.random_bool(rate)).collect();
    if out.is_empty() {
        out.push(candidates[rng.random_range(0..candidates.len())]);
    }
    out
}

impl MaskingPlan {
    /// Bernoulli(rate) per eligible position with at least one position per
    /// active stream. Text replacements follow 80% `[MASK]`, 10% random
    /// content token, 10% unchanged. Special tokens are never chosen.
    /// Reproducible from `(seed, example_id)`.
    pub fn sample(seq: &MultimodalSequence, vocab: &Vocab, spec: MaskSpec, seed: u64, example_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[episode_key(example_id), 0x4D41_534B]));
        let mut plan = Self::default();
        if spec.text {
            let eligible: Vec<usize> = (0..seq.text.len())
                .filter(|&i| seq.text_mask[i] && !Vocab::is_special(seq.text[i]))
                .collect();
            let content = vocab.content_range();
            for i in choose(&eligible, spec.rate, &mut rng) {
                let u: f64 = rng.random();
                let replacement = if u < 0.8 {
                    MASK
                } else if u < 0.9 {
                    rng.random_range(content.clone())
                } else {
                    seq.text[i]
                };
                plan.text.push((i, seq.text[i], replacement));
            }
        }
        if spec.regions {
            plan.regions = choose(&seq.region_positions(), spec.rate, &mut rng);
        }
        plan
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty() && self.regions.is_empty()
    }

    /// Copy of `seq` with text replacements applied (region zeroing happens
    /// when the feature matrix is built).
    pub fn apply(&self, seq: &MultimodalSequence) -> MultimodalSequence {
        let mut out = seq.clone();
        for &(i, _, r) in &self.text {
            out.text[i] = r;
        }
        out
    }

    pub fn text_positions(&self) -> Vec<usize> {
        self.text.iter().map(|t| t.0).collect()
    }

    pub fn text_targets(&self) -> Vec<usize> {
        self.text.iter().map(|t| t.1 as usize).collect()
    }
}
