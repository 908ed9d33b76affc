//! Training examples for each stage, built from a [`World`].

use crate::envgraph::vocab::SEP;
use crate::envgraph::{synthesize_caption, Instruction, Split, Trajectory, Word};
use crate::error::Result;
use crate::featurize::{assemble_path, assemble_sequence, assemble_text_pair, MultimodalSequence, PanoramaStep};
use crate::mining::{sample_quad, TrainingQuad};
use crate::seeds::derive;
use crate::world::World;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A sentence pair for next-sentence prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPair {
    pub id: String,
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub is_next: bool,
}

/// One panorama with a caption; `matched` is false when the caption was
/// swapped in from another panorama.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionExample {
    pub id: String,
    pub graph_id: u32,
    pub node: usize,
    pub heading: f64,
    pub caption: Vec<u32>,
    pub matched: bool,
}

/// A ground-truth path with its instruction.
#[derive(Clone, Debug, PartialEq)]
pub struct PathExample {
    pub id: String,
    pub graph_id: u32,
    pub nodes: Vec<usize>,
    pub tokens: Vec<u32>,
}

/// Sentences of a text: instruction clauses split on `then`, caption items split on `and`.
fn sentences(tokens: &[u32], sep: u32) -> Vec<Vec<u32>> {
    tokens
        .split(|&t| t == sep)
        .filter(|s| !s.is_empty())
        .map(<[u32]>::to_vec)
        .collect()
}

/// Adjacent sentence pairs (positive) or a first sentence with one from
/// another text (negative), 50/50.
pub fn text_pairs(texts: &[(Vec<Vec<u32>>, &'static str)], seed: u64) -> Vec<TextPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[0x5E17]));
    let mut out = Vec::new();
    for (k, (sents, kind)) in texts.iter().enumerate() {
        for i in 0..sents.len().saturating_sub(1) {
            let is_next = rng.random_bool(0.5);
            let b = if is_next {
                sents[i + 1].clone()
            } else {
                let other = loop {
                    let j = rng.random_range(0..texts.len());
                    if j != k && !texts[j].0.is_empty() {
                        break j;
                    }
                };
                texts[other].0.choose(&mut rng).expect("non-empty").clone()
            };
            out.push(TextPair {
                id: format!("{kind}{k}-{i}"),
                a: sents[i].clone(),
                b,
                is_next,
            });
        }
    }
    out
}

/// Caption for every panorama of `graph_ids` naming one to three of its region classes.
fn captions(world: &World, graph_ids: &[u32], seed: u64) -> Result<Vec<(u32, usize, Vec<u32>)>> {
    let mut out = Vec::new();
    for &gid in graph_ids {
        let panos = world.panoramas(gid)?;
        for (node, obs) in panos.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[gid as u64, node as u64, 0xCA7]));
            let mut classes: Vec<u32> = obs.regions.iter().map(|r| r.landmark_class).collect();
            classes.sort_unstable();
            classes.dedup();
            classes.shuffle(&mut rng);
            let k = rng.random_range(1..=classes.len().clamp(1, 3));
            classes.truncate(k);
            if !classes.is_empty() {
                out.push((gid, node, synthesize_caption(&classes, &world.bench.vocab).tokens));
            }
        }
    }
    Ok(out)
}

fn web_ids(world: &World) -> Vec<u32> {
    world.web_graphs.iter().map(|g| g.graph_id).collect()
}

/// Stage 1 corpus: web instructions and captions as text only.
pub fn stage1_corpus(world: &World, seed: u64) -> Result<Vec<TextPair>> {
    let mut texts: Vec<(Vec<Vec<u32>>, &'static str)> = world
        .web_instructions
        .iter()
        .map(|i: &Instruction| (sentences(&i.tokens, Word::Then.id()), "i"))
        .collect();
    for (_, _, c) in captions(world, &web_ids(world), seed)? {
        texts.push((sentences(&c, Word::And.id()), "c"));
    }
    Ok(text_pairs(&texts, seed))
}

/// Stage 2 corpus: one web panorama plus a caption, half of them mismatched.
pub fn stage2_corpus(world: &World, seed: u64) -> Result<Vec<CaptionExample>> {
    caption_examples(world, &web_ids(world), seed)
}

/// Captioned panoramas of `graph_ids`, half of them mismatched. A mismatched
/// caption is borrowed from another panorama and names at least one class
/// this panorama lacks.
pub fn caption_examples(world: &World, graph_ids: &[u32], seed: u64) -> Result<Vec<CaptionExample>> {
    let caps = captions(world, graph_ids, seed)?;
    let vocab = &world.bench.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[0x57A2]));
    let mut out = Vec::with_capacity(caps.len());
    for (k, (graph_id, node, caption)) in caps.iter().enumerate() {
        let present: Vec<u32> = world.panoramas(*graph_id)?[*node]
            .regions
            .iter()
            .map(|r| r.landmark_class)
            .collect();
        let foreign = |c: &[u32]| {
            c.iter()
                .any(|&t| vocab.token_class(t).is_some_and(|x| !present.contains(&x)))
        };
        let candidates: Vec<usize> = (0..caps.len()).filter(|&j| foreign(&caps[j].2)).collect();
        let matched = candidates.is_empty() || rng.random_bool(0.5);
        let caption = if matched {
            caption.clone()
        } else {
            caps[*candidates.choose(&mut rng).expect("non-empty")].2.clone()
        };
        out.push(CaptionExample {
            id: format!("cap{k}"),
            graph_id: *graph_id,
            node: *node,
            heading: rng.random_range(0.0..std::f64::consts::TAU),
            caption,
            matched,
        });
    }
    Ok(out)
}

/// Stage 3 corpus: ground-truth paths of the training split.
pub fn stage3_corpus(world: &World) -> Vec<PathExample> {
    world
        .episodes(Split::Train)
        .iter()
        .map(|e| PathExample {
            id: e.episode_id.clone(),
            graph_id: e.graph_id,
            nodes: e.path.clone(),
            tokens: e.instruction.tokens.clone(),
        })
        .collect()
}

/// One quad per training episode that has a positive and three negatives.
pub fn finetune_quads(world: &World, seed: u64) -> Vec<TrainingQuad> {
    world
        .candidates(Split::Train)
        .iter()
        .filter_map(|set| sample_quad(set, seed).ok())
        .collect()
}

impl TextPair {
    pub fn sequence(&self, world: &World) -> Result<MultimodalSequence> {
        debug_assert!(!self.a.contains(&SEP));
        assemble_text_pair(&self.a, &self.b, &world.config.limits)
    }
}

impl CaptionExample {
    pub fn sequence(&self, world: &World) -> Result<MultimodalSequence> {
        let panos = world.panoramas(self.graph_id)?;
        let step = PanoramaStep {
            obs: &panos[self.node],
            heading_cur: self.heading,
            heading_next: None,
        };
        assemble_sequence(&[step], &self.caption, &world.config.limits)
    }
}

/// Sequence for `nodes` in graph `graph_id` paired with `tokens`.
pub fn path_sequence(world: &World, graph_id: u32, nodes: &[usize], tokens: &[u32]) -> Result<MultimodalSequence> {
    let g = world.graph(graph_id)?;
    let traj = Trajectory::new(g, nodes.to_vec())?;
    assemble_path(g, &traj, world.panoramas(graph_id)?, tokens, &world.config.limits)
}

impl PathExample {
    pub fn sequence(&self, world: &World) -> Result<MultimodalSequence> {
        path_sequence(world, self.graph_id, &self.nodes, &self.tokens)
    }
}
