//! Candidate paths from a scripted follower, and 1-positive/3-negative sampling.

mod beam;

pub use beam::{beam_search, enumerate_paths, max_steps_for, BeamConfig, Candidate, CandidateSet};

use crate::envgraph::{heading_between, Clause, Direction, Instruction, NavGraph, Vocab};
use crate::error::{Error, Result};
use crate::seeds::derive;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hand-written instruction follower used to propose candidate paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerPolicy {
    pub landmark_weight: f64,
    pub direction_weight: f64,
    /// Added to the STOP logit; may be `-inf` to forbid stopping.
    pub stop_bias: f64,
    /// Added to the STOP logit when the goal landmark is at the current node.
    pub stop_weight: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FollowerPolicy {
    fn default() -> Self {
        Self {
            landmark_weight: 2.0,
            direction_weight: 1.5,
            stop_bias: -1.5,
            stop_weight: 3.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Move(usize),
    Stop,
}

/// Where the follower is: node, arrival heading (none at the start), hops taken.
#[derive(Clone, Copy, Debug)]
pub struct FollowerState {
    pub node: usize,
    pub heading: Option<f64>,
    pub step: usize,
}

/// Stable 64-bit key for an episode id.
pub fn episode_key(episode_id: &str) -> u64 {
    let d = Sha256::digest(episode_id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn has_class(graph: &NavGraph, node: usize, class: Option<u32>) -> bool {
    class.is_some_and(|c| graph.nodes[node].landmarks.iter().any(|l| l.class == c))
}

/// Numerically stable log-softmax; `-inf` entries stay `-inf`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![-(logits.len() as f64).ln(); logits.len()];
    }
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

impl FollowerPolicy {
    fn noise(&self, key: u64, state: &FollowerState, action: Action) -> f64 {
        if self.noise_sigma == 0.0 {
            return 0.0;
        }
        let a = match action {
            Action::Move(u) => u as u64,
            Action::Stop => u64::MAX,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.seed, &[key, state.node as u64, state.step as u64, a]));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.noise_sigma * z
    }

    /// Log-probabilities over the sorted neighbors followed by STOP.
    pub fn step_logprobs(
        &self,
        graph: &NavGraph,
        state: &FollowerState,
        clauses: &[Clause],
        episode_key: u64,
    ) -> Vec<(Action, f64)> {
        let last = clauses.len().saturating_sub(1);
        let clause = clauses.get(state.step.min(last));
        let goal = clauses.last().and_then(|c| c.goal);
        let target = clause.and_then(|c| if c.goal.is_some() { c.goal } else { c.waypoint });
        let here = &graph.nodes[state.node].xyz;

        let mut actions = Vec::new();
        let mut logits = Vec::new();
        for &(u, _) in graph.neighbors(state.node) {
            let mut l = 0.0;
            if let (Some(h), Some(want)) = (state.heading, clause.and_then(|c| c.direction)) {
                let dir = Direction::from_turn(heading_between(here, &graph.nodes[u].xyz) - h);
                if dir == want {
                    l += self.direction_weight;
                }
            }
            if has_class(graph, u, target) {
                l += self.landmark_weight;
            }
            let a = Action::Move(u);
            l += self.noise(episode_key, state, a);
            actions.push(a);
            logits.push(l);
        }
        let mut stop = self.stop_bias;
        if has_class(graph, state.node, goal) {
            stop += self.stop_weight;
        }
        stop += self.noise(episode_key, state, Action::Stop);
        actions.push(Action::Stop);
        logits.push(stop);
        actions.into_iter().zip(log_softmax(&logits)).collect()
    }
}

/// Convenience wrapper taking the instruction directly.
pub fn follower_step_logprobs(
    policy: &FollowerPolicy,
    graph: &NavGraph,
    state: &FollowerState,
    instruction: &Instruction,
    vocab: &Vocab,
    episode_id: &str,
) -> Vec<(Action, f64)> {
    policy.step_logprobs(graph, state, &instruction.clauses(vocab), episode_key(episode_id))
}

/// One successful and three unsuccessful candidates (the positive comes first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingQuad {
    pub episode_id: String,
    pub paths: [Vec<usize>; 4],
}

/// Why an episode produced no quad.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadSkip {
    NoPositive,
    TooFewNegatives,
}

pub fn sample_quad(candidates: &CandidateSet, seed: u64) -> std::result::Result<TrainingQuad, QuadSkip> {
    let mut pos: Vec<&Candidate> = candidates.paths.iter().filter(|c| c.success).collect();
    let mut neg: Vec<&Candidate> = candidates.paths.iter().filter(|c| !c.success).collect();
    if pos.is_empty() {
        return Err(QuadSkip::NoPositive);
    }
    if neg.len() < 3 {
        return Err(QuadSkip::TooFewNegatives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[episode_key(&candidates.episode_id)]));
    pos.shuffle(&mut rng);
    let (chosen, _) = neg.partial_shuffle(&mut rng, 3);
    Ok(TrainingQuad {
        episode_id: candidates.episode_id.clone(),
        paths: [
            pos[0].nodes.clone(),
            chosen[0].nodes.clone(),
            chosen[1].nodes.clone(),
            chosen[2].nodes.clone(),
        ],
    })
}

pub fn write_candidates<W: std::io::Write>(mut w: W, sets: &[CandidateSet]) -> Result<()> {
    for s in sets {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_candidates<R: std::io::BufRead>(r: R) -> Result<Vec<CandidateSet>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(Error::from)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
