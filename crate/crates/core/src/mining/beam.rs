//! Beam search with finished-path banking.
//!
//! Each round expands every active path by all moves to unvisited neighbors
//! plus STOP, and keeps the best `width` expansions. Kept STOP expansions are
//! banked as finished; kept moves form the next active beam. Paths at the step
//! cap can only stop, so the search ends once every kept path has stopped.

use super::{episode_key, Action, FollowerPolicy, FollowerState};
use crate::envgraph::{heading_between, Clause, EpisodeSpec, NavGraph, Vocab, SUCCESS_RADIUS_M};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_candidates: usize,
    /// Hops allowed beyond the ground-truth hop count.
    pub extra_steps: usize,
    /// Longest trajectory, in nodes, the scorer accepts.
    pub n_max: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 30,
            max_candidates: 30,
            extra_steps: 4,
            n_max: 7,
        }
    }
}

/// `min(gt_hops + extra_steps, n_max − 1)`.
pub fn max_steps_for(gt_hops: usize, cfg: &BeamConfig) -> usize {
    (gt_hops + cfg.extra_steps).min(cfg.n_max.saturating_sub(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub nodes: Vec<usize>,
    pub logprob: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub episode_id: String,
    pub paths: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl CandidateSet {
    pub fn any_success(&self) -> bool {
        self.paths.iter().any(|c| c.success)
    }
}

#[derive(Clone, Debug)]
struct Partial {
    nodes: Vec<usize>,
    logprob: f64,
}

/// Higher log-prob first, then lexicographically smaller node sequence.
fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn state_of(graph: &NavGraph, nodes: &[usize]) -> FollowerState {
    let n = nodes.len();
    FollowerState {
        node: nodes[n - 1],
        heading: (n > 1).then(|| heading_between(&graph.nodes[nodes[n - 2]].xyz, &graph.nodes[nodes[n - 1]].xyz)),
        step: n - 1,
    }
}

/// Expansions of one partial path: `(nodes, logprob, stopped)`.
fn expand(
    policy: &FollowerPolicy,
    graph: &NavGraph,
    clauses: &[Clause],
    key: u64,
    max_steps: usize,
    p: &Partial,
) -> Vec<(Vec<usize>, f64, bool)> {
    let st = state_of(graph, &p.nodes);
    let lp = policy.step_logprobs(graph, &st, clauses, key);
    let mut out = Vec::new();
    for (a, l) in lp {
        if !l.is_finite() {
            continue;
        }
        match a {
            Action::Stop => out.push((p.nodes.clone(), p.logprob + l, true)),
            Action::Move(u) if st.step < max_steps && !p.nodes.contains(&u) => {
                let mut nodes = p.nodes.clone();
                nodes.push(u);
                out.push((nodes, p.logprob + l, false));
            }
            Action::Move(_) => {}
        }
    }
    out
}

/// Finished paths from `start`, best first.
pub fn search(
    policy: &FollowerPolicy,
    graph: &NavGraph,
    start: usize,
    clauses: &[Clause],
    key: u64,
    width: usize,
    max_steps: usize,
) -> Vec<(Vec<usize>, f64)> {
    let mut active = vec![Partial {
        nodes: vec![start],
        logprob: 0.0,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    while !active.is_empty() {
        let mut exps: Vec<(Vec<usize>, f64, bool)> = active
            .iter()
            .flat_map(|p| expand(policy, graph, clauses, key, max_steps, p))
            .collect();
        exps.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));
        exps.truncate(width);
        active.clear();
        for (nodes, logprob, stopped) in exps {
            if stopped {
                finished.push((nodes, logprob));
            } else {
                active.push(Partial { nodes, logprob });
            }
        }
    }
    finished.sort_by(rank);
    finished.dedup_by(|a, b| a.0 == b.0);
    finished
}

/// Every simple path of at most `max_steps` hops, scored like the beam, best first.
pub fn enumerate_paths(
    policy: &FollowerPolicy,
    graph: &NavGraph,
    start: usize,
    clauses: &[Clause],
    key: u64,
    max_steps: usize,
) -> Vec<(Vec<usize>, f64)> {
    fn dfs(
        policy: &FollowerPolicy,
        graph: &NavGraph,
        clauses: &[Clause],
        key: u64,
        max_steps: usize,
        p: Partial,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        for (nodes, logprob, stopped) in expand(policy, graph, clauses, key, max_steps, &p) {
            if stopped {
                out.push((nodes, logprob));
            } else {
                dfs(policy, graph, clauses, key, max_steps, Partial { nodes, logprob }, out);
            }
        }
    }
    let mut out = Vec::new();
    dfs(
        policy,
        graph,
        clauses,
        key,
        max_steps,
        Partial {
            nodes: vec![start],
            logprob: 0.0,
        },
        &mut out,
    );
    out.sort_by(rank);
    out
}

pub fn beam_search(
    policy: &FollowerPolicy,
    graph: &NavGraph,
    episode: &EpisodeSpec,
    vocab: &Vocab,
    cfg: &BeamConfig,
) -> Result<CandidateSet> {
    if cfg.beam_width == 0 {
        return Err(Error::Invalid {
            op: "beam_search",
            msg: "beam width must be at least 1".into(),
        });
    }
    let clauses = episode.instruction.clauses(vocab);
    let max_steps = max_steps_for(episode.path.len() - 1, cfg);
    let found = search(
        policy,
        graph,
        episode.start,
        &clauses,
        episode_key(&episode.episode_id),
        cfg.beam_width,
        max_steps,
    );
    let (dist, _) = graph.shortest_tree(episode.goal);
    let paths = found
        .into_iter()
        .take(cfg.max_candidates)
        .map(|(nodes, logprob)| Candidate {
            success: dist[*nodes.last().expect("non-empty")] < SUCCESS_RADIUS_M,
            nodes,
            logprob,
        })
        .collect();
    Ok(CandidateSet {
        episode_id: episode.episode_id.clone(),
        paths,
        config_hash: None,
    })
}
