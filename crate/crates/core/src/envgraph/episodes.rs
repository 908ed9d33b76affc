//! Episodes and the train / val-seen / val-unseen benchmark.

use super::generate::{generate_environment, EnvKind, EnvParams};
use super::graph::{NavGraph, Trajectory};
use super::instruction::{synthesize_instruction, Instruction};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::seeds::derive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub episode_id: String,
    pub graph_id: u32,
    pub start: usize,
    pub goal: usize,
    /// Ground-truth shortest path, as node indices within the graph.
    pub path: Vec<usize>,
    pub instruction: Instruction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EpisodeSpec {
    pub fn trajectory(&self, graph: &NavGraph) -> Result<Trajectory> {
        Trajectory::new(graph, self.path.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub min_hops: usize,
    pub max_hops: usize,
    /// Minimum start-goal geodesic, so that stopping at the start never succeeds.
    pub min_goal_dist_m: f64,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self {
            min_hops: 2,
            max_hops: 5,
            min_goal_dist_m: 5.0,
        }
    }
}

/// Samples start/goal pairs whose shortest path has an admissible hop count.
pub fn generate_episodes(
    graph: &NavGraph,
    vocab: &Vocab,
    params: &EpisodeParams,
    count: usize,
    prefix: &str,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.len();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 500 + 1000 {
            return Err(Error::Generation(format!(
                "graph {} yields too few admissible episodes",
                graph.graph_id
            )));
        }
        let start = rng.random_range(0..n);
        let goal = rng.random_range(0..n);
        if start == goal {
            continue;
        }
        let path = graph.shortest_path(start, goal)?;
        let hops = path.len() - 1;
        if hops < params.min_hops || hops > params.max_hops {
            continue;
        }
        if graph.geodesic(start, goal)? < params.min_goal_dist_m {
            continue;
        }
        let traj = Trajectory::new(graph, path.clone())?;
        let k = out.len();
        let instruction = synthesize_instruction(graph, &traj, vocab, derive(seed, &[k as u64, 17]));
        out.push(EpisodeSpec {
            episode_id: format!("{prefix}-{k}"),
            graph_id: graph.graph_id,
            start,
            goal,
            path,
            instruction,
            config_hash: None,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub env: EnvParams,
    pub episodes: EpisodeParams,
    pub train_envs: usize,
    pub unseen_envs: usize,
    pub train_episodes_per_env: usize,
    pub val_seen_per_env: usize,
    pub val_unseen_per_env: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            env: EnvParams::default(),
            episodes: EpisodeParams::default(),
            train_envs: 12,
            unseen_envs: 8,
            train_episodes_per_env: 120,
            val_seen_per_env: 5,
            val_unseen_per_env: 25,
        }
    }
}

pub const UNSEEN_GRAPH_ID_BASE: u32 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub vocab: Vocab,
    pub train_graphs: Vec<NavGraph>,
    pub unseen_graphs: Vec<NavGraph>,
    pub train: Vec<EpisodeSpec>,
    pub val_seen: Vec<EpisodeSpec>,
    pub val_unseen: Vec<EpisodeSpec>,
}

impl Benchmark {
    pub fn generate(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let vocab = Vocab::new(cfg.env.landmark_vocab_size);
        let mut train_graphs = Vec::new();
        let mut train = Vec::new();
        let mut val_seen = Vec::new();
        for i in 0..cfg.train_envs {
            let g = generate_environment(&cfg.env, EnvKind::Train, i as u32, derive(seed, &[1, i as u64]))?;
            let eps = generate_episodes(
                &g,
                &vocab,
                &cfg.episodes,
                cfg.train_episodes_per_env + cfg.val_seen_per_env,
                &format!("t{i}"),
                derive(seed, &[2, i as u64]),
            )?;
            let (tr, vs) = eps.split_at(cfg.train_episodes_per_env);
            train.extend_from_slice(tr);
            val_seen.extend(vs.iter().cloned().map(|mut e| {
                e.episode_id = e.episode_id.replacen('t', "s", 1);
                e
            }));
            train_graphs.push(g);
        }
        let mut unseen_graphs = Vec::new();
        let mut val_unseen = Vec::new();
        for i in 0..cfg.unseen_envs {
            let gid = UNSEEN_GRAPH_ID_BASE + i as u32;
            let g = generate_environment(&cfg.env, EnvKind::Unseen, gid, derive(seed, &[3, i as u64]))?;
            val_unseen.extend(generate_episodes(
                &g,
                &vocab,
                &cfg.episodes,
                cfg.val_unseen_per_env,
                &format!("u{i}"),
                derive(seed, &[4, i as u64]),
            )?);
            unseen_graphs.push(g);
        }
        Ok(Self {
            vocab,
            train_graphs,
            unseen_graphs,
            train,
            val_seen,
            val_unseen,
        })
    }

    pub fn graph(&self, graph_id: u32) -> Option<&NavGraph> {
        self.train_graphs
            .iter()
            .chain(&self.unseen_graphs)
            .find(|g| g.graph_id == graph_id)
    }

    pub fn split(&self, split: Split) -> &[EpisodeSpec] {
        match split {
            Split::Train => &self.train,
            Split::ValSeen => &self.val_seen,
            Split::ValUnseen => &self.val_unseen,
        }
    }
}
