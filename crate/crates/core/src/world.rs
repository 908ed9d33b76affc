//! Everything one experiment seed needs in memory: benchmark splits, region
//! features for every panorama, pretraining corpora and mined candidates.

use crate::envgraph::{
    generate_environment, generate_episodes, Benchmark, BenchmarkConfig, EnvKind, EpisodeSpec, Instruction, NavGraph,
    Split,
};
use crate::error::{Error, Result};
use crate::featurize::{featurize_graph, DedupParams, FeatureParams, FeatureSpace, PanoramaObservation, SeqLimits};
use crate::mining::{beam_search, BeamConfig, CandidateSet, FollowerPolicy};
use crate::seeds::derive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// First graph id used for web (pretraining-only) environments.
pub const WEB_GRAPH_ID_BASE: u32 = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WebConfig {
    pub envs: usize,
    /// Instructions per web environment for the text corpus.
    pub instructions_per_env: usize,
}

impl Default for WebConfig {
    fn default() -> Self {
        Self {
            envs: 12,
            instructions_per_env: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct WorldConfig {
    pub benchmark: BenchmarkConfig,
    pub features: FeatureParams,
    pub dedup: DedupParams,
    pub web: WebConfig,
    pub follower: FollowerPolicy,
    pub beam: BeamConfig,
    pub limits: SeqLimits,
}

impl WorldConfig {
    /// SHA-256 of the canonical JSON encoding, as lowercase hex.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 over the canonical (key-sorted, compact) JSON of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let canonical = serde_json::to_string(&v).expect("value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub bench: Benchmark,
    pub space: FeatureSpace,
    pub web_graphs: Vec<NavGraph>,
    /// Instructions written for web environments (text-only corpus).
    pub web_instructions: Vec<Instruction>,
    /// Deduplicated observations per graph id, indexed by node.
    pub panoramas: BTreeMap<u32, Vec<PanoramaObservation>>,
    pub candidates: BTreeMap<Split, Vec<CandidateSet>>,
}

impl World {
    pub fn build(config: WorldConfig, seed: u64) -> Result<Self> {
        let mut world = Self::generate(config, seed)?;
        world.mine_all()?;
        Ok(world)
    }

    /// Environments, episodes and region features, without mined candidates.
    pub fn generate(config: WorldConfig, seed: u64) -> Result<Self> {
        let bench = Benchmark::generate(&config.benchmark, seed)?;
        let space = FeatureSpace::new(
            config.features.clone(),
            config.benchmark.env.landmark_vocab_size,
            derive(seed, &[5]),
        );
        let mut web_graphs = Vec::with_capacity(config.web.envs);
        let mut web_instructions = Vec::new();
        for i in 0..config.web.envs {
            let g = generate_environment(
                &config.benchmark.env,
                EnvKind::Web,
                WEB_GRAPH_ID_BASE + i as u32,
                derive(seed, &[6, i as u64]),
            )?;
            let eps = generate_episodes(
                &g,
                &bench.vocab,
                &config.benchmark.episodes,
                config.web.instructions_per_env,
                &format!("w{i}"),
                derive(seed, &[7, i as u64]),
            )?;
            web_instructions.extend(eps.into_iter().map(|e| e.instruction));
            web_graphs.push(g);
        }
        let mut panoramas = BTreeMap::new();
        for g in bench.train_graphs.iter().chain(&bench.unseen_graphs).chain(&web_graphs) {
            panoramas.insert(g.graph_id, featurize_graph(&space, g, &config.dedup));
        }
        Ok(Self {
            config,
            seed,
            bench,
            space,
            web_graphs,
            web_instructions,
            panoramas,
            candidates: BTreeMap::new(),
        })
    }

    pub fn mine_all(&mut self) -> Result<()> {
        for split in [Split::Train, Split::ValSeen, Split::ValUnseen] {
            let sets = self.mine(split)?;
            self.candidates.insert(split, sets);
        }
        Ok(())
    }

    pub fn mine(&self, split: Split) -> Result<Vec<CandidateSet>> {
        self.bench
            .split(split)
            .par_iter()
            .map(|ep| {
                beam_search(
                    &self.config.follower,
                    self.graph(ep.graph_id)?,
                    ep,
                    &self.bench.vocab,
                    &self.config.beam,
                )
            })
            .collect()
    }

    pub fn graph(&self, graph_id: u32) -> Result<&NavGraph> {
        self.bench
            .graph(graph_id)
            .or_else(|| self.web_graphs.iter().find(|g| g.graph_id == graph_id))
            .ok_or_else(|| Error::Invalid {
                op: "world graph",
                msg: format!("unknown graph id {graph_id}"),
            })
    }

    /// Train, unseen and web graphs, in that order.
    pub fn graphs(&self) -> impl Iterator<Item = &NavGraph> {
        self.bench
            .train_graphs
            .iter()
            .chain(&self.bench.unseen_graphs)
            .chain(&self.web_graphs)
    }

    pub fn panoramas(&self, graph_id: u32) -> Result<&[PanoramaObservation]> {
        self.panoramas
            .get(&graph_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid {
                op: "world panoramas",
                msg: format!("no observations for graph {graph_id}"),
            })
    }

    pub fn episodes(&self, split: Split) -> &[EpisodeSpec] {
        self.bench.split(split)
    }

    pub fn candidates(&self, split: Split) -> &[CandidateSet] {
        self.candidates.get(&split).map_or(&[], Vec::as_slice)
    }
}
