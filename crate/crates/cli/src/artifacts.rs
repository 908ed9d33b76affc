//! Reading and writing pipeline artifacts. Every file carries the data hash of
//! the config that produced it and is checked against it on load.

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use pathrank::curriculum::{write_log_csv, LogRow, StageReport};
use pathrank::envgraph::{EpisodeSpec, NavGraph, Split};
use pathrank::featurize::{write_panorama_cache, CachedPanorama};
use pathrank::mining::{read_candidates, write_candidates, CandidateSet};
use pathrank::model::Model;
use pathrank::seeds::derive;
use pathrank::world::World;
use pathrank::Error;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const SPLITS: [Split; 3] = [Split::Train, Split::ValSeen, Split::ValUnseen];

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::ValSeen => "val_seen",
        Split::ValUnseen => "val_unseen",
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("missing input {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn check_hash(path: &Path, expected: &str, found: Option<&str>) -> Result<()> {
    if found != Some(expected) {
        bail!(Error::HashMismatch {
            what: path.display().to_string(),
            expected: expected.to_string(),
            found: found.unwrap_or("none").to_string(),
        });
    }
    Ok(())
}

fn stale(path: &Path) -> anyhow::Error {
    anyhow!(Error::Config(format!(
        "{} does not match the world regenerated from this config",
        path.display()
    )))
}

pub struct Store<'a> {
    pub cfg: &'a RunConfig,
    pub hash: String,
}

impl<'a> Store<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            hash: cfg.data_hash(),
        }
    }

    pub fn graph_path(&self, graph_id: u32) -> PathBuf {
        self.cfg.path(&self.cfg.paths.graphs).join(format!("{graph_id}.json"))
    }

    pub fn episodes_path(&self, split: Split) -> PathBuf {
        self.cfg
            .path(&self.cfg.paths.episodes)
            .join(format!("{}.jsonl", split_name(split)))
    }

    pub fn candidates_path(&self, split: Split) -> PathBuf {
        self.cfg
            .path(&self.cfg.paths.candidates)
            .join(format!("{}.jsonl", split_name(split)))
    }

    pub fn write_graphs(&self, world: &World) -> Result<usize> {
        let mut n = 0;
        for g in world.graphs() {
            let mut w = create(&self.graph_path(g.graph_id))?;
            w.write_all(g.to_json(Some(&self.hash))?.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
            n += 1;
        }
        Ok(n)
    }

    pub fn write_panoramas(&self, world: &World) -> Result<usize> {
        let mut items = Vec::new();
        for g in world.graphs() {
            for (node, obs) in g.nodes.iter().zip(world.panoramas(g.graph_id)?) {
                items.push(CachedPanorama {
                    graph_id: g.graph_id,
                    node_id: node.id,
                    obs: obs.clone(),
                });
            }
        }
        let mut w = create(&self.cfg.path(&self.cfg.paths.panoramas))?;
        write_panorama_cache(&mut w, &items, Some(&self.hash))?;
        w.flush()?;
        Ok(items.len())
    }

    pub fn read_graph(&self, graph_id: u32) -> Result<NavGraph> {
        let path = self.graph_path(graph_id);
        let mut text = String::new();
        std::io::Read::read_to_string(&mut open(&path)?, &mut text)?;
        let (g, h) = NavGraph::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        check_hash(&path, &self.hash, h.as_deref())?;
        Ok(g)
    }

    pub fn write_episodes(&self, world: &World) -> Result<usize> {
        let mut n = 0;
        for split in SPLITS {
            let mut w = create(&self.episodes_path(split))?;
            for ep in world.episodes(split) {
                let ep = EpisodeSpec {
                    config_hash: Some(self.hash.clone()),
                    ..ep.clone()
                };
                serde_json::to_writer(&mut w, &ep)?;
                w.write_all(b"\n")?;
                n += 1;
            }
            w.flush()?;
        }
        Ok(n)
    }

    pub fn read_episodes(&self, split: Split) -> Result<Vec<EpisodeSpec>> {
        let path = self.episodes_path(split);
        let mut out = Vec::new();
        for line in open(&path)?.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ep: EpisodeSpec = serde_json::from_str(&line).with_context(|| format!("parsing {}", path.display()))?;
            check_hash(&path, &self.hash, ep.config_hash.as_deref())?;
            out.push(ep);
        }
        Ok(out)
    }

    pub fn write_candidates(&self, split: Split, sets: &[CandidateSet]) -> Result<()> {
        let stamped: Vec<CandidateSet> = sets
            .iter()
            .map(|s| CandidateSet {
                config_hash: Some(self.hash.clone()),
                ..s.clone()
            })
            .collect();
        let mut w = create(&self.candidates_path(split))?;
        write_candidates(&mut w, &stamped)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_candidates(&self, split: Split) -> Result<Vec<CandidateSet>> {
        let path = self.candidates_path(split);
        let sets = read_candidates(open(&path)?).with_context(|| format!("parsing {}", path.display()))?;
        for s in &sets {
            check_hash(&path, &self.hash, s.config_hash.as_deref())?;
        }
        Ok(sets)
    }

    /// Regenerates the world and checks it against the graph and episode files
    /// on disk. With `candidates`, mined sets are read from disk as well.
    pub fn load_world(&self, candidates: bool) -> Result<World> {
        let mut world = World::generate(self.cfg.world.clone(), self.cfg.seed)?;
        for g in world.graphs() {
            if &self.read_graph(g.graph_id)? != g {
                return Err(stale(&self.graph_path(g.graph_id)));
            }
        }
        for split in SPLITS {
            let disk = self.read_episodes(split)?;
            let same = disk.len() == world.episodes(split).len()
                && disk.iter().zip(world.episodes(split)).all(|(a, b)| {
                    EpisodeSpec {
                        config_hash: None,
                        ..a.clone()
                    } == *b
                });
            if !same {
                return Err(stale(&self.episodes_path(split)));
            }
        }
        if candidates {
            for split in SPLITS {
                let sets: Vec<CandidateSet> = self
                    .read_candidates(split)?
                    .into_iter()
                    .map(|s| CandidateSet { config_hash: None, ..s })
                    .collect();
                let ids = sets.iter().map(|s| &s.episode_id);
                if !ids.eq(world.episodes(split).iter().map(|e| &e.episode_id)) {
                    return Err(stale(&self.candidates_path(split)));
                }
                world.candidates.insert(split, sets);
            }
        }
        Ok(world)
    }

    pub fn checkpoint_path(&self, spec: &str) -> PathBuf {
        if spec.contains('/') || spec.ends_with(".ckpt") {
            PathBuf::from(spec)
        } else {
            self.cfg.path(&self.cfg.paths.checkpoints).join(format!("{spec}.ckpt"))
        }
    }

    /// `scratch` gives a freshly initialized model; anything else names a checkpoint.
    pub fn load_model(&self, spec: &str) -> Result<(Model<f32>, Vec<String>)> {
        if spec == "scratch" {
            let m = Model::new(self.cfg.model_config()?, derive(self.cfg.seed, &[0x1417]))?;
            return Ok((m, Vec::new()));
        }
        let path = self.checkpoint_path(spec);
        let meta_path = path.with_extension("meta.json");
        let meta: CheckpointMeta =
            serde_json::from_reader(open(&meta_path)?).with_context(|| format!("parsing {}", meta_path.display()))?;
        check_hash(&meta_path, &self.hash, Some(&meta.config_hash))?;
        let model = Model::load(&path).with_context(|| format!("loading {}", path.display()))?;
        Ok((model, meta.stages))
    }

    pub fn save_model(&self, name: &str, model: &Model<f32>, meta: &CheckpointMeta, log: &[LogRow]) -> Result<PathBuf> {
        let path = self.checkpoint_path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        model
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        let mut w = create(&path.with_extension("meta.json"))?;
        serde_json::to_writer_pretty(&mut w, meta)?;
        w.write_all(b"\n")?;
        w.flush()?;
        let log_path = self.cfg.path(&self.cfg.paths.logs).join(format!("{name}.csv"));
        let mut w = create(&log_path)?;
        writeln!(w, "# config_hash={}", self.hash)?;
        write_log_csv(&mut w, log)?;
        w.flush()?;
        Ok(path)
    }

    pub fn create(&self, path: &Path) -> Result<BufWriter<fs::File>> {
        create(path)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub run_hash: String,
    pub seed: u64,
    /// Stage labels trained so far, oldest first.
    pub stages: Vec<String>,
    pub init: String,
    pub report: StageReport,
}
