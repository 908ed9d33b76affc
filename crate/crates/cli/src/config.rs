use anyhow::{anyhow, bail, Context, Result};
use pathrank::curriculum::{Stage, StageSpec};
use pathrank::envgraph::Vocab;
use pathrank::model::ModelConfig;
use pathrank::world::{config_hash, WorldConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub stage1: StageSpec,
    pub stage2: StageSpec,
    pub stage3: StageSpec,
    pub finetune: StageSpec,
}

impl Default for Training {
    fn default() -> Self {
        Self {
            stage1: StageSpec::new(Stage::Language),
            stage2: StageSpec::new(Stage::Visual),
            stage3: StageSpec::new(Stage::Action),
            finetune: StageSpec::new(Stage::Finetune),
        }
    }
}

impl Training {
    pub fn spec(&self, stage: Stage) -> &StageSpec {
        match stage {
            Stage::Language => &self.stage1,
            Stage::Visual => &self.stage2,
            Stage::Action => &self.stage3,
            Stage::Finetune => &self.finetune,
        }
    }
}

/// Artifact locations. Relative entries resolve against `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub graphs: PathBuf,
    pub panoramas: PathBuf,
    pub episodes: PathBuf,
    pub candidates: PathBuf,
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
    pub metrics: PathBuf,
    pub analysis: PathBuf,
    pub ensemble: PathBuf,
    pub ablation: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: "run".into(),
            graphs: "graphs".into(),
            panoramas: "panoramas.jsonl".into(),
            episodes: "episodes".into(),
            candidates: "candidates".into(),
            checkpoints: "checkpoints".into(),
            logs: "logs".into(),
            metrics: "metrics".into(),
            analysis: "analysis".into(),
            ensemble: "ensemble.json".into(),
            ablation: "ablation.csv".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.out_dir.join(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    /// Used when `model` is null: toy, desk or paper-scale.
    pub model_preset: String,
    pub model: Option<ModelConfig>,
    pub training: Training,
    /// Training seeds for `ablate-curriculum`.
    pub ablation_seeds: Vec<u64>,
    pub ensemble_grid_step: f64,
    pub analysis_episodes: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            model_preset: "desk".into(),
            model: None,
            training: Training::default(),
            ablation_seeds: vec![1, 2, 3],
            ensemble_grid_step: 0.05,
            analysis_episodes: 50,
            paths: Paths::default(),
        }
    }
}

fn preset_model(preset: &str, world: &WorldConfig) -> Result<ModelConfig> {
    let n = world.benchmark.env.landmark_vocab_size;
    let base = ModelConfig::preset(preset, Vocab::new(n).size(), n)?;
    Ok(ModelConfig {
        d_v: world.features.d_v,
        k_max: world.limits.k_max,
        n_max: world.limits.n_max,
        l_max: world.limits.l_max,
        ..base
    })
}

impl RunConfig {
    /// Defaults, then the config file, then `key.path=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut root = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| anyhow!(pathrank::Error::Config(format!("{}: {e}", path.display()))))?;
            let Value::Object(mut user) = user else {
                bail!(pathrank::Error::Config("config file must hold a JSON object".into()));
            };
            let model = user.remove("model");
            merge(&mut root, Value::Object(user), "")?;
            if let Some(model) = model {
                if !model.is_null() {
                    materialize_model(&mut root)?;
                }
                merge(&mut root, json!({ "model": model }), "")?;
            }
        }
        for kv in overrides {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!(pathrank::Error::Config(format!("override {kv:?} is not key=value"))))?;
            if key.starts_with("model.") {
                materialize_model(&mut root)?;
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut root, key, value)?;
        }
        let mut cfg: Self =
            serde_json::from_value(root).map_err(|e| anyhow!(pathrank::Error::Config(e.to_string())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.paths.out_dir = o.to_path_buf();
        }
        cfg.model_config()?;
        for s in [
            &cfg.training.stage1,
            &cfg.training.stage2,
            &cfg.training.stage3,
            &cfg.training.finetune,
        ] {
            s.validate()?;
        }
        if cfg.training.stage1.stage != Stage::Language
            || cfg.training.stage2.stage != Stage::Visual
            || cfg.training.stage3.stage != Stage::Action
            || cfg.training.finetune.stage != Stage::Finetune
        {
            bail!(pathrank::Error::Config("training specs are out of stage order".into()));
        }
        Ok(cfg)
    }

    /// The model to train, checked against the world's vocabulary and feature sizes.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = match &self.model {
            Some(m) => m.clone(),
            None => preset_model(&self.model_preset, &self.world)?,
        };
        m.validate()?;
        let n = self.world.benchmark.env.landmark_vocab_size;
        let l = &self.world.limits;
        if m.vocab_size != Vocab::new(n).size()
            || m.n_classes != n
            || m.d_v != self.world.features.d_v
            || m.k_max < l.k_max
            || m.n_max < l.n_max
            || m.l_max < l.l_max
        {
            bail!(pathrank::Error::Config(
                "model vocabulary, class count, feature width or sequence limits disagree with the world".into()
            ));
        }
        Ok(m)
    }

    /// Hash of everything that determines graphs, episodes, features and candidates.
    pub fn data_hash(&self) -> String {
        config_hash(&json!({ "seed": self.seed, "world": self.world }))
    }

    /// Hash of the whole run except artifact locations.
    pub fn run_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("paths");
        config_hash(&v)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.paths.resolve(p)
    }
}

fn materialize_model(root: &mut Value) -> Result<()> {
    if !root["model"].is_null() {
        return Ok(());
    }
    let world: WorldConfig =
        serde_json::from_value(root["world"].clone()).map_err(|e| anyhow!(pathrank::Error::Config(e.to_string())))?;
    let preset = root["model_preset"].as_str().unwrap_or("desk").to_string();
    root["model"] = serde_json::to_value(preset_model(&preset, &world)?)?;
    Ok(())
}

/// Recursive object merge that rejects keys absent from `base`.
fn merge(base: &mut Value, user: Value, prefix: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => merge_object(b, u, prefix),
        (b, u) => {
            *b = u;
            Ok(())
        }
    }
}

fn merge_object(b: &mut Map<String, Value>, u: Map<String, Value>, prefix: &str) -> Result<()> {
    for (k, v) in u {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let slot = b
            .get_mut(&k)
            .ok_or_else(|| anyhow!(pathrank::Error::Config(format!("unknown config key {key}"))))?;
        if slot.is_object() && v.is_object() {
            merge(slot, v, &key)?;
        } else {
            *slot = v;
        }
    }
    Ok(())
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(m) => m.get_mut(part),
            Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| anyhow!(pathrank::Error::Config(format!("unknown config key {key}"))))?;
    }
    *cur = value;
    Ok(())
}
