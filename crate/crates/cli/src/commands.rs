use crate::artifacts::{split_name, CheckpointMeta, Store, SPLITS};
use crate::config::RunConfig;
use crate::{Cli, Cmd};
use anyhow::{bail, Context, Result};
use pathrank::analysis::{curriculum_grounding_compare, perturbation_study, profile_json, write_histogram_csv};
use pathrank::curriculum::{
    candidate_scores, median_by_row, path_sequence, run_ablation, run_stage, write_ablation_csv, AblationConfig, Stage,
};
use pathrank::envgraph::{Split, Trajectory};
use pathrank::evalmetrics::{
    compute_metrics, ensemble_grid_search, ensemble_sr, exploration_tour, select_path, summarize, write_metrics_csv,
};
use pathrank::world::World;
use pathrank::Error;
use rayon::prelude::*;
use serde_json::json;
use std::io::Write;
use std::process::ExitCode;

pub fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
    ExitCode::from(code)
}

/// Maps an error chain to a kind and exit code and prints it as one JSON line.
pub fn report(err: &anyhow::Error) -> ExitCode {
    let mut kind = ("internal", 1);
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            kind = match e {
                Error::HashMismatch { .. } => ("hash_mismatch", 4),
                Error::Diverged { .. } => ("diverged", 5),
                Error::Config(_) => ("config", 2),
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ("missing_input", 3),
                _ => continue,
            };
            break;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                kind = ("missing_input", 3);
                break;
            }
        }
    }
    fail(kind.0, &format!("{err:#}"), kind.1)
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("sizing the worker pool")?;
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.set, cli.seed, cli.out.as_deref())?;
    let store = Store::new(&cfg);
    match cli.cmd {
        Cmd::GenEnv => gen_env(&store),
        Cmd::GenEpisodes => gen_episodes(&store),
        Cmd::Mine => mine(&store),
        Cmd::Pretrain {
            stage,
            init,
            name,
            epochs,
        } => {
            let stage: Stage = stage.to_string().parse()?;
            let init = init.unwrap_or_else(|| match stage {
                Stage::Language => "scratch".into(),
                Stage::Visual => "stage1".into(),
                _ => "stage2".into(),
            });
            let name = name.unwrap_or_else(|| format!("stage{stage}"));
            train(&store, stage, &init, &name, epochs)
        }
        Cmd::Finetune { init, name, epochs } => train(
            &store,
            Stage::Finetune,
            init.as_deref().unwrap_or("stage3"),
            &name,
            epochs,
        ),
        Cmd::Evaluate {
            checkpoint,
            split,
            leaderboard_mode,
        } => evaluate(&store, &checkpoint, split.into(), leaderboard_mode),
        Cmd::Ensemble { checkpoint, grid_step } => {
            ensemble(&store, &checkpoint, grid_step.unwrap_or(cfg.ensemble_grid_step))
        }
        Cmd::Analyze {
            checkpoint,
            baseline,
            episodes,
        } => analyze(
            &store,
            &checkpoint,
            baseline.as_deref(),
            episodes.unwrap_or(cfg.analysis_episodes),
        ),
        Cmd::AblateCurriculum { seeds } => ablate(&store, seeds.unwrap_or_else(|| cfg.ablation_seeds.clone())),
        Cmd::ShowConfig => {
            let v = json!({
                "config": cfg,
                "config_hash": store.hash,
                "run_hash": cfg.run_hash(),
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
    }
}

fn gen_env(store: &Store) -> Result<()> {
    let world = World::generate(store.cfg.world.clone(), store.cfg.seed)?;
    let graphs = store.write_graphs(&world)?;
    let panoramas = store.write_panoramas(&world)?;
    emit(json!({
        "command": "gen-env",
        "config_hash": store.hash,
        "graphs": graphs,
        "panoramas": panoramas,
    }));
    Ok(())
}

fn gen_episodes(store: &Store) -> Result<()> {
    let world = World::generate(store.cfg.world.clone(), store.cfg.seed)?;
    for g in world.graphs() {
        if &store.read_graph(g.graph_id)? != g {
            bail!(Error::Config(format!(
                "{} does not match the world regenerated from this config",
                store.graph_path(g.graph_id).display()
            )));
        }
    }
    let n = store.write_episodes(&world)?;
    emit(json!({ "command": "gen-episodes", "config_hash": store.hash, "episodes": n }));
    Ok(())
}

fn mine(store: &Store) -> Result<()> {
    let world = store.load_world(false)?;
    let mut counts = serde_json::Map::new();
    for split in SPLITS {
        let sets = world.mine(split)?;
        let covered = sets.iter().filter(|s| s.any_success()).count();
        store.write_candidates(split, &sets)?;
        counts.insert(
            split_name(split).into(),
            json!({ "episodes": sets.len(), "coverage": covered as f64 / sets.len().max(1) as f64 }),
        );
    }
    emit(json!({ "command": "mine", "config_hash": store.hash, "splits": counts }));
    Ok(())
}

fn train(store: &Store, stage: Stage, init: &str, name: &str, epochs: Option<usize>) -> Result<()> {
    let cfg = store.cfg;
    let world = store.load_world(stage == Stage::Finetune)?;
    let (mut model, mut stages) = store.load_model(init)?;
    let mut spec = cfg.training.spec(stage).clone();
    if let Some(e) = epochs {
        spec.epochs = e;
    }
    let mut log = Vec::new();
    let report = run_stage(&mut model, &world, &spec, cfg.seed, &mut log)?;
    stages.push(stage.label().to_string());
    let meta = CheckpointMeta {
        config_hash: store.hash.clone(),
        run_hash: cfg.run_hash(),
        seed: cfg.seed,
        stages: stages.clone(),
        init: init.to_string(),
        report: report.clone(),
    };
    let path = store.save_model(name, &model, &meta, &log)?;
    emit(json!({
        "command": if stage == Stage::Finetune { "finetune".to_string() } else { format!("pretrain-{stage}") },
        "config_hash": store.hash,
        "checkpoint": path,
        "stages": stages,
        "steps": report.steps,
        "first_epoch_loss": report.first_epoch_loss,
        "last_epoch_loss": report.last_epoch_loss,
        "best_val_sr": report.best_val_sr,
    }));
    Ok(())
}

fn evaluate(store: &Store, checkpoint: &str, split: Split, leaderboard: bool) -> Result<()> {
    let world = store.load_world(true)?;
    let (model, _) = store.load_model(checkpoint)?;
    let scores = candidate_scores(&model, &world, split)?;
    let rows = world
        .episodes(split)
        .par_iter()
        .zip(world.candidates(split))
        .zip(&scores)
        .map(|((ep, set), s)| {
            let graph = world.graph(ep.graph_id)?;
            let i = select_path(s).ok_or(Error::Empty("candidate set"))?;
            let selected = Trajectory::new(graph, set.paths[i].nodes.clone())?;
            let tour = if leaderboard {
                let explored: Vec<Vec<usize>> = set.paths.iter().map(|c| c.nodes.clone()).collect();
                Some(exploration_tour(graph, ep.start, &explored)?)
            } else {
                None
            };
            let m = compute_metrics(graph, &selected, ep, leaderboard, tour.as_ref())?;
            Ok((ep.episode_id.clone(), m))
        })
        .collect::<pathrank::Result<Vec<_>>>()?;
    let suffix = if leaderboard { "_leaderboard" } else { "" };
    let path = store
        .cfg
        .path(&store.cfg.paths.metrics)
        .join(format!("{}{suffix}.csv", split_name(split)));
    let mut w = store.create(&path)?;
    write_metrics_csv(&mut w, &rows, Some(&store.hash))?;
    w.flush()?;
    let s = summarize(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    emit(json!({
        "command": "evaluate",
        "config_hash": store.hash,
        "split": split_name(split),
        "leaderboard_mode": leaderboard,
        "metrics": path,
        "n": s.n,
        "sr": s.sr * 100.0,
        "osr": s.osr * 100.0,
        "ne": s.ne,
        "pl": s.pl,
        "spl": s.spl * 100.0,
    }));
    Ok(())
}

fn ensemble(store: &Store, checkpoint: &str, grid_step: f64) -> Result<()> {
    let world = store.load_world(true)?;
    let (model, _) = store.load_model(checkpoint)?;
    let split = Split::ValUnseen;
    let compat = candidate_scores(&model, &world, split)?;
    let sets = world.candidates(split);
    let follower: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| s.paths.iter().map(|c| c.logprob).collect())
        .collect();
    let success: Vec<Vec<bool>> = sets
        .iter()
        .map(|s| s.paths.iter().map(|c| c.success).collect())
        .collect();
    let scorers = [compat, follower];
    let best = ensemble_grid_search(&scorers, &success, grid_step)?;
    let report = json!({
        "weights": best.weights,
        "val_SR": best.val_sr,
        "scorers": ["compatibility", "follower"],
        "compatibility_only_SR": ensemble_sr(&scorers, &success, &[1.0, 0.0]),
        "follower_only_SR": ensemble_sr(&scorers, &success, &[0.0, 1.0]),
        "grid_step": grid_step,
        "config_hash": store.hash,
    });
    let path = store.cfg.path(&store.cfg.paths.ensemble);
    let mut w = store.create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    emit(json!({ "command": "ensemble", "report": path, "result": report }));
    Ok(())
}

fn analyze(store: &Store, checkpoint: &str, baseline: Option<&str>, n: usize) -> Result<()> {
    let world = store.load_world(false)?;
    let (model, _) = store.load_model(checkpoint)?;
    let vocab = &world.bench.vocab;
    let picked: Vec<_> = world
        .episodes(Split::ValUnseen)
        .iter()
        .filter_map(|ep| ep.instruction.goal_phrase_span().map(|span| (ep, span)))
        .take(n)
        .collect();
    if picked.is_empty() {
        bail!(Error::Empty("val-unseen episodes with a goal phrase"));
    }
    let studies = picked
        .par_iter()
        .map(|(ep, span)| {
            let seq = path_sequence(&world, ep.graph_id, &ep.path, &ep.instruction.tokens)?;
            let mut p = perturbation_study(&model, &seq, &ep.instruction, &[*span], vocab, &world.config.limits)?;
            Ok(p.remove(0))
        })
        .collect::<pathrank::Result<Vec<_>>>()?;

    let dir = store.cfg.path(&store.cfg.paths.analysis);
    let mut w = store.create(&dir.join("profiles.jsonl"))?;
    for ((ep, _), p) in picked.iter().zip(&studies) {
        for profile in [&p.before, &p.after] {
            let mut v: serde_json::Value = serde_json::from_str(&profile_json(profile, vocab)?)?;
            v["episode_id"] = json!(ep.episode_id);
            v["config_hash"] = json!(store.hash);
            writeln!(w, "{v}")?;
        }
    }
    w.flush()?;
    let mut w = store.create(&dir.join("histogram.csv"))?;
    writeln!(w, "# config_hash={}", store.hash)?;
    let labelled: Vec<(String, &_)> = picked
        .iter()
        .zip(&studies)
        .flat_map(|((ep, _), p)| [(ep.episode_id.clone(), &p.before), (ep.episode_id.clone(), &p.after)])
        .collect();
    write_histogram_csv(&mut w, &labelled)?;
    w.flush()?;

    let named: Vec<_> = studies.iter().filter(|p| !p.deleted_classes.is_empty()).collect();
    let decreased = named.iter().filter(|p| p.mass_change() < 0.0).count();
    let mut summary = json!({
        "config_hash": store.hash,
        "checkpoint": checkpoint,
        "episodes": studies.len(),
        "goal_mass_decreased": decreased,
        "goal_mass_decreased_fraction": decreased as f64 / named.len().max(1) as f64,
        "top1_changed": studies.iter().filter(|p| p.top1_changed()).count(),
    });
    if let Some(b) = baseline {
        let (other, _) = store.load_model(b)?;
        let env = &world.config.benchmark.env;
        let heldout: Vec<_> = picked
            .iter()
            .zip(&studies)
            .filter(|(_, p)| p.deleted_classes.iter().any(|&c| env.is_heldout(c)))
            .map(|((ep, _), _)| path_sequence(&world, ep.graph_id, &ep.path, &ep.instruction.tokens))
            .collect::<pathrank::Result<_>>()?;
        let report = curriculum_grounding_compare(&model, &other, &heldout, &|c| env.is_heldout(c))?;
        summary["grounding"] = json!({ "baseline": b, "report": report });
    }
    let mut w = store.create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    emit(json!({ "command": "analyze", "dir": dir, "summary": summary }));
    Ok(())
}

fn ablate(store: &Store, seeds: Vec<u64>) -> Result<()> {
    let cfg = store.cfg;
    if seeds.is_empty() {
        bail!(Error::Config("ablation needs at least one seed".into()));
    }
    let world = World::build(cfg.world.clone(), cfg.seed)?;
    let ab = AblationConfig {
        model: cfg.model_config()?,
        stage1: cfg.training.stage1.clone(),
        stage2: cfg.training.stage2.clone(),
        stage3: cfg.training.stage3.clone(),
        finetune: cfg.training.finetune.clone(),
    };
    let results = run_ablation(&world, &ab, &seeds)?;
    let path = cfg.path(&cfg.paths.ablation);
    let mut w = store.create(&path)?;
    write_ablation_csv(&mut w, &results, Some(&cfg.run_hash()))?;
    w.flush()?;
    let medians: serde_json::Map<_, _> = median_by_row(&results)
        .into_iter()
        .map(|(row, sr)| (row.label().to_string(), json!(sr * 100.0)))
        .collect();
    emit(json!({
        "command": "ablate-curriculum",
        "table": path,
        "seeds": seeds,
        "median_val_unseen_sr": medians,
    }));
    Ok(())
}
