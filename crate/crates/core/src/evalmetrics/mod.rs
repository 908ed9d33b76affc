//! Navigation metrics, path selection and scorer ensembling.

use crate::envgraph::{EpisodeSpec, NavGraph, Trajectory, SUCCESS_RADIUS_M};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Per-episode metrics. SR, OSR and SPL are fractions in [0, 1]; NE and PL are meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub sr: f64,
    pub osr: f64,
    pub ne: f64,
    pub pl: f64,
    pub spl: f64,
}

/// Means over episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub sr: f64,
    pub osr: f64,
    pub ne: f64,
    pub pl: f64,
    pub spl: f64,
}

/// Metrics of `selected`; in leaderboard mode `exploration` (which must end at
/// the start node) is walked first and counts toward PL and OSR.
pub fn compute_metrics(
    graph: &NavGraph,
    selected: &Trajectory,
    episode: &EpisodeSpec,
    leaderboard_mode: bool,
    exploration: Option<&Trajectory>,
) -> Result<EpisodeMetrics> {
    if selected.is_empty() {
        return Err(Error::Empty("selected trajectory"));
    }
    let mut walked: Vec<usize> = Vec::new();
    if leaderboard_mode {
        if let Some(ex) = exploration {
            if ex.last() != selected.start() {
                return Err(Error::Invalid {
                    op: "compute_metrics",
                    msg: "exploration path must end where the selected path starts".into(),
                });
            }
            walked.extend_from_slice(&ex.nodes[..ex.len() - 1]);
        }
    }
    walked.extend_from_slice(&selected.nodes);
    let pl = graph.path_length(&walked).ok_or_else(|| Error::Invalid {
        op: "compute_metrics",
        msg: "trajectory steps between non-adjacent nodes".into(),
    })?;
    let (to_goal, _) = graph.shortest_tree(episode.goal);
    let ne = to_goal[selected.last()];
    let sr = f64::from(u8::from(ne < SUCCESS_RADIUS_M));
    let osr = f64::from(u8::from(walked.iter().any(|&v| to_goal[v] < SUCCESS_RADIUS_M)));
    let l = to_goal[episode.start];
    let spl = if sr > 0.0 { l / pl.max(l) } else { 0.0 };
    Ok(EpisodeMetrics { sr, osr, ne, pl, spl })
}

/// Walk that follows every explored path from `start` and returns to `start`
/// along a shortest path after each one. Ends at `start`.
pub fn exploration_tour(graph: &NavGraph, start: usize, paths: &[Vec<usize>]) -> Result<Trajectory> {
    let mut nodes = vec![start];
    for p in paths {
        if p.first() != Some(&start) {
            return Err(Error::Invalid {
                op: "exploration_tour",
                msg: "every explored path must begin at the start node".into(),
            });
        }
        nodes.extend_from_slice(&p[1..]);
        let back = graph.shortest_path(*p.last().expect("non-empty"), start)?;
        nodes.extend_from_slice(&back[1..]);
    }
    Trajectory::new(graph, nodes)
}

pub fn summarize(ms: &[EpisodeMetrics]) -> MetricsSummary {
    let n = ms.len();
    if n == 0 {
        return MetricsSummary::default();
    }
    let mean = |f: fn(&EpisodeMetrics) -> f64| ms.iter().map(f).sum::<f64>() / n as f64;
    MetricsSummary {
        n,
        sr: mean(|m| m.sr),
        osr: mean(|m| m.osr),
        ne: mean(|m| m.ne),
        pl: mean(|m| m.pl),
        spl: mean(|m| m.spl),
    }
}

/// Index of the highest score; ties go to the earliest candidate.
pub fn select_path(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Per-set z-normalization; a constant set maps to zeros.
pub fn z_normalize(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    if scores.is_empty() {
        return Vec::new();
    }
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - mean) / sd).collect()
}

/// Simplex points with coordinates that are multiples of `step` (corners included).
pub fn simplex_grid(dims: usize, step: f64) -> Vec<Vec<f64>> {
    let k = (1.0 / step).round() as usize;
    fn rec(dims: usize, left: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if dims == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / k as f64).collect());
            cur.pop();
            return;
        }
        for i in (0..=left).rev() {
            cur.push(i);
            rec(dims - 1, left - i, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if dims > 0 {
        rec(dims, k, k, &mut Vec::new(), &mut out);
    }
    out
}

/// Scores of one scorer: one vector per episode, one entry per candidate.
pub type ScorerOutput = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub weights: Vec<f64>,
    #[serde(rename = "val_SR")]
    pub val_sr: f64,
}

/// Combined per-candidate scores `Σ wᵢ·z(sᵢ)` for one episode.
pub fn combine(scorers: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let n = scorers.first().map_or(0, |s| s.len());
    let mut out = vec![0.0; n];
    for (s, &w) in scorers.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, z) in out.iter_mut().zip(z_normalize(s)) {
            *o += w * z;
        }
    }
    out
}

/// Success rate of argmax selection under fixed weights.
pub fn ensemble_sr(scorers: &[ScorerOutput], success: &[Vec<bool>], weights: &[f64]) -> f64 {
    let hits: usize = (0..success.len())
        .filter(|&e| {
            let per: Vec<&[f64]> = scorers.iter().map(|s| s[e].as_slice()).collect();
            select_path(&combine(&per, weights)).is_some_and(|i| success[e][i])
        })
        .count();
    hits as f64 / success.len() as f64
}

/// Weights on the simplex grid maximizing SR; the first maximizer wins ties.
pub fn ensemble_grid_search(scorers: &[ScorerOutput], success: &[Vec<bool>], grid_step: f64) -> Result<EnsembleReport> {
    if success.is_empty() {
        return Err(Error::Empty("ensemble episodes"));
    }
    if scorers.is_empty() || scorers.len() > 3 {
        return Err(Error::Invalid {
            op: "ensemble_grid_search",
            msg: format!("expected 1 to 3 scorers, got {}", scorers.len()),
        });
    }
    for s in scorers {
        if s.len() != success.len() || s.iter().zip(success).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Invalid {
                op: "ensemble_grid_search",
                msg: "scorer output does not match candidate sets".into(),
            });
        }
        if s.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: "ensemble_grid_search",
            });
        }
    }
    let mut best = EnsembleReport {
        weights: Vec::new(),
        val_sr: f64::NEG_INFINITY,
    };
    for w in simplex_grid(scorers.len(), grid_step) {
        let sr = ensemble_sr(scorers, success, &w);
        if sr > best.val_sr {
            best = EnsembleReport { weights: w, val_sr: sr };
        }
    }
    Ok(best)
}

/// One row per episode, then a `mean` footer row. SR, OSR and SPL are written ×100.
pub fn write_metrics_csv<W: Write>(
    mut w: W,
    rows: &[(String, EpisodeMetrics)],
    config_hash: Option<&str>,
) -> Result<()> {
    if let Some(h) = config_hash {
        writeln!(w, "# config_hash={h}")?;
    }
    writeln!(w, "episode_id,sr,osr,ne,pl,spl")?;
    for (id, m) in rows {
        writeln!(
            w,
            "{id},{:.2},{:.2},{:.4},{:.4},{:.4}",
            m.sr * 100.0,
            m.osr * 100.0,
            m.ne,
            m.pl,
            m.spl * 100.0
        )?;
    }
    let ms: Vec<EpisodeMetrics> = rows.iter().map(|r| r.1).collect();
    let s = summarize(&ms);
    writeln!(
        w,
        "mean,{:.2},{:.2},{:.4},{:.4},{:.4}",
        s.sr * 100.0,
        s.osr * 100.0,
        s.ne,
        s.pl,
        s.spl * 100.0
    )?;
    Ok(())
}

#[cfg(test)]
mod tests;
