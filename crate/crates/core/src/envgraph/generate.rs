//! Random geometric navigation graphs with landmark placements.

use super::graph::{euclidean, Landmark, NavGraph, Node};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Connection radius is this factor times `area / sqrt(n)`.
pub const RADIUS_FACTOR: f64 = 1.3;
const MIN_SEPARATION_M: f64 = 1.5;
const MAX_RETRIES: usize = 200;
const MIN_LANDMARK_SPACING_RAD: f64 = 0.35;

/// Which landmark classes an environment may contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Only classes that training instructions may reference.
    Train,
    /// Training classes mixed with held-out classes.
    Unseen,
    /// Every class uniformly (pretraining corpora).
    Web,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub n_nodes: usize,
    pub area_m: f64,
    pub landmark_vocab_size: usize,
    /// Fraction of classes reserved for unseen environments.
    pub heldout_fraction: f64,
    /// Probability a landmark in an unseen environment is a held-out class.
    pub heldout_share: f64,
    pub min_landmarks: usize,
    pub max_landmarks: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            n_nodes: 50,
            area_m: 30.0,
            landmark_vocab_size: 24,
            heldout_fraction: 0.25,
            heldout_share: 0.2,
            min_landmarks: 3,
            max_landmarks: 8,
        }
    }
}

impl EnvParams {
    pub fn n_heldout(&self) -> usize {
        ((self.landmark_vocab_size as f64) * self.heldout_fraction).round() as usize
    }

    /// Classes `[0, n_train)` are training classes; the rest are held out.
    pub fn n_train_classes(&self) -> usize {
        self.landmark_vocab_size - self.n_heldout()
    }

    pub fn is_heldout(&self, class: u32) -> bool {
        class as usize >= self.n_train_classes()
    }

    pub fn connection_radius(&self) -> f64 {
        RADIUS_FACTOR * self.area_m / (self.n_nodes as f64).sqrt()
    }

    pub fn sample_class<R: Rng>(&self, kind: EnvKind, rng: &mut R) -> u32 {
        let n_train = self.n_train_classes();
        let n_held = self.n_heldout();
        match kind {
            EnvKind::Train => rng.random_range(0..n_train) as u32,
            EnvKind::Unseen if n_held > 0 && rng.random_bool(self.heldout_share) => {
                (n_train + rng.random_range(0..n_held)) as u32
            }
            EnvKind::Unseen => rng.random_range(0..n_train) as u32,
            EnvKind::Web => rng.random_range(0..self.landmark_vocab_size) as u32,
        }
    }

    /// 3 to 8 landmarks with well-separated headings.
    pub fn sample_landmarks<R: Rng>(&self, kind: EnvKind, rng: &mut R) -> Vec<Landmark> {
        let count = rng.random_range(self.min_landmarks..=self.max_landmarks);
        let mut out: Vec<Landmark> = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count && attempts < 1000 {
            attempts += 1;
            let heading = rng.random_range(0.0..2.0 * PI);
            let clash = out.iter().any(|l| {
                let d = (l.heading - heading).rem_euclid(2.0 * PI);
                d.min(2.0 * PI - d) < MIN_LANDMARK_SPACING_RAD
            });
            if clash {
                continue;
            }
            let elevation = rng.random_range(-0.45..0.45);
            let w = rng.random_range(0.04..0.12);
            let h = rng.random_range(0.08..0.25);
            let cx = heading / (2.0 * PI);
            let cy = 0.5 - elevation / PI;
            let x1 = (cx - w / 2.0).clamp(0.0, 0.98);
            let y1 = (cy - h / 2.0).clamp(0.0, 0.98);
            let x2 = (cx + w / 2.0).clamp(x1 + 0.01, 1.0);
            let y2 = (cy + h / 2.0).clamp(y1 + 0.01, 1.0);
            out.push(Landmark {
                class: self.sample_class(kind, rng),
                heading,
                elevation,
                bbox: [x1, y1, x2, y2],
            });
        }
        out
    }
}

/// Deterministic in `seed`; node ids are `graph_id * 10_000 + index`.
pub fn generate_environment(params: &EnvParams, kind: EnvKind, graph_id: u32, seed: u64) -> Result<NavGraph> {
    if params.n_nodes < 2 {
        return Err(Error::Generation(format!(
            "need at least 2 nodes, got {}",
            params.n_nodes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = params.connection_radius();
    for _ in 0..MAX_RETRIES {
        let mut pts: Vec<[f64; 3]> = Vec::with_capacity(params.n_nodes);
        let mut guard = 0;
        while pts.len() < params.n_nodes && guard < params.n_nodes * 200 {
            guard += 1;
            let p = [
                rng.random_range(0.0..params.area_m),
                rng.random_range(0.0..params.area_m),
                0.0,
            ];
            if pts.iter().all(|q| euclidean(&p, q) >= MIN_SEPARATION_M) {
                pts.push(p);
            }
        }
        if pts.len() < params.n_nodes {
            continue;
        }
        let mut edges = Vec::new();
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if euclidean(&pts[a], &pts[b]) <= radius {
                    edges.push((a, b));
                }
            }
        }
        let nodes: Vec<Node> = pts
            .iter()
            .enumerate()
            .map(|(i, &xyz)| Node {
                id: graph_id * 10_000 + i as u32,
                xyz,
                landmarks: Vec::new(),
            })
            .collect();
        let Ok(mut graph) = NavGraph::new(graph_id, nodes, edges) else {
            continue;
        };
        for node in &mut graph.nodes {
            node.landmarks = params.sample_landmarks(kind, &mut rng);
        }
        return Ok(graph);
    }
    Err(Error::Generation(format!(
        "no connected graph after {MAX_RETRIES} attempts (n={}, area={})",
        params.n_nodes, params.area_m
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let p = EnvParams::default();
        let a = generate_environment(&p, EnvKind::Train, 3, 7).unwrap();
        let b = generate_environment(&p, EnvKind::Train, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(None).unwrap(), b.to_json(None).unwrap());
        let c = generate_environment(&p, EnvKind::Train, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_nodes_give_one_edge() {
        let p = EnvParams {
            n_nodes: 2,
            ..EnvParams::default()
        };
        let g = generate_environment(&p, EnvKind::Train, 0, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn rejects_single_node() {
        let p = EnvParams {
            n_nodes: 1,
            ..EnvParams::default()
        };
        assert!(generate_environment(&p, EnvKind::Train, 0, 1).is_err());
    }

    #[test]
    fn mean_degree_in_range_over_many_seeds() {
        let p = EnvParams::default();
        let mut total = 0.0;
        for seed in 0..100 {
            let g = generate_environment(&p, EnvKind::Train, 0, seed).unwrap();
            let d = g.mean_degree();
            assert!((3.0..=8.0).contains(&d), "seed {seed}: degree {d}");
            total += d;
        }
        let mean = total / 100.0;
        assert!((3.0..=8.0).contains(&mean));
    }

    #[test]
    fn invariants_hold() {
        let p = EnvParams::default();
        let g = generate_environment(&p, EnvKind::Unseen, 9, 42).unwrap();
        for &(a, b) in g.edges() {
            assert_ne!(a, b);
            let l = g.edge_length(a, b).unwrap();
            assert!((l - euclidean(&g.nodes[a].xyz, &g.nodes[b].xyz)).abs() < 1e-9);
        }
        for node in &g.nodes {
            assert!((3..=8).contains(&node.landmarks.len()));
            for lm in &node.landmarks {
                assert!(lm.bbox[0] < lm.bbox[2] && lm.bbox[1] < lm.bbox[3]);
            }
        }
    }

    #[test]
    fn train_environments_never_contain_heldout_classes() {
        let p = EnvParams::default();
        for seed in 0..10 {
            let g = generate_environment(&p, EnvKind::Train, 0, seed).unwrap();
            assert!(g
                .nodes
                .iter()
                .flat_map(|n| &n.landmarks)
                .all(|l| !p.is_heldout(l.class)));
        }
        let g = generate_environment(&p, EnvKind::Unseen, 0, 0).unwrap();
        assert!(g.nodes.iter().flat_map(|n| &n.landmarks).any(|l| p.is_heldout(l.class)));
    }
}
