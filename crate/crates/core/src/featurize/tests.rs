use super::*;
use crate::envgraph::{generate_environment, wrap_pi, EnvKind, EnvParams, Landmark, NavGraph, Node, Trajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

fn region(heading: f64, elevation: f64, bbox: [f64; 4]) -> Region {
    Region {
        feature: vec![1.0, 2.0],
        bbox,
        heading,
        elevation,
        detection_score: 0.5,
        landmark_class: 0,
    }
}

#[test]
fn spatial_zero_angle_case() {
    let r = region(0.0, 0.0, [0.0, 0.0, 1.0, 1.0]);
    let s = spatial_vector(&r, 0.0, 0.0);
    assert_eq!(s, [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn spatial_quarter_turn() {
    let r = region(FRAC_PI_2, 0.0, [0.2, 0.2, 0.4, 0.5]);
    let s = spatial_vector(&r, 0.0, 0.0);
    assert!((s[7]).abs() < 1e-12 && (s[8] - 1.0).abs() < 1e-12);
    assert!((s[9]).abs() < 1e-12 && (s[10] - 1.0).abs() < 1e-12);
    assert!((s[4] - 0.06).abs() < 1e-12);
    assert_eq!(last_step_spatial(&r, 0.3), spatial_vector(&r, 0.3, 0.3));
}

#[test]
fn spatial_round_trip_recovers_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let h = rng.random_range(0.0..2.0 * PI);
        let e = rng.random_range(-1.2..1.2);
        let hc = rng.random_range(-10.0..10.0);
        let hn = rng.random_range(-10.0..10.0);
        let s = spatial_vector(&region(h, e, [0.1, 0.1, 0.2, 0.2]), hc, hn);
        assert!((s[6].atan2(s[5]) - e).abs() < 1e-6);
        assert!(wrap_pi(s[8].atan2(s[7]) - (h - hc)).abs() < 1e-6);
        assert!(wrap_pi(s[10].atan2(s[9]) - (h - hn)).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn spatial_pairs_are_unit_and_equivariant(
        h in -7.0f64..7.0, e in -1.5f64..1.5, hc in -7.0f64..7.0, hn in -7.0f64..7.0, delta in -7.0f64..7.0,
        x1 in 0.0f64..0.5, y1 in 0.0f64..0.5, w in 0.01f64..0.5, hgt in 0.01f64..0.5,
    ) {
        let bbox = [x1, y1, x1 + w, y1 + hgt];
        let s = spatial_vector(&region(h, e, bbox), hc, hn);
        for k in [5, 7, 9] {
            prop_assert!((s[k].hypot(s[k + 1]) - 1.0).abs() < 1e-6);
        }
        prop_assert!((s[4] - w * hgt).abs() < 1e-12);
        let t = spatial_vector(&region(h + delta, e, bbox), hc + delta, hn);
        prop_assert!((s[7] - t[7]).abs() < 1e-9 && (s[8] - t[8]).abs() < 1e-9);
    }
}

fn random_panorama(rng: &mut ChaCha8Rng, n: usize) -> Vec<RawDetection> {
    let protos: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let centers: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..n)
        .map(|_| {
            let p = &protos[rng.random_range(0..protos.len())];
            let feature = p.iter().map(|&x| x + rng.random_range(-0.05f32..0.05)).collect();
            let view_heading = (rng.random_range(0..12) as f64) * PI / 6.0;
            let target = centers[rng.random_range(0..centers.len())] + rng.random_range(-0.05..0.05);
            RawDetection {
                region: Region {
                    feature,
                    bbox: [0.1, 0.2, 0.3, 0.4],
                    heading: wrap_pi(target - view_heading).clamp(-0.4, 0.4),
                    elevation: rng.random_range(-0.3..0.3),
                    detection_score: (rng.random_range(0..5) as f64) / 4.0,
                    landmark_class: rng.random_range(0..3),
                },
                view_heading,
                view_elevation: [-PI / 6.0, 0.0, PI / 6.0][rng.random_range(0..3)],
            }
        })
        .collect()
}

/// Independent greedy reference: fixed distance matrix over original indices.
fn brute_force_dedup(raw: &[RawDetection], p: &DedupParams) -> Vec<Region> {
    let cutoff = p.center_cutoff_deg * PI / 180.0;
    let mut cands: Vec<Region> = Vec::new();
    for d in raw {
        if d.region.heading.abs() <= cutoff && d.region.elevation.abs() <= cutoff {
            cands.push(d.to_panorama_frame());
        }
    }
    if cands.is_empty() {
        let mut best = 0;
        for (i, d) in raw.iter().enumerate() {
            let off = |d: &RawDetection| d.region.heading.abs().max(d.region.elevation.abs());
            if off(d) < off(&raw[best]) {
                best = i;
            }
        }
        cands.push(raw[best].to_panorama_frame());
    }
    let n = cands.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let a = &cands[i];
            let b = &cands[j];
            let num: f64 = a
                .feature
                .iter()
                .zip(&b.feature)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            let na: f64 = a.feature.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.feature.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let mut dh = (a.heading - b.heading).abs() % (2.0 * PI);
            if dh > PI {
                dh = 2.0 * PI - dh;
            }
            dist[i][j] = (1.0 - num / (na * nb)) + dh + (a.elevation - b.elevation).abs();
        }
    }
    let mut alive = vec![true; n];
    loop {
        let live: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
        let mut best: Option<(usize, usize)> = None;
        for &i in &live {
            for &j in &live {
                if j <= i {
                    continue;
                }
                match best {
                    None => best = Some((i, j)),
                    Some((bi, bj)) if dist[i][j] < dist[bi][bj] => best = Some((i, j)),
                    _ => {}
                }
            }
        }
        let Some((i, j)) = best else { break };
        if dist[i][j] > p.sim_threshold && live.len() <= p.k_max {
            break;
        }
        let loser = if cands[i].detection_score < cands[j].detection_score {
            i
        } else {
            j
        };
        alive[loser] = false;
    }
    (0..n).filter(|&i| alive[i]).map(|i| cands[i].clone()).collect()
}

#[test]
fn dedup_matches_brute_force_on_random_panoramas() {
    let p = DedupParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let raw = random_panorama(&mut rng, 12);
        let out = dedup_regions(&raw, &p);
        assert_eq!(out.regions, brute_force_dedup(&raw, &p));
    }
}

#[test]
fn dedup_is_idempotent_and_bounded() {
    let p = DedupParams {
        k_max: 4,
        ..DedupParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let raw = random_panorama(&mut rng, 12);
        let once = dedup_regions(&raw, &p);
        assert!(!once.regions.is_empty() && once.regions.len() <= p.k_max);
        for i in 0..once.regions.len() {
            for j in i + 1..once.regions.len() {
                assert!(region_distance(&once.regions[i], &once.regions[j]) > p.sim_threshold);
            }
        }
        let twice = reduce(once.regions.clone(), &p);
        assert_eq!(once, twice);
    }
}

#[test]
fn generated_panoramas_keep_one_region_per_landmark() {
    let env = EnvParams::default();
    let g = generate_environment(&env, EnvKind::Unseen, 1000, 5).unwrap();
    let fs = FeatureSpace::new(FeatureParams::default(), env.landmark_vocab_size, 2);
    let panos = featurize_graph(&fs, &g, &DedupParams::default());
    for (v, obs) in panos.iter().enumerate() {
        let mut got: Vec<u32> = obs.regions.iter().map(|r| r.landmark_class).collect();
        let mut want: Vec<u32> = g.nodes[v].landmarks.iter().map(|l| l.class).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "node {v}");
    }
}

fn two_node_world() -> (NavGraph, Vec<PanoramaObservation>) {
    let lm = |class| Landmark {
        class,
        heading: 1.0,
        elevation: 0.0,
        bbox: [0.1, 0.1, 0.2, 0.2],
    };
    let nodes = vec![
        Node {
            id: 0,
            xyz: [0.0, 0.0, 0.0],
            landmarks: vec![lm(0)],
        },
        Node {
            id: 1,
            xyz: [3.0, 0.0, 0.0],
            landmarks: vec![lm(1)],
        },
    ];
    let g = NavGraph::new(0, nodes, vec![(0, 1)]).unwrap();
    let fs = FeatureSpace::new(FeatureParams::default(), 2, 1);
    let panos = featurize_graph(&fs, &g, &DedupParams::default());
    (g, panos)
}

#[test]
fn token_counts_and_layout() {
    let obs = PanoramaObservation {
        regions: vec![
            region(0.0, 0.0, [0.0, 0.0, 1.0, 1.0]),
            region(1.0, 0.0, [0.0, 0.0, 1.0, 1.0]),
        ],
    };
    let step = PanoramaStep {
        obs: &obs,
        heading_cur: 0.0,
        heading_next: None,
    };
    let seq = assemble_sequence(&[step], &[10, 11, 12], &SeqLimits::default()).unwrap();
    assert_eq!(seq.n_visual(), 3);
    assert_eq!(seq.n_text(), 5);
    assert!(seq.visual[0].is_img);
    assert_eq!(seq.region_positions(), vec![1, 2]);
    assert_eq!(seq.text[0], crate::envgraph::vocab::CLS);
    assert_eq!(seq.text[4], crate::envgraph::vocab::SEP);
}

#[test]
fn overflow_is_an_error() {
    let (g, panos) = two_node_world();
    let t = Trajectory::new(&g, vec![0, 1, 0, 1]).unwrap();
    let tight = SeqLimits {
        n_max: 3,
        ..SeqLimits::default()
    };
    assert!(matches!(
        assemble_path(&g, &t, &panos, &[7], &tight),
        Err(crate::Error::Truncation { .. })
    ));
    let long = vec![7u32; 47];
    assert!(matches!(
        assemble_path(
            &g,
            &Trajectory::new(&g, vec![0]).unwrap(),
            &panos,
            &long,
            &SeqLimits::default()
        ),
        Err(crate::Error::Truncation { .. })
    ));
}

#[test]
fn panorama_index_follows_path_order() {
    let (g, panos) = two_node_world();
    let limits = SeqLimits::default();
    let fwd = assemble_path(&g, &Trajectory::new(&g, vec![0, 1]).unwrap(), &panos, &[7, 8], &limits).unwrap();
    let back = assemble_path(&g, &Trajectory::new(&g, vec![1, 0]).unwrap(), &panos, &[7, 8], &limits).unwrap();
    assert_ne!(fwd, back);
    let pano_of = |s: &MultimodalSequence, class| s.visual.iter().find(|t| t.class == Some(class)).unwrap().pano;
    assert_eq!(pano_of(&fwd, 0), 0);
    assert_eq!(pano_of(&back, 0), 1);
}

#[test]
fn cache_round_trip_is_exact() {
    let (g, panos) = two_node_world();
    let items: Vec<CachedPanorama> = panos
        .iter()
        .enumerate()
        .map(|(v, obs)| CachedPanorama {
            graph_id: g.graph_id,
            node_id: g.nodes[v].id,
            obs: obs.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    write_panorama_cache(&mut buf, &items, Some("h")).unwrap();
    let back = read_panorama_cache(&buf[..]).unwrap();
    assert_eq!(back, items);
}
