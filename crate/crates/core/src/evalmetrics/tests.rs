use super::*;
use crate::envgraph::{generate_environment, generate_episodes, EnvKind, EnvParams, Vocab};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs distances by Bellman-Ford style relaxation over the edge list.
fn all_pairs(g: &NavGraph) -> Vec<Vec<f64>> {
    let n = g.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    let w = |a: usize, b: usize| {
        let (p, q) = (&g.nodes[a].xyz, &g.nodes[b].xyz);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    for src in 0..n {
        for _ in 0..n {
            for &(a, b) in g.edges() {
                let l = w(a, b);
                if d[src][a] + l < d[src][b] {
                    d[src][b] = d[src][a] + l;
                }
                if d[src][b] + l < d[src][a] {
                    d[src][a] = d[src][b] + l;
                }
            }
        }
    }
    d
}

fn reference(g: &NavGraph, d: &[Vec<f64>], walked: &[usize], start: usize, goal: usize) -> [f64; 5] {
    let mut pl = 0.0;
    for w in walked.windows(2) {
        let (p, q) = (&g.nodes[w[0]].xyz, &g.nodes[w[1]].xyz);
        pl += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    }
    let last = *walked.last().unwrap();
    let ne = d[last][goal];
    let sr = if ne < 3.0 { 1.0 } else { 0.0 };
    let mut osr = 0.0;
    for &v in walked {
        if d[v][goal] < 3.0 {
            osr = 1.0;
        }
    }
    let l = d[start][goal];
    let spl = sr * l / if pl > l { pl } else { l };
    [sr, osr, ne, pl, spl]
}

fn random_walk(g: &NavGraph, start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut nodes = vec![start];
    for _ in 0..len {
        let cur = *nodes.last().unwrap();
        let (next, _) = *g.neighbors(cur).choose(rng).unwrap();
        nodes.push(next);
    }
    nodes
}

#[test]
fn metrics_match_brute_force_reference() {
    let v = Vocab::new(24);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for gs in 0..5u64 {
        let g = generate_environment(&EnvParams::default(), EnvKind::Train, 0, gs).unwrap();
        let d = all_pairs(&g);
        let eps = generate_episodes(&g, &v, &Default::default(), 20, "m", gs).unwrap();
        for ep in &eps {
            let walk = if rng.random_bool(0.3) {
                ep.path.clone()
            } else {
                let n = rng.random_range(0..7);
                random_walk(&g, ep.start, n, &mut rng)
            };
            let sel = Trajectory::new(&g, walk.clone()).unwrap();
            let m = compute_metrics(&g, &sel, ep, false, None).unwrap();
            let r = reference(&g, &d, &walk, ep.start, ep.goal);
            let got = [m.sr, m.osr, m.ne, m.pl, m.spl];
            for k in 0..5 {
                assert!((got[k] - r[k]).abs() < 1e-9, "metric {k}: {} vs {}", got[k], r[k]);
            }
            assert!(m.spl <= m.sr && m.sr <= m.osr);
            assert!(m.ne >= 0.0 && m.pl >= 0.0);

            // Leaderboard mode: an out-and-back exploration tour.
            let mut tour = random_walk(&g, ep.start, 3, &mut rng);
            let back: Vec<usize> = tour.iter().rev().skip(1).copied().collect();
            tour.extend(back);
            let ex = Trajectory::new(&g, tour.clone()).unwrap();
            let lm = compute_metrics(&g, &sel, ep, true, Some(&ex)).unwrap();
            let mut walked = tour[..tour.len() - 1].to_vec();
            walked.extend(&walk);
            let r = reference(&g, &d, &walked, ep.start, ep.goal);
            let got = [lm.sr, lm.osr, lm.ne, lm.pl, lm.spl];
            for k in 0..5 {
                assert!((got[k] - r[k]).abs() < 1e-9);
            }
            assert!(lm.pl >= m.pl);
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
}

#[test]
fn ground_truth_path_is_perfect_and_detour_halves_spl() {
    let v = Vocab::new(24);
    let g = generate_environment(&EnvParams::default(), EnvKind::Train, 0, 4).unwrap();
    let ep = &generate_episodes(&g, &v, &Default::default(), 1, "m", 1).unwrap()[0];
    let m = compute_metrics(&g, &ep.trajectory(&g).unwrap(), ep, false, None).unwrap();
    assert_eq!((m.sr, m.ne, m.spl, m.osr), (1.0, 0.0, 1.0, 1.0));

    // Walk the path, come back, walk it again: PL = 3l, still successful.
    let mut nodes = ep.path.clone();
    nodes.extend(ep.path.iter().rev().skip(1));
    nodes.extend(ep.path.iter().skip(1));
    let m = compute_metrics(&g, &Trajectory::new(&g, nodes).unwrap(), ep, false, None).unwrap();
    assert!((m.spl - 1.0 / 3.0).abs() < 1e-12);
    assert!(compute_metrics(
        &g,
        &ep.trajectory(&g).unwrap(),
        ep,
        true,
        Some(&Trajectory::new(&g, vec![ep.goal]).unwrap())
    )
    .is_err());
}

#[test]
fn exploration_tour_returns_to_start_and_lengthens_the_walk() {
    let v = Vocab::new(24);
    let g = generate_environment(&EnvParams::default(), EnvKind::Train, 0, 6).unwrap();
    let ep = &generate_episodes(&g, &v, &Default::default(), 1, "x", 2).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let paths: Vec<Vec<usize>> = (0..4).map(|_| random_walk(&g, ep.start, 3, &mut rng)).collect();
    let tour = exploration_tour(&g, ep.start, &paths).unwrap();
    assert_eq!(tour.start(), ep.start);
    assert_eq!(tour.last(), ep.start);
    for p in &paths {
        assert!(p.iter().all(|v| tour.nodes.contains(v)));
    }
    let sel = ep.trajectory(&g).unwrap();
    let plain = compute_metrics(&g, &sel, ep, false, None).unwrap();
    let lb = compute_metrics(&g, &sel, ep, true, Some(&tour)).unwrap();
    assert!(lb.pl >= plain.pl);
    assert_eq!(lb.sr, plain.sr);
    assert!(lb.spl <= plain.spl);
    let empty = exploration_tour(&g, ep.start, &[]).unwrap();
    assert_eq!(empty.nodes, vec![ep.start]);
    assert!(exploration_tour(&g, ep.start, &[vec![ep.goal]]).is_err());
}

#[test]
fn selection_ties_and_oracle() {
    assert_eq!(select_path(&[1.0, 1.0, 1.0]), Some(0));
    assert_eq!(select_path(&[0.0, 2.0, 2.0]), Some(1));
    assert_eq!(select_path(&[]), None);
    let flags = [false, false, true, true];
    let s: Vec<f64> = flags.iter().map(|&f| f64::from(u8::from(f))).collect();
    assert!(flags[select_path(&s).unwrap()]);
}

#[test]
fn grid_has_corners_and_sums_to_one() {
    let g2 = simplex_grid(2, 0.05);
    assert_eq!(g2.len(), 21);
    assert_eq!(g2[0], vec![1.0, 0.0]);
    assert!(g2.contains(&vec![0.0, 1.0]));
    let g3 = simplex_grid(3, 0.05);
    assert_eq!(g3.len(), 231);
    for w in &g3 {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for c in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        assert!(g3.contains(&c.to_vec()));
    }
}

#[test]
fn ensemble_dominates_single_scorers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut a, mut b, mut succ) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..60 {
        let n = rng.random_range(2..8);
        let f: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        a.push(
            f.iter()
                .map(|&x| f64::from(u8::from(x)) + rng.random_range(-1.2..1.2))
                .collect::<Vec<f64>>(),
        );
        b.push(
            f.iter()
                .map(|&x| f64::from(u8::from(x)) + rng.random_range(-1.2..1.2))
                .collect::<Vec<f64>>(),
        );
        succ.push(f);
    }
    let scorers = vec![a, b];
    let r = ensemble_grid_search(&scorers, &succ, 0.05).unwrap();
    let sa = ensemble_sr(&scorers, &succ, &[1.0, 0.0]);
    let sb = ensemble_sr(&scorers, &succ, &[0.0, 1.0]);
    assert!(r.val_sr >= sa.max(sb));
    assert_eq!(r, ensemble_grid_search(&scorers, &succ, 0.05).unwrap());
    let single = ensemble_grid_search(&scorers[..1], &succ, 0.05).unwrap();
    assert_eq!(single.weights, vec![1.0]);
    assert!(ensemble_grid_search(&scorers, &[], 0.05).is_err());
}

#[test]
fn z_normalization_is_scale_free() {
    let a = z_normalize(&[1.0, 2.0, 4.0]);
    let b = z_normalize(&[10.0, 20.0, 40.0]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(z_normalize(&[3.0, 3.0]), vec![0.0, 0.0]);
}

#[test]
fn csv_has_footer() {
    let rows = vec![
        (
            "a".to_string(),
            EpisodeMetrics {
                sr: 1.0,
                osr: 1.0,
                ne: 0.0,
                pl: 5.0,
                spl: 1.0,
            },
        ),
        (
            "b".to_string(),
            EpisodeMetrics {
                sr: 0.0,
                osr: 1.0,
                ne: 4.0,
                pl: 7.0,
                spl: 0.0,
            },
        ),
    ];
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows, Some("abc")).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "# config_hash=abc");
    assert_eq!(lines[1], "episode_id,sr,osr,ne,pl,spl");
    assert_eq!(lines[4], "mean,50.00,100.00,2.0000,6.0000,50.0000");
}
