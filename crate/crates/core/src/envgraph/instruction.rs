//! Template instructions describing a path through a graph.
//!
//! One clause per hop, joined by `then`:
//! `<verb> forward | turn left | turn right` optionally followed by
//! `past the <landmark>`; the last clause ends with
//! `and stop at the <goal landmark>`.
//!
//! Turn words come from the signed heading change between the arrival
//! heading and the next move: counter-clockwise (positive) is `left`.

use super::graph::{wrap_pi, NavGraph, Trajectory};
use super::vocab::{Vocab, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Turns within this many radians of straight ahead read as `forward`.
pub const FORWARD_CONE_RAD: f64 = std::f64::consts::PI / 6.0;

/// Probability an intermediate clause names a landmark.
const WAYPOINT_MENTION_P: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Left,
    Right,
}

impl Direction {
    pub fn from_turn(delta: f64) -> Self {
        let d = wrap_pi(delta);
        if d.abs() < FORWARD_CONE_RAD {
            Direction::Forward
        } else if d > 0.0 {
            Direction::Left
        } else {
            Direction::Right
        }
    }

    pub fn token(self) -> u32 {
        match self {
            Direction::Forward => Word::Forward.id(),
            Direction::Left => Word::Left.id(),
            Direction::Right => Word::Right.id(),
        }
    }

    pub fn from_token(t: u32) -> Option<Self> {
        match t {
            x if x == Word::Forward.id() => Some(Direction::Forward),
            x if x == Word::Left.id() => Some(Direction::Left),
            x if x == Word::Right.id() => Some(Direction::Right),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<u32>,
}

/// What a clause asks for, recovered from its tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Clause {
    pub direction: Option<Direction>,
    pub waypoint: Option<u32>,
    pub goal: Option<u32>,
    /// Token span `[start, end)` within the instruction.
    pub span: (usize, usize),
}

impl Instruction {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Splits on `then` and reads direction, waypoint and goal landmarks.
    pub fn clauses(&self, vocab: &Vocab) -> Vec<Clause> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 0..=self.tokens.len() {
            if i == self.tokens.len() || self.tokens[i] == Word::Then.id() {
                if i > start {
                    out.push(parse_clause(&self.tokens, start, i, vocab));
                }
                start = i + 1;
            }
        }
        out
    }

    /// Span of the terminal `stop at the <goal>` phrase, if present.
    pub fn goal_phrase_span(&self) -> Option<(usize, usize)> {
        let stop = self.tokens.iter().rposition(|&t| t == Word::Stop.id())?;
        let start = if stop > 0 && self.tokens[stop - 1] == Word::And.id() {
            stop - 1
        } else {
            stop
        };
        Some((start, (stop + 4).min(self.tokens.len())))
    }

    pub fn without_span(&self, span: (usize, usize)) -> Instruction {
        let mut tokens = self.tokens[..span.0].to_vec();
        tokens.extend_from_slice(&self.tokens[span.1.min(self.tokens.len())..]);
        Instruction { tokens }
    }
}

fn parse_clause(tokens: &[u32], start: usize, end: usize, vocab: &Vocab) -> Clause {
    let mut c = Clause {
        span: (start, end),
        ..Clause::default()
    };
    let mut after_stop = false;
    for &t in &tokens[start..end] {
        if let Some(d) = Direction::from_token(t) {
            c.direction.get_or_insert(d);
        } else if t == Word::Stop.id() {
            after_stop = true;
        } else if let Some(class) = vocab.token_class(t) {
            if after_stop {
                c.goal = Some(class);
            } else {
                c.waypoint.get_or_insert(class);
            }
        }
    }
    c
}

/// The landmark class at `node` that is rarest across the graph (ties: lowest class).
pub fn distinctive_landmark(graph: &NavGraph, node: usize, n_classes: usize) -> Option<u32> {
    let counts = graph.class_counts(n_classes);
    graph.nodes[node]
        .landmarks
        .iter()
        .map(|l| l.class)
        .min_by_key(|&c| (counts.get(c as usize).copied().unwrap_or(usize::MAX), c))
}

/// Turn direction taken at each hop of a trajectory.
pub fn hop_directions(graph: &NavGraph, path: &Trajectory) -> Vec<Direction> {
    let poses = path.poses(graph);
    (0..path.len().saturating_sub(1))
        .map(|i| {
            let next = path.next_heading(graph, i).expect("hop exists");
            Direction::from_turn(next - poses[i].heading)
        })
        .collect()
}

pub fn synthesize_instruction(graph: &NavGraph, path: &Trajectory, vocab: &Vocab, seed: u64) -> Instruction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = vocab.n_classes();
    let goal = distinctive_landmark(graph, path.last(), n_classes);
    let mut tokens = Vec::new();
    let dirs = hop_directions(graph, path);
    let hops = dirs.len();

    for (i, dir) in dirs.iter().enumerate() {
        if i > 0 {
            tokens.push(Word::Then.id());
        }
        match dir {
            Direction::Forward => {
                let verb = [Word::Walk, Word::Go, Word::Head][rng.random_range(0..3)];
                tokens.extend([verb.id(), Word::Forward.id()]);
            }
            d => tokens.extend([Word::Turn.id(), d.token()]),
        }
        let last = i + 1 == hops;
        if !last && rng.random_bool(WAYPOINT_MENTION_P) {
            if let Some(c) = distinctive_landmark(graph, path.nodes[i + 1], n_classes) {
                tokens.extend([Word::Past.id(), Word::The.id(), vocab.class_token(c)]);
            }
        }
    }
    if let Some(c) = goal {
        if hops > 0 {
            tokens.push(Word::And.id());
        }
        tokens.extend([Word::Stop.id(), Word::At.id(), Word::The.id(), vocab.class_token(c)]);
    }
    Instruction { tokens }
}

/// Short caption naming some of the given landmark classes.
pub fn synthesize_caption(classes: &[u32], vocab: &Vocab) -> Instruction {
    let mut tokens = vec![Word::A.id(), Word::Room.id(), Word::With.id()];
    for (i, &c) in classes.iter().enumerate() {
        if i > 0 {
            tokens.push(Word::And.id());
        }
        tokens.extend([Word::A.id(), vocab.class_token(c)]);
    }
    Instruction { tokens }
}

#[cfg(test)]
mod tests {
    use super::super::graph::{Landmark, Node};
    use super::*;

    fn lm(class: u32) -> Landmark {
        Landmark {
            class,
            heading: 0.0,
            elevation: 0.0,
            bbox: [0.1, 0.1, 0.2, 0.2],
        }
    }

    fn graph(points: &[[f64; 2]], classes: &[u32], edges: Vec<(usize, usize)>) -> NavGraph {
        let nodes = points
            .iter()
            .zip(classes)
            .enumerate()
            .map(|(i, (p, &c))| Node {
                id: i as u32,
                xyz: [p[0], p[1], 0.0],
                landmarks: vec![lm(c)],
            })
            .collect();
        NavGraph::new(0, nodes, edges).unwrap()
    }

    #[test]
    fn straight_two_node_path_says_forward() {
        let g = graph(&[[0.0, 0.0], [3.0, 0.0]], &[1, 2], vec![(0, 1)]);
        let v = Vocab::new(8);
        let ins = synthesize_instruction(&g, &Trajectory::new(&g, vec![0, 1]).unwrap(), &v, 3);
        assert!(ins.tokens.contains(&Word::Forward.id()));
        assert!(!ins.tokens.contains(&Word::Left.id()));
        assert!(!ins.tokens.contains(&Word::Right.id()));
    }

    #[test]
    fn counter_clockwise_turn_is_left() {
        // East, then north: +90° at the second hop.
        let g = graph(&[[0.0, 0.0], [3.0, 0.0], [3.0, 3.0]], &[1, 2, 3], vec![(0, 1), (1, 2)]);
        let v = Vocab::new(8);
        let ins = synthesize_instruction(&g, &Trajectory::new(&g, vec![0, 1, 2]).unwrap(), &v, 0);
        let clauses = ins.clauses(&v);
        assert_eq!(clauses.len(), 2);
        assert_eq!(clauses[0].direction, Some(Direction::Forward));
        assert_eq!(clauses[1].direction, Some(Direction::Left));

        let g = graph(&[[0.0, 0.0], [3.0, 0.0], [3.0, -3.0]], &[1, 2, 3], vec![(0, 1), (1, 2)]);
        let ins = synthesize_instruction(&g, &Trajectory::new(&g, vec![0, 1, 2]).unwrap(), &v, 0);
        assert_eq!(ins.clauses(&v)[1].direction, Some(Direction::Right));
    }

    #[test]
    fn final_clause_names_goal_landmark() {
        let g = graph(&[[0.0, 0.0], [3.0, 0.0], [6.0, 0.0]], &[1, 1, 5], vec![(0, 1), (1, 2)]);
        let v = Vocab::new(8);
        for seed in 0..10 {
            let ins = synthesize_instruction(&g, &Trajectory::new(&g, vec![0, 1, 2]).unwrap(), &v, seed);
            let last = ins.clauses(&v).pop().unwrap();
            assert_eq!(last.goal, Some(5));
            let (s, e) = ins.goal_phrase_span().unwrap();
            assert_eq!(&ins.tokens[s..e], &v.encode("and stop at the plant")[..]);
        }
    }

    #[test]
    fn direction_thresholds() {
        assert_eq!(Direction::from_turn(0.0), Direction::Forward);
        assert_eq!(Direction::from_turn(0.5), Direction::Forward);
        assert_eq!(Direction::from_turn(1.0), Direction::Left);
        assert_eq!(Direction::from_turn(-1.0), Direction::Right);
        assert_eq!(Direction::from_turn(2.0 * std::f64::consts::PI - 1.0), Direction::Right);
    }
}
