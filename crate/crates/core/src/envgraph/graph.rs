use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

/// Success radius around the goal, in meters (strict).
pub const SUCCESS_RADIUS_M: f64 = 3.0;

/// An object placed at a viewpoint, as seen from that viewpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub class: u32,
    /// World-frame heading from the viewpoint, radians in [0, 2π), counter-clockwise from +x.
    pub heading: f64,
    /// Radians relative to the horizon.
    pub elevation: f64,
    /// Normalized panorama box (x1, y1, x2, y2).
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Globally unique viewpoint id.
    pub id: u32,
    pub xyz: [f64; 3],
    pub landmarks: Vec<Landmark>,
}

/// Undirected navigation graph. Nodes are addressed by local index.
#[derive(Clone, Debug, PartialEq)]
pub struct NavGraph {
    pub graph_id: u32,
    pub nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    graph_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    nodes: Vec<Node>,
    edges: Vec<[u32; 2]>,
}

pub fn wrap_two_pi(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let r = wrap_two_pi(a);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Heading of the horizontal move from `a` to `b`, in [0, 2π).
pub fn heading_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    wrap_two_pi((b[1] - a[1]).atan2(b[0] - a[0]))
}

pub fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(PartialEq)]
struct QueueItem(f64, usize);

impl Eq for QueueItem {}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueItem {
    // Min-heap on distance, then node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl NavGraph {
    /// Builds a graph, validating indices, self-loops, duplicates and connectivity.
    pub fn new(graph_id: u32, nodes: Vec<Node>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Empty("graph nodes"));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut norm_edges = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Index {
                    op: "graph edge",
                    index: a.max(b),
                    len: n,
                });
            }
            if a == b {
                return Err(Error::Generation(format!("self-loop at node {a}")));
            }
            let (a, b) = (a.min(b), a.max(b));
            if norm_edges.contains(&(a, b)) {
                continue;
            }
            let len = euclidean(&nodes[a].xyz, &nodes[b].xyz);
            adjacency[a].push((b, len));
            adjacency[b].push((a, len));
            norm_edges.push((a, b));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(v, _)| v);
        }
        norm_edges.sort_unstable();
        let g = Self {
            graph_id,
            nodes,
            edges: norm_edges,
            adjacency,
        };
        if !g.is_connected() {
            return Err(Error::Generation(format!("graph {graph_id} is disconnected")));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors sorted by index, with edge lengths.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|&(v, _)| v == b)
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a].iter().find(|&&(v, _)| v == b).map(|&(_, l)| l)
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.nodes.len() as f64
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Dijkstra distances and predecessors from `src`.
    pub fn shortest_tree(&self, src: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(QueueItem(0.0, src));
        while let Some(QueueItem(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    prev[u] = Some(v);
                    heap.push(QueueItem(nd, u));
                }
            }
        }
        (dist, prev)
    }

    /// Shortest-path length in meters.
    pub fn geodesic(&self, a: usize, b: usize) -> Result<f64> {
        let n = self.nodes.len();
        if a >= n || b >= n {
            return Err(Error::Index {
                op: "geodesic",
                index: a.max(b),
                len: n,
            });
        }
        if a == b {
            return Ok(0.0);
        }
        let d = self.shortest_tree(a).0[b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unreachable { a, b })
        }
    }

    /// Shortest path as a node sequence, inclusive of both ends.
    pub fn shortest_path(&self, a: usize, b: usize) -> Result<Vec<usize>> {
        let (dist, prev) = self.shortest_tree(a);
        if !dist[b].is_finite() {
            return Err(Error::Unreachable { a, b });
        }
        let mut path = vec![b];
        let mut cur = b;
        while let Some(p) = prev[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Sum of edge lengths along consecutive nodes; `None` if a hop is not an edge.
    pub fn path_length(&self, nodes: &[usize]) -> Option<f64> {
        nodes.windows(2).map(|w| self.edge_length(w[0], w[1])).sum()
    }

    /// Counts of each landmark class over the whole graph.
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for node in &self.nodes {
            for lm in &node.landmarks {
                if (lm.class as usize) < n_classes {
                    counts[lm.class as usize] += 1;
                }
            }
        }
        counts
    }

    pub fn to_json(&self, config_hash: Option<&str>) -> Result<String> {
        let file = GraphFile {
            graph_id: self.graph_id,
            config_hash: config_hash.map(str::to_string),
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| [self.nodes[a].id, self.nodes[b].id])
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses a graph file, returning the embedded config hash if any.
    pub fn from_json(s: &str) -> Result<(Self, Option<String>)> {
        let file: GraphFile = serde_json::from_str(s)?;
        let index = |id: u32| {
            file.nodes
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| Error::Config(format!("edge references unknown node id {id}")))
        };
        let edges = file
            .edges
            .iter()
            .map(|&[a, b]| Ok((index(a)?, index(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let g = Self::new(file.graph_id, file.nodes, edges)?;
        Ok((g, file.config_hash))
    }
}

/// Pose at each trajectory step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub heading: f64,
    pub elevation: f64,
}

/// A walk through the graph starting at `nodes[0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nodes: Vec<usize>,
}

impl Trajectory {
    pub fn new(graph: &NavGraph, nodes: Vec<usize>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        for &v in &nodes {
            if v >= graph.len() {
                return Err(Error::Index {
                    op: "trajectory",
                    index: v,
                    len: graph.len(),
                });
            }
        }
        for w in nodes.windows(2) {
            if !graph.is_adjacent(w[0], w[1]) {
                return Err(Error::Invalid {
                    op: "trajectory",
                    msg: format!("nodes {} and {} are not adjacent", w[0], w[1]),
                });
            }
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn last(&self) -> usize {
        *self.nodes.last().expect("trajectory is non-empty")
    }

    /// Arrival heading at each node; the start faces its first move.
    pub fn poses(&self, graph: &NavGraph) -> Vec<Pose> {
        let xyz = |i: usize| &graph.nodes[self.nodes[i]].xyz;
        (0..self.nodes.len())
            .map(|i| {
                let heading = match i {
                    0 if self.nodes.len() > 1 => heading_between(xyz(0), xyz(1)),
                    0 => 0.0,
                    _ => heading_between(xyz(i - 1), xyz(i)),
                };
                Pose {
                    heading,
                    elevation: 0.0,
                }
            })
            .collect()
    }

    /// Heading of the move leaving step `i`, if there is one.
    pub fn next_heading(&self, graph: &NavGraph, i: usize) -> Option<f64> {
        (i + 1 < self.nodes.len())
            .then(|| heading_between(&graph.nodes[self.nodes[i]].xyz, &graph.nodes[self.nodes[i + 1]].xyz))
    }

    pub fn length_m(&self, graph: &NavGraph) -> f64 {
        graph.path_length(&self.nodes).unwrap_or(f64::INFINITY)
    }
}

/// True iff the trajectory stops strictly within the success radius (geodesic).
pub fn is_success(graph: &NavGraph, trajectory: &Trajectory, goal: usize) -> Result<bool> {
    Ok(graph.geodesic(trajectory.last(), goal)? < SUCCESS_RADIUS_M)
}
