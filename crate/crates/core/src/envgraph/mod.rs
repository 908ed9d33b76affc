//! Navigation graphs, synthetic environments and instructions.

mod episodes;
mod generate;
mod graph;
mod instruction;
pub mod vocab;

pub use episodes::{
    generate_episodes, Benchmark, BenchmarkConfig, EpisodeParams, EpisodeSpec, Split, UNSEEN_GRAPH_ID_BASE,
};
pub use generate::{generate_environment, EnvKind, EnvParams, RADIUS_FACTOR};
pub use graph::{
    euclidean, heading_between, is_success, wrap_pi, wrap_two_pi, Landmark, NavGraph, Node, Pose, Trajectory,
    SUCCESS_RADIUS_M,
};
pub use instruction::{
    distinctive_landmark, hop_directions, synthesize_caption, synthesize_instruction, Clause, Direction, Instruction,
    FORWARD_CONE_RAD,
};
pub use vocab::{Vocab, Word};
