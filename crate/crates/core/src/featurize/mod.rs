//! Panorama region features and multimodal input sequences.

mod cache;
mod dedup;
mod render;
mod sequence;

pub use cache::{read_panorama_cache, write_panorama_cache, CachedPanorama};
pub use dedup::{cosine_distance, dedup_regions, reduce, region_distance, DedupParams};
pub use render::{FeatureParams, FeatureSpace, VIEW_ELEVATIONS_DEG, VIEW_FOV_DEG, VIEW_HEADINGS};
pub use sequence::{
    assemble_path, assemble_sequence, assemble_text_pair, MultimodalSequence, PanoramaStep, SeqLimits, VisualToken,
};

use crate::envgraph::{wrap_pi, NavGraph};
use serde::{Deserialize, Serialize};

pub const SPATIAL_DIM: usize = 11;

/// One detected image region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub feature: Vec<f32>,
    /// Normalized (x1, y1, x2, y2).
    pub bbox: [f64; 4],
    /// Radians. Panorama frame after dedup; relative to the source view before.
    pub heading: f64,
    pub elevation: f64,
    pub detection_score: f64,
    /// Ground-truth class, used for masked-region targets and analysis only.
    pub landmark_class: u32,
}

/// A detection in one perspective view, angles relative to the view center.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDetection {
    pub region: Region,
    pub view_heading: f64,
    pub view_elevation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanoramaObservation {
    pub regions: Vec<Region>,
}

/// `[x1, y1, x2, y2, area, cos e, sin e, cos h_cur, sin h_cur, cos h_next, sin h_next]`.
pub fn spatial_vector(region: &Region, heading_cur: f64, heading_next: f64) -> [f64; SPATIAL_DIM] {
    let [x1, y1, x2, y2] = region.bbox;
    let e = region.elevation;
    let hc = wrap_pi(region.heading - heading_cur);
    let hn = wrap_pi(region.heading - heading_next);
    [
        x1,
        y1,
        x2,
        y2,
        (x2 - x1) * (y2 - y1),
        e.cos(),
        e.sin(),
        hc.cos(),
        hc.sin(),
        hn.cos(),
        hn.sin(),
    ]
}

/// Spatial vector at the final panorama, which has no next heading.
pub fn last_step_spatial(region: &Region, heading_cur: f64) -> [f64; SPATIAL_DIM] {
    spatial_vector(region, heading_cur, heading_cur)
}

/// Deduplicated observation for every node of a graph, in node order.
pub fn featurize_graph(space: &FeatureSpace, graph: &NavGraph, params: &DedupParams) -> Vec<PanoramaObservation> {
    (0..graph.len())
        .map(|v| dedup_regions(&space.render(graph, v), params))
        .collect()
}

#[cfg(test)]
mod tests;
