//! Greedy removal of redundant detections within one panorama.

use super::{PanoramaObservation, RawDetection, Region};
use crate::envgraph::{wrap_pi, wrap_two_pi};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    pub k_max: usize,
    pub center_cutoff_deg: f64,
    pub sim_threshold: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            k_max: 8,
            center_cutoff_deg: 20.0,
            sim_threshold: 0.1,
        }
    }
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - d / (na.sqrt() * nb.sqrt())
}

/// `(1 − cos) + |Δheading| + |Δelevation|`, angles in radians, heading wrapped.
pub fn region_distance(a: &Region, b: &Region) -> f64 {
    cosine_distance(&a.feature, &b.feature) + wrap_pi(a.heading - b.heading).abs() + (a.elevation - b.elevation).abs()
}

impl RawDetection {
    /// Angular offset from the source view center (Chebyshev over heading, elevation).
    pub fn central_offset(&self) -> f64 {
        self.region.heading.abs().max(self.region.elevation.abs())
    }

    /// The detection with angles moved into the panorama frame.
    pub fn to_panorama_frame(&self) -> Region {
        Region {
            heading: wrap_two_pi(self.view_heading + self.region.heading),
            elevation: (self.view_elevation + self.region.elevation).clamp(-FRAC_PI_2, FRAC_PI_2),
            ..self.region.clone()
        }
    }
}

/// Centrality filter, then greedy pair elimination.
///
/// While some pair is within `sim_threshold` or more than `k_max` regions
/// remain, the closest pair (lowest indices on ties) loses its lower-scoring
/// member (the higher index on a score tie).
pub fn dedup_regions(raw: &[RawDetection], params: &DedupParams) -> PanoramaObservation {
    let cutoff = params.center_cutoff_deg.to_radians();
    let mut kept: Vec<Region> = raw
        .iter()
        .filter(|d| d.central_offset() <= cutoff)
        .map(RawDetection::to_panorama_frame)
        .collect();
    if kept.is_empty() {
        if let Some(best) = raw.iter().enumerate().min_by(|a, b| {
            a.1.central_offset()
                .total_cmp(&b.1.central_offset())
                .then(a.0.cmp(&b.0))
        }) {
            kept.push(best.1.to_panorama_frame());
        }
    }
    reduce(kept, params)
}

/// The greedy loop alone, on regions already in the panorama frame.
pub fn reduce(mut kept: Vec<Region>, params: &DedupParams) -> PanoramaObservation {
    let k_max = params.k_max.max(1);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                let d = region_distance(&kept[i], &kept[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if d > params.sim_threshold && kept.len() <= k_max {
            break;
        }
        let drop = if kept[j].detection_score <= kept[i].detection_score {
            j
        } else {
            i
        };
        kept.remove(drop);
    }
    PanoramaObservation { regions: kept }
}
