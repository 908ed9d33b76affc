//! Synthetic region detections for a panorama.
//!
//! Each landmark class has a prototype feature vector; every landmark
//! instance perturbs it once and every detection perturbs it again. A
//! panorama is observed through 12 × 3 perspective views with an 80° field
//! of view, so a landmark is usually detected in several views.

use super::{RawDetection, Region};
use crate::envgraph::{wrap_pi, NavGraph};
use crate::seeds::derive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const VIEW_HEADINGS: usize = 12;
pub const VIEW_ELEVATIONS_DEG: [f64; 3] = [-30.0, 0.0, 30.0];
pub const VIEW_FOV_DEG: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub d_v: usize,
    pub instance_sigma: f64,
    pub detection_sigma: f64,
    pub angle_noise_rad: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            d_v: 64,
            instance_sigma: 0.3,
            detection_sigma: 0.05,
            angle_noise_rad: 0.01,
        }
    }
}

/// Class prototypes shared by every environment of one world seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    pub params: FeatureParams,
    pub prototypes: Vec<Vec<f32>>,
    seed: u64,
}

impl FeatureSpace {
    pub fn new(params: FeatureParams, n_classes: usize, seed: u64) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let prototypes = (0..n_classes)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[0xC1A55, c as u64]));
                (0..params.d_v).map(|_| normal.sample(&mut rng) as f32).collect()
            })
            .collect();
        Self {
            params,
            prototypes,
            seed,
        }
    }

    pub fn d_v(&self) -> usize {
        self.params.d_v
    }

    /// Feature of one landmark instance before per-detection noise.
    pub fn instance_feature(&self, class: u32, instance_seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
        let noise = Normal::new(0.0, self.params.instance_sigma).expect("finite sigma");
        self.prototypes[class as usize]
            .iter()
            .map(|&p| p + noise.sample(&mut rng) as f32)
            .collect()
    }

    /// All detections of the landmarks at `node`, in (view, landmark) order.
    pub fn render(&self, graph: &NavGraph, node: usize) -> Vec<RawDetection> {
        let n = &graph.nodes[node];
        let half_fov = (VIEW_FOV_DEG / 2.0).to_radians();
        let det_noise = Normal::new(0.0, self.params.detection_sigma).expect("finite sigma");
        let ang_noise = Normal::new(0.0, self.params.angle_noise_rad.max(1e-12)).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.seed, &[0xDE7, n.id as u64]));
        let instances: Vec<(Vec<f32>, f64)> = n
            .landmarks
            .iter()
            .enumerate()
            .map(|(k, lm)| {
                let s = derive(self.seed, &[0x1257, n.id as u64, k as u64]);
                let base = ChaCha8Rng::seed_from_u64(s ^ 1).random_range(0.55..0.95);
                (self.instance_feature(lm.class, s), base)
            })
            .collect();

        let mut out = Vec::new();
        for vh in 0..VIEW_HEADINGS {
            let view_heading = vh as f64 * 2.0 * PI / VIEW_HEADINGS as f64;
            for &ve_deg in &VIEW_ELEVATIONS_DEG {
                let view_elevation = ve_deg.to_radians();
                for (lm, (feat, base)) in n.landmarks.iter().zip(&instances) {
                    let dh = wrap_pi(lm.heading - view_heading);
                    let de = lm.elevation - view_elevation;
                    if dh.abs() > half_fov || de.abs() > half_fov {
                        continue;
                    }
                    let offset = dh.abs().max(de.abs()) / half_fov;
                    let feature = feat.iter().map(|&f| f + det_noise.sample(&mut rng) as f32).collect();
                    let score = (base - 0.3 * offset + 0.02 * det_noise.sample(&mut rng)).clamp(0.0, 1.0);
                    out.push(RawDetection {
                        region: Region {
                            feature,
                            bbox: lm.bbox,
                            heading: dh + ang_noise.sample(&mut rng),
                            elevation: de + ang_noise.sample(&mut rng),
                            detection_score: score,
                            landmark_class: lm.class,
                        },
                        view_heading,
                        view_elevation,
                    });
                }
            }
        }
        out
    }
}
