use super::{last_step_spatial, spatial_vector, PanoramaObservation, SPATIAL_DIM};
use crate::envgraph::vocab::{CLS, PAD, SEP};
use crate::envgraph::{NavGraph, Trajectory};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLimits {
    /// Panoramas per trajectory.
    pub n_max: usize,
    /// Text tokens including CLS and SEP.
    pub l_max: usize,
    /// Regions per panorama.
    pub k_max: usize,
}

impl Default for SeqLimits {
    fn default() -> Self {
        Self {
            n_max: 7,
            l_max: 48,
            k_max: 8,
        }
    }
}

/// One entry of the visual stream: an IMG marker or a region.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualToken {
    pub pano: usize,
    pub is_img: bool,
    /// Empty for IMG markers.
    pub feature: Vec<f32>,
    pub spatial: [f64; SPATIAL_DIM],
    pub class: Option<u32>,
}

/// `<IMG> r(1)… <IMG> r(2)… | <CLS> w… <SEP>` with a key mask on the text side.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSequence {
    pub text: Vec<u32>,
    pub text_mask: Vec<bool>,
    pub visual: Vec<VisualToken>,
}

impl MultimodalSequence {
    pub fn n_text(&self) -> usize {
        self.text.len()
    }

    pub fn n_visual(&self) -> usize {
        self.visual.len()
    }

    pub fn n_panoramas(&self) -> usize {
        self.visual.iter().filter(|t| t.is_img).count()
    }

    /// Visual-stream positions of region tokens, in (panorama, region) order.
    pub fn region_positions(&self) -> Vec<usize> {
        (0..self.visual.len()).filter(|&i| !self.visual[i].is_img).collect()
    }

    /// Appends masked-out padding tokens to the text side.
    pub fn padded(&self, extra: usize) -> Self {
        let mut s = self.clone();
        s.text.extend(std::iter::repeat_n(PAD, extra));
        s.text_mask.extend(std::iter::repeat_n(false, extra));
        s
    }

    /// Replaces the text side with `CLS tokens SEP`.
    pub fn with_text(&self, tokens: &[u32], limits: &SeqLimits) -> Result<Self> {
        let text = wrap_text(tokens, limits)?;
        Ok(Self {
            text_mask: vec![true; text.len()],
            text,
            visual: self.visual.clone(),
        })
    }
}

/// A panorama with the agent's current and next heading there.
#[derive(Clone, Copy, Debug)]
pub struct PanoramaStep<'a> {
    pub obs: &'a PanoramaObservation,
    pub heading_cur: f64,
    pub heading_next: Option<f64>,
}

fn wrap_text(tokens: &[u32], limits: &SeqLimits) -> Result<Vec<u32>> {
    if tokens.len() + 2 > limits.l_max {
        return Err(Error::Truncation {
            what: "text tokens",
            len: tokens.len() + 2,
            max: limits.l_max,
        });
    }
    let mut text = Vec::with_capacity(tokens.len() + 2);
    text.push(CLS);
    text.extend_from_slice(tokens);
    text.push(SEP);
    Ok(text)
}

pub fn assemble_sequence(steps: &[PanoramaStep], tokens: &[u32], limits: &SeqLimits) -> Result<MultimodalSequence> {
    if steps.len() > limits.n_max {
        return Err(Error::Truncation {
            what: "panoramas",
            len: steps.len(),
            max: limits.n_max,
        });
    }
    let text = wrap_text(tokens, limits)?;
    let mut visual = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        if step.obs.regions.len() > limits.k_max {
            return Err(Error::Truncation {
                what: "regions per panorama",
                len: step.obs.regions.len(),
                max: limits.k_max,
            });
        }
        visual.push(VisualToken {
            pano: i,
            is_img: true,
            feature: Vec::new(),
            spatial: [0.0; SPATIAL_DIM],
            class: None,
        });
        for r in &step.obs.regions {
            let spatial = match step.heading_next {
                Some(h) => spatial_vector(r, step.heading_cur, h),
                None => last_step_spatial(r, step.heading_cur),
            };
            visual.push(VisualToken {
                pano: i,
                is_img: false,
                feature: r.feature.clone(),
                spatial,
                class: Some(r.landmark_class),
            });
        }
    }
    Ok(MultimodalSequence {
        text_mask: vec![true; text.len()],
        text,
        visual,
    })
}

/// Path-instruction pair; `panoramas` holds one observation per graph node.
pub fn assemble_path(
    graph: &NavGraph,
    path: &Trajectory,
    panoramas: &[PanoramaObservation],
    tokens: &[u32],
    limits: &SeqLimits,
) -> Result<MultimodalSequence> {
    if path.len() > limits.n_max {
        return Err(Error::Truncation {
            what: "panoramas",
            len: path.len(),
            max: limits.n_max,
        });
    }
    let poses = path.poses(graph);
    let steps: Vec<PanoramaStep> = path
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &v)| PanoramaStep {
            obs: &panoramas[v],
            heading_cur: poses[i].heading,
            heading_next: path.next_heading(graph, i),
        })
        .collect();
    assemble_sequence(&steps, tokens, limits)
}

/// Text-only `CLS a SEP b SEP` input (empty visual stream).
pub fn assemble_text_pair(a: &[u32], b: &[u32], limits: &SeqLimits) -> Result<MultimodalSequence> {
    let mut tokens = a.to_vec();
    tokens.push(SEP);
    tokens.extend_from_slice(b);
    let text = wrap_text(&tokens, limits)?;
    Ok(MultimodalSequence {
        text_mask: vec![true; text.len()],
        text,
        visual: Vec::new(),
    })
}
