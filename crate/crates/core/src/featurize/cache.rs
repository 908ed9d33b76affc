//! JSONL cache of featurized panoramas; features are base64 little-endian f32.

use super::{PanoramaObservation, Region};
use crate::error::{Error, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Serialize, Deserialize)]
struct CachedRegion {
    bbox: [f64; 4],
    heading: f64,
    elevation: f64,
    detection_score: f64,
    landmark_class: u32,
    feature: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    graph_id: u32,
    node_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    regions: Vec<CachedRegion>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedPanorama {
    pub graph_id: u32,
    pub node_id: u32,
    pub obs: PanoramaObservation,
}

fn encode_f32(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(s: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Config(format!("bad base64 feature block: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Config(format!("feature block of {} bytes", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_panorama_cache<W: Write>(mut w: W, items: &[CachedPanorama], config_hash: Option<&str>) -> Result<()> {
    for it in items {
        let line = Line {
            graph_id: it.graph_id,
            node_id: it.node_id,
            config_hash: config_hash.map(str::to_string),
            regions: it
                .obs
                .regions
                .iter()
                .map(|r| CachedRegion {
                    bbox: r.bbox,
                    heading: r.heading,
                    elevation: r.elevation,
                    detection_score: r.detection_score,
                    landmark_class: r.landmark_class,
                    feature: encode_f32(&r.feature),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_panorama_cache<R: BufRead>(r: R) -> Result<Vec<CachedPanorama>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line)?;
        let regions = l
            .regions
            .into_iter()
            .map(|c| {
                Ok(Region {
                    feature: decode_f32(&c.feature)?,
                    bbox: c.bbox,
                    heading: c.heading,
                    elevation: c.elevation,
                    detection_score: c.detection_score,
                    landmark_class: c.landmark_class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(CachedPanorama {
            graph_id: l.graph_id,
            node_id: l.node_id,
            obs: PanoramaObservation { regions },
        });
    }
    Ok(out)
}
