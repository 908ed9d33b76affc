use crate::error::{Error, Result};
use crate::featurize::SeqLimits;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_lang_layers: usize,
    pub n_vis_layers: usize,
    pub n_coattn_layers: usize,
    pub n_heads: usize,
    /// Feed-forward inner width.
    pub intermediate: usize,
    pub vocab_size: usize,
    pub d_v: usize,
    pub k_max: usize,
    pub n_max: usize,
    pub l_max: usize,
    pub n_classes: usize,
    pub ln_eps: f64,
    pub init_std: f64,
}

impl ModelConfig {
    /// 64 hidden, 4 language layers, 2 visual layers, 2 co-attention layers, 4 heads.
    pub fn toy(vocab_size: usize, n_classes: usize) -> Self {
        Self {
            hidden: 64,
            n_lang_layers: 4,
            n_vis_layers: 2,
            n_coattn_layers: 2,
            n_heads: 4,
            intermediate: 128,
            vocab_size,
            d_v: 64,
            k_max: 8,
            n_max: 7,
            l_max: 48,
            n_classes,
            ln_eps: 1e-12,
            init_std: 0.02,
        }
    }

    /// Smaller variant sized for single-core training runs.
    pub fn desk(vocab_size: usize, n_classes: usize) -> Self {
        Self {
            hidden: 32,
            n_lang_layers: 2,
            n_vis_layers: 1,
            n_coattn_layers: 1,
            n_heads: 2,
            intermediate: 64,
            // Same σ·√hidden as the 0.02 convention at width 768.
            init_std: 0.1,
            ..Self::toy(vocab_size, n_classes)
        }
    }

    /// BERT-base sized streams with 6 co-attention layers. Constructible, not trained here.
    pub fn paper_scale(vocab_size: usize, n_classes: usize) -> Self {
        Self {
            hidden: 768,
            n_lang_layers: 12,
            n_vis_layers: 12,
            n_coattn_layers: 6,
            n_heads: 12,
            intermediate: 3072,
            vocab_size,
            d_v: 2048,
            k_max: 100,
            n_max: 7,
            l_max: 80,
            n_classes,
            ln_eps: 1e-12,
            init_std: 0.02,
        }
    }

    pub fn preset(name: &str, vocab_size: usize, n_classes: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(vocab_size, n_classes)),
            "desk" => Ok(Self::desk(vocab_size, n_classes)),
            "paper-scale" => Ok(Self::paper_scale(vocab_size, n_classes)),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.n_heads
            )));
        }
        if self.hidden == 0 || self.vocab_size == 0 || self.d_v == 0 || self.n_classes == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        if self.n_max == 0 || self.l_max < 2 || self.k_max == 0 {
            return Err(Error::Config("sequence limits must be positive".into()));
        }
        Ok(())
    }

    pub fn limits(&self) -> SeqLimits {
        SeqLimits {
            n_max: self.n_max,
            l_max: self.l_max,
            k_max: self.k_max,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }
}
