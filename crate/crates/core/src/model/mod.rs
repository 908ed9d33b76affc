//! Two-stream transformer with co-attention and its output heads.
//!
//! Language tokens pass through `n_lang_layers` self-attention layers and
//! visual tokens through `n_vis_layers`; `n_coattn_layers` then exchange
//! information between the streams (each stream's queries attend over the
//! other stream) before a further self-attention layer per stream.

mod config;

pub use config::ModelConfig;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::featurize::{MultimodalSequence, SPATIAL_DIM};
use crate::scalar::{lit, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

const MASK_NEG: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    attn: Attention,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

#[derive(Clone, Copy, Debug)]
struct CrossBlock {
    attn: Attention,
    ln: Norm,
}

#[derive(Clone, Copy, Debug)]
struct CoLayer {
    text_from_vis: CrossBlock,
    vis_from_text: CrossBlock,
    text: Layer,
    vis: Layer,
}

#[derive(Clone, Debug)]
struct Ids {
    word: ParamId,
    pos: ParamId,
    text_ln: Norm,
    vis_proj: ParamId,
    vis_spatial: ParamId,
    vis_pano: ParamId,
    vis_type: ParamId,
    vis_ln: Norm,
    lang: Vec<Layer>,
    vis: Vec<Layer>,
    co: Vec<CoLayer>,
    score: ParamId,
    mlm: Linear,
    region: Linear,
    align: Linear,
    nsp: Linear,
}

/// Contextualized outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `L × hidden`.
    pub text: Var,
    /// `V × hidden`; `None` for a text-only input.
    pub visual: Option<Var>,
    /// `1 × hidden`.
    pub cls: Var,
    /// Output at the first IMG token, `1 × hidden`.
    pub img: Option<Var>,
}

/// Parameters plus the config that shaped them.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    ids: Ids,
}

struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    std: f64,
}

impl<T: Scalar> Init<'_, T> {
    fn normal(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, self.std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n)
            .map(|_| loop {
                // Truncated at two standard deviations.
                let x: f64 = dist.sample(&mut self.rng);
                if x.abs() <= 2.0 * self.std {
                    break T::from_f64c(x);
                }
            })
            .collect();
        self.store.insert(name, Array::new(shape, data)?)
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.insert(name, Array::filled(shape, T::from_f64c(v)))
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.normal(format!("{name}.w"), &[i, o])?,
            b: self.fill(format!("{name}.b"), &[o], 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, n: usize) -> Result<Norm> {
        Ok(Norm {
            g: self.fill(format!("{name}.g"), &[n], 1.0)?,
            b: self.fill(format!("{name}.b"), &[n], 0.0)?,
        })
    }

    fn attention(&mut self, name: &str, h: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), h, h)?,
            k: self.linear(&format!("{name}.k"), h, h)?,
            v: self.linear(&format!("{name}.v"), h, h)?,
            o: self.linear(&format!("{name}.o"), h, h)?,
        })
    }

    fn layer(&mut self, name: &str, h: usize, inter: usize) -> Result<Layer> {
        Ok(Layer {
            attn: self.attention(&format!("{name}.attn"), h)?,
            ln1: self.norm(&format!("{name}.ln1"), h)?,
            ff1: self.linear(&format!("{name}.ff1"), h, inter)?,
            ff2: self.linear(&format!("{name}.ff2"), inter, h)?,
            ln2: self.norm(&format!("{name}.ln2"), h)?,
        })
    }

    fn cross(&mut self, name: &str, h: usize) -> Result<CrossBlock> {
        Ok(CrossBlock {
            attn: self.attention(&format!("{name}.attn"), h)?,
            ln: self.norm(&format!("{name}.ln"), h)?,
        })
    }
}

fn build_ids<T: Scalar>(init: &mut Init<'_, T>, c: &ModelConfig) -> Result<Ids> {
    let h = c.hidden;
    Ok(Ids {
        word: init.normal("text.word".into(), &[c.vocab_size, h])?,
        pos: init.normal("text.pos".into(), &[c.l_max, h])?,
        text_ln: init.norm("text.ln", h)?,
        vis_proj: init.normal("vis.proj".into(), &[c.d_v, h])?,
        vis_spatial: init.normal("vis.spatial".into(), &[SPATIAL_DIM, h])?,
        vis_pano: init.normal("vis.pano".into(), &[c.n_max, h])?,
        vis_type: init.normal("vis.type".into(), &[2, h])?,
        vis_ln: init.norm("vis.ln", h)?,
        lang: (0..c.n_lang_layers)
            .map(|i| init.layer(&format!("lang.{i}"), h, c.intermediate))
            .collect::<Result<_>>()?,
        vis: (0..c.n_vis_layers)
            .map(|i| init.layer(&format!("visl.{i}"), h, c.intermediate))
            .collect::<Result<_>>()?,
        co: (0..c.n_coattn_layers)
            .map(|i| {
                Ok(CoLayer {
                    text_from_vis: init.cross(&format!("co.{i}.t2v"), h)?,
                    vis_from_text: init.cross(&format!("co.{i}.v2t"), h)?,
                    text: init.layer(&format!("co.{i}.text"), h, c.intermediate)?,
                    vis: init.layer(&format!("co.{i}.vis"), h, c.intermediate)?,
                })
            })
            .collect::<Result<_>>()?,
        score: init.normal("head.score.w".into(), &[h, 1])?,
        mlm: init.linear("head.mlm", h, c.vocab_size)?,
        region: init.linear("head.region", h, c.n_classes)?,
        align: init.linear("head.align", h, 1)?,
        nsp: init.linear("head.nsp", h, 1)?,
    })
}

fn row_mask<T: Scalar>(mask: &[bool]) -> Array<T> {
    let data = mask
        .iter()
        .map(|&m| if m { T::zero() } else { T::from_f64c(MASK_NEG) })
        .collect();
    Array::new(&[1, mask.len()], data).expect("1 × n mask")
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: config.init_std,
        };
        let ids = build_ids(&mut init, &config)?;
        Ok(Self { config, params, ids })
    }

    /// Rebinds a parameter store (e.g. a loaded checkpoint) to a config.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, value) in reference.params.iter() {
            let got = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    value.shape()
                )));
            }
        }
        // Ids are assigned in insertion order; reorder the loaded store to match.
        let mut ordered = ParamStore::new();
        for (name, _) in reference.params.iter() {
            ordered.insert(name, params.by_name(name).expect("checked above").clone())?;
        }
        Ok(Self {
            config,
            params: ordered,
            ids: reference.ids,
        })
    }

    /// Writes the checkpoint to `path` and the config next to it as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        std::fs::write(config_path(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(config_path(path))?)?;
        Self::from_params(config, ParamStore::load(path)?)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (name, v) in self.params.iter() {
            params.insert(name, v.cast()).expect("names are unique");
        }
        Model {
            config: self.config.clone(),
            params,
            ids: self.ids.clone(),
        }
    }

    fn p(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, l: Linear) -> Result<Var> {
        let w = self.p(tape, l.w);
        let b = self.p(tape, l.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, n: Norm) -> Result<Var> {
        let g = self.p(tape, n.g);
        let b = self.p(tape, n.b);
        tape.layernorm(x, g, b, T::from_f64c(self.config.ln_eps))
    }

    fn attention(&self, tape: &mut Tape<T>, a: &Attention, xq: Var, xkv: Var, mask: Option<Var>) -> Result<Var> {
        let q = self.linear(tape, xq, a.q)?;
        let k = self.linear(tape, xkv, a.k)?;
        let v = self.linear(tape, xkv, a.v)?;
        let d = self.config.head_dim();
        let scale = T::one() / lit::<T>(d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (s, e) = (h * d, (h + 1) * d);
            let (qh, kh, vh) = if self.config.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, s, e)?,
                    tape.slice_cols(k, s, e)?,
                    tape.slice_cols(v, s, e)?,
                )
            };
            let mut scores = tape.matmul_nt(qh, kh)?;
            scores = tape.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = tape.add_row(scores, m)?;
            }
            let probs = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        self.linear(tape, cat, a.o)
    }

    fn layer(&self, tape: &mut Tape<T>, l: &Layer, x: Var, mask: Option<Var>) -> Result<Var> {
        let a = self.attention(tape, &l.attn, x, x, mask)?;
        let r = tape.add(x, a)?;
        let x1 = self.norm(tape, r, l.ln1)?;
        let f = self.linear(tape, x1, l.ff1)?;
        let f = tape.gelu(f)?;
        let f = self.linear(tape, f, l.ff2)?;
        let r = tape.add(x1, f)?;
        self.norm(tape, r, l.ln2)
    }

    fn cross(&self, tape: &mut Tape<T>, c: &CrossBlock, xq: Var, xkv: Var, mask: Option<Var>) -> Result<Var> {
        let a = self.attention(tape, &c.attn, xq, xkv, mask)?;
        let r = tape.add(xq, a)?;
        self.norm(tape, r, c.ln)
    }

    fn check(&self, seq: &MultimodalSequence) -> Result<()> {
        let c = &self.config;
        if seq.text.is_empty() || seq.text.len() != seq.text_mask.len() {
            return Err(Error::Invalid {
                op: "forward",
                msg: "text and mask lengths differ or are empty".into(),
            });
        }
        if seq.text.len() > c.l_max {
            return Err(Error::Truncation {
                what: "text tokens",
                len: seq.text.len(),
                max: c.l_max,
            });
        }
        if let Some(t) = seq.text.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::Index {
                op: "word embedding",
                index: *t as usize,
                len: c.vocab_size,
            });
        }
        if seq.n_panoramas() > c.n_max {
            return Err(Error::Truncation {
                what: "panoramas",
                len: seq.n_panoramas(),
                max: c.n_max,
            });
        }
        for t in &seq.visual {
            if !t.is_img && t.feature.len() != c.d_v {
                return Err(Error::Shape {
                    op: "region feature",
                    lhs: vec![t.feature.len()],
                    rhs: vec![c.d_v],
                });
            }
        }
        Ok(())
    }

    /// Region features as a `V × d_v` matrix; IMG rows and `zeroed` positions are 0.
    pub fn feature_matrix(&self, seq: &MultimodalSequence, zeroed: &[usize]) -> Array<T> {
        let d = self.config.d_v;
        let mut data = vec![T::zero(); seq.visual.len() * d];
        for (i, t) in seq.visual.iter().enumerate() {
            if t.is_img || zeroed.contains(&i) {
                continue;
            }
            for (dst, &f) in data[i * d..(i + 1) * d].iter_mut().zip(&t.feature) {
                *dst = T::from_f64c(f as f64);
            }
        }
        Array::new(&[seq.visual.len(), d], data).expect("V × d_v")
    }

    /// Word plus position embeddings followed by the language layers.
    pub fn encode_language(&self, tape: &mut Tape<T>, seq: &MultimodalSequence) -> Result<Var> {
        self.check(seq)?;
        let ids: Vec<usize> = seq.text.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let word = self.p(tape, self.ids.word);
        let pos = self.p(tape, self.ids.pos);
        let w = tape.embedding(word, &ids)?;
        let p = tape.embedding(pos, &positions)?;
        let x = tape.add(w, p)?;
        let mut x = self.norm(tape, x, self.ids.text_ln)?;
        let mask = self.text_mask(tape, seq)?;
        for l in &self.ids.lang {
            x = self.layer(tape, l, x, mask)?;
        }
        Ok(x)
    }

    fn text_mask(&self, tape: &mut Tape<T>, seq: &MultimodalSequence) -> Result<Option<Var>> {
        if seq.text_mask.iter().all(|&m| m) {
            Ok(None)
        } else {
            Ok(Some(tape.constant(row_mask(&seq.text_mask))?))
        }
    }

    /// Pre-normalization visual token input:
    /// `features·W_v + spatial·W_S + W_P[pano] + W_type[img|region]`.
    pub fn visual_input(&self, tape: &mut Tape<T>, seq: &MultimodalSequence, features: Var) -> Result<Var> {
        let n = seq.visual.len();
        let spatial: Vec<T> = seq
            .visual
            .iter()
            .flat_map(|t| t.spatial.iter().map(|&s| T::from_f64c(s)))
            .collect();
        let spatial = tape.constant(Array::new(&[n, SPATIAL_DIM], spatial)?)?;
        let pano_ids: Vec<usize> = seq.visual.iter().map(|t| t.pano).collect();
        let type_ids: Vec<usize> = seq.visual.iter().map(|t| usize::from(!t.is_img)).collect();
        let proj = self.p(tape, self.ids.vis_proj);
        let ws = self.p(tape, self.ids.vis_spatial);
        let wp = self.p(tape, self.ids.vis_pano);
        let wt = self.p(tape, self.ids.vis_type);
        let f = tape.matmul(features, proj)?;
        let s = tape.matmul(spatial, ws)?;
        let p = tape.embedding(wp, &pano_ids)?;
        let t = tape.embedding(wt, &type_ids)?;
        let x = tape.add(f, s)?;
        let x = tape.add(x, p)?;
        tape.add(x, t)
    }

    /// Visual layers and co-attention on top of an encoded language stream.
    /// `features` must be a `V × d_v` node (see [`Model::feature_matrix`]).
    pub fn encode_joint(
        &self,
        tape: &mut Tape<T>,
        seq: &MultimodalSequence,
        lang: Var,
        features: Option<Var>,
    ) -> Result<Encoded> {
        let tmask = self.text_mask(tape, seq)?;
        let mut t = lang;
        let mut v = match features {
            Some(f) if !seq.visual.is_empty() => {
                let x = self.visual_input(tape, seq, f)?;
                let mut x = self.norm(tape, x, self.ids.vis_ln)?;
                for l in &self.ids.vis {
                    x = self.layer(tape, l, x, None)?;
                }
                Some(x)
            }
            _ => None,
        };
        for co in &self.ids.co {
            if let Some(vv) = v {
                let t_new = self.cross(tape, &co.text_from_vis, t, vv, None)?;
                let v_new = self.cross(tape, &co.vis_from_text, vv, t, tmask)?;
                t = t_new;
                v = Some(self.layer(tape, &co.vis, v_new, None)?);
            }
            t = self.layer(tape, &co.text, t, tmask)?;
        }
        let cls = tape.slice_rows(t, 0, 1)?;
        let img = match (v, seq.visual.iter().position(|x| x.is_img)) {
            (Some(vv), Some(i)) => Some(tape.slice_rows(vv, i, i + 1)?),
            _ => None,
        };
        Ok(Encoded {
            text: t,
            visual: v,
            cls,
            img,
        })
    }

    /// Full forward pass with region features held constant.
    pub fn forward(&self, tape: &mut Tape<T>, seq: &MultimodalSequence) -> Result<Encoded> {
        let lang = self.encode_language(tape, seq)?;
        let features = if seq.visual.is_empty() {
            None
        } else {
            Some(tape.constant(self.feature_matrix(seq, &[]))?)
        };
        self.encode_joint(tape, seq, lang, features)
    }

    fn pooled(&self, tape: &mut Tape<T>, enc: &Encoded) -> Result<Var> {
        let img = enc.img.ok_or(Error::Invalid {
            op: "pooled output",
            msg: "sequence has no visual tokens".into(),
        })?;
        tape.mul(enc.cls, img)
    }

    /// `s = W·(h_CLS ⊙ h_IMG)`, shape `1 × 1`.
    pub fn score(&self, tape: &mut Tape<T>, enc: &Encoded) -> Result<Var> {
        let pooled = self.pooled(tape, enc)?;
        let w = self.p(tape, self.ids.score);
        tape.matmul(pooled, w)
    }

    /// Convenience: score value for one sequence.
    pub fn compatibility_score(&self, seq: &MultimodalSequence) -> Result<T> {
        let mut tape = Tape::new();
        let enc = self.forward(&mut tape, seq)?;
        let s = self.score(&mut tape, &enc)?;
        Ok(tape.value(s).item())
    }

    /// Vocabulary logits for the given text rows.
    pub fn mlm_logits(&self, tape: &mut Tape<T>, text: Var) -> Result<Var> {
        self.linear(tape, text, self.ids.mlm)
    }

    /// Landmark-class logits for the given visual rows.
    pub fn region_logits(&self, tape: &mut Tape<T>, visual: Var) -> Result<Var> {
        self.linear(tape, visual, self.ids.region)
    }

    /// Matched/mismatched logit from the pooled CLS ⊙ IMG output.
    pub fn alignment_logit(&self, tape: &mut Tape<T>, enc: &Encoded) -> Result<Var> {
        let pooled = self.pooled(tape, enc)?;
        self.linear(tape, pooled, self.ids.align)
    }

    /// Next-sentence logit from the CLS output.
    pub fn nsp_logit(&self, tape: &mut Tape<T>, enc: &Encoded) -> Result<Var> {
        self.linear(tape, enc.cls, self.ids.nsp)
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }
}

fn config_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
