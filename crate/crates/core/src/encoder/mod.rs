//! Joint document-label input packing and the transformer encoder.
//!
//! A packed sequence is `[CLS] x_1..x_m [SEP] y_1..y_n [SEP]`: the document
//! words followed by one atomic token for every label of the label space.
//! Encoding it once yields contextual vectors for the words and the labels
//! in a shared space.

mod vocab;

pub use vocab::{normalize, Vocab, CLS, PAD, SEP, UNK};

use std::ops::Range;

use rand::Rng;

use crate::autograd::{Graph, NodeId, ParamId, Tensor};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// Positions that take part in attention; `false` marks padding.
    pub attention: Vec<bool>,
    pub doc_span: Range<usize>,
    pub label_span: Range<usize>,
}

impl JointSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Appends `[PAD]` positions up to `len` (no-op if already that long).
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD);
            self.segment_ids.push(0);
            self.attention.push(false);
        }
    }
}

/// Packs a document with every label token. The document is truncated from
/// the right so that the whole label block always fits in `max_len`.
pub fn pack(instance: &Instance, vocab: &Vocab, max_len: usize) -> Result<JointSequence> {
    let n = vocab.num_labels();
    if max_len < n + 3 {
        return Err(Error::config(format!(
            "max_len {max_len} cannot hold {n} label tokens plus 3 special tokens"
        )));
    }
    let mut words = vocab.encode_words(&instance.text);
    words.truncate(max_len - n - 3);
    let m = words.len();
    let mut token_ids = Vec::with_capacity(m + n + 3);
    token_ids.push(CLS);
    token_ids.extend(words);
    token_ids.push(SEP);
    token_ids.extend((0..n).map(|l| vocab.label_token(l)));
    token_ids.push(SEP);
    let mut segment_ids = vec![0; m + 2];
    segment_ids.extend(std::iter::repeat_n(1, n + 1));
    Ok(JointSequence {
        attention: vec![true; token_ids.len()],
        token_ids,
        segment_ids,
        doc_span: 1..1 + m,
        label_span: m + 2..m + 2 + n,
    })
}

/// `[CLS] x_1..x_m [SEP]` only, for encoders that do not see label tokens.
pub fn pack_document(instance: &Instance, vocab: &Vocab, max_len: usize) -> Result<JointSequence> {
    if max_len < 2 {
        return Err(Error::config("max_len must be at least 2"));
    }
    let mut words = vocab.encode_words(&instance.text);
    words.truncate(max_len - 2);
    let m = words.len();
    let mut token_ids = Vec::with_capacity(m + 2);
    token_ids.push(CLS);
    token_ids.extend(words);
    token_ids.push(SEP);
    Ok(JointSequence {
        attention: vec![true; token_ids.len()],
        segment_ids: vec![0; token_ids.len()],
        token_ids,
        doc_span: 1..1 + m,
        label_span: m + 2..m + 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    pub segments: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 128,
            ff_hidden: 512,
            max_len: 128,
            segments: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.max_len == 0 || self.segments == 0 || self.ff_hidden == 0 {
            return Err(Error::config("max_len, segments and ff_hidden must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff_in: ParamId,
    pub ff_in_bias: ParamId,
    pub ff_out: ParamId,
    pub ff_out_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_emb: ParamId,
    pub position_emb: ParamId,
    pub segment_emb: ParamId,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Registers all encoder tensors in `store` under the `encoder.` prefix.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.hidden;
        let f = config.ff_hidden;
        let token_emb = store.add("encoder.token_emb", Tensor::randn(&[vocab_size, k], INIT_STD, rng));
        let position_emb = store.add(
            "encoder.position_emb",
            Tensor::randn(&[config.max_len, k], INIT_STD, rng),
        );
        let segment_emb = store.add(
            "encoder.segment_emb",
            Tensor::randn(&[config.segments, k], INIT_STD, rng),
        );
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut w = |name: &str, shape: &[usize], rng: &mut R| {
                store.add(format!("encoder.layer{l}.{name}"), Tensor::randn(shape, INIT_STD, rng))
            };
            let wq = w("wq", &[k, k], rng);
            let wk = w("wk", &[k, k], rng);
            let wv = w("wv", &[k, k], rng);
            let wo = w("wo", &[k, k], rng);
            let ff_in = w("ff_in", &[k, f], rng);
            let ff_out = w("ff_out", &[f, k], rng);
            let mut c = |name: &str, len: usize, value: f64| {
                store.add(format!("encoder.layer{l}.{name}"), Tensor::filled(&[len], value))
            };
            layers.push(LayerParams {
                wq,
                bq: c("bq", k, 0.0),
                wk,
                bk: c("bk", k, 0.0),
                wv,
                bv: c("bv", k, 0.0),
                wo,
                bo: c("bo", k, 0.0),
                ln1_gain: c("ln1_gain", k, 1.0),
                ln1_bias: c("ln1_bias", k, 0.0),
                ff_in,
                ff_in_bias: c("ff_in_bias", f, 0.0),
                ff_out,
                ff_out_bias: c("ff_out_bias", k, 0.0),
                ln2_gain: c("ln2_gain", k, 1.0),
                ln2_bias: c("ln2_bias", k, 0.0),
            });
        }
        Ok(Self {
            config,
            token_emb,
            position_emb,
            segment_emb,
            layers,
        })
    }
}

/// Contextual representations sliced out of the final layer.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `1×k`
    pub h_cls: NodeId,
    /// `m×k`, one row per document word.
    pub h_d: NodeId,
    /// `n×k`, one row per label; `0×k` for document-only sequences.
    pub h_y: NodeId,
    /// Every position, `len×k`.
    pub hidden: NodeId,
}

/// Post-layer-norm transformer stack over a packed sequence. Padding
/// positions receive zero attention weight.
pub fn encode<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    params: &EncoderParams,
    seq: &JointSequence,
) -> Result<EncoderOutput> {
    let cfg = &params.config;
    let len = seq.len();
    if len > cfg.max_len {
        return Err(Error::config(format!(
            "sequence length {len} exceeds max_len {}",
            cfg.max_len
        )));
    }
    let tok = store.leaf(g, params.token_emb);
    let pos = store.leaf(g, params.position_emb);
    let seg = store.leaf(g, params.segment_emb);
    let x_tok = g.gather_rows(tok, &seq.token_ids)?;
    let positions: Vec<usize> = (0..len).collect();
    let x_pos = g.gather_rows(pos, &positions)?;
    let x_seg = g.gather_rows(seg, &seq.segment_ids)?;
    let x = g.add(x_tok, x_pos)?;
    let mut x = g.add(x, x_seg)?;

    let mask = (!seq.attention.iter().all(|&a| a)).then(|| seq.attention.clone());
    let head_dim = cfg.hidden / cfg.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    for layer in &params.layers {
        let p = |g: &mut Graph<'a>, id| store.leaf(g, id);
        let affine = |g: &mut Graph<'a>, input, w, b| -> Result<NodeId> {
            let (w, b) = (p(g, w), p(g, b));
            let y = g.matmul(input, w)?;
            Ok(g.add(y, b)?)
        };
        let q = affine(g, x, layer.wq, layer.bq)?;
        let q = g.scale(q, scale);
        let k = affine(g, x, layer.wk, layer.bk)?;
        let v = affine(g, x, layer.wv, layer.bv)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim)?;
            let kh = g.slice_cols(k, h * head_dim, head_dim)?;
            let vh = g.slice_cols(v, h * head_dim, head_dim)?;
            let scores = g.matmul_t(qh, kh)?;
            let att = g.softmax(scores, mask.clone())?;
            heads.push(g.matmul(att, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let attended = affine(g, merged, layer.wo, layer.bo)?;
        let res = g.add(x, attended)?;
        let (g1, b1) = (p(g, layer.ln1_gain), p(g, layer.ln1_bias));
        let x1 = g.layer_norm(res, g1, b1)?;
        let hidden = affine(g, x1, layer.ff_in, layer.ff_in_bias)?;
        let hidden = g.relu(hidden);
        let ff = affine(g, hidden, layer.ff_out, layer.ff_out_bias)?;
        let res = g.add(x1, ff)?;
        let (g2, b2) = (p(g, layer.ln2_gain), p(g, layer.ln2_bias));
        x = g.layer_norm(res, g2, b2)?;
    }
    let h_cls = g.slice_rows(x, 0..1)?;
    let h_d = g.slice_rows(x, seq.doc_span.clone())?;
    let h_y = g.slice_rows(x, seq.label_span.clone())?;
    Ok(EncoderOutput {
        h_cls,
        h_d,
        h_y,
        hidden: x,
    })
}
