//! The assembled classifier: encoder, cross-attention head and auxiliary heads
//! sharing one parameter store.

use rand::Rng;

use crate::autograd::{Graph, NodeId, Tensor};
use crate::aux::{AuxParams, Mode};
use crate::data::Instance;
use crate::encoder::{encode, pack, pack_document, EncoderConfig, EncoderOutput, EncoderParams, JointSequence, Vocab};
use crate::error::{Error, Result};
use crate::head::{compatibility, cross_attention, label_probs, CaWeights, CrossAttention, HeadConfig, HeadParams, Prediction};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    pub window: usize,
    pub filters: usize,
    /// Encode the document alone and use free label embeddings.
    pub no_je: bool,
    /// Classify from `h_cls` instead of the cross-attention vector.
    pub no_ca: bool,
    pub mode: Mode,
    pub symmetric_plcp: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 128,
            ff_hidden: 512,
            max_len: 128,
            window: 10,
            filters: 64,
            no_je: false,
            no_ca: false,
            mode: Mode::Mlc,
            symmetric_plcp: false,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ff_hidden: self.ff_hidden,
            max_len: self.max_len,
            segments: if self.no_je { 1 } else { 2 },
        }
    }

    /// Whether label vectors are needed at all when the encoder does not see labels.
    fn needs_label_emb(&self) -> bool {
        self.no_je && (!self.no_ca || self.mode != Mode::Mlc)
    }
}

/// Graph nodes produced by one forward pass over one instance.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub encoder: EncoderOutput,
    /// Label representations shared by the head and the auxiliary tasks.
    pub h_y: Option<NodeId>,
    pub ca: Option<CrossAttention>,
    /// `1×n` label probabilities.
    pub probs: NodeId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub aux: AuxParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        let n = vocab.num_labels();
        let token_rows = if config.no_je { vocab.len() - n } else { vocab.len() };
        if !config.no_je && config.max_len < n + 3 {
            return Err(Error::config(format!(
                "max_len {} cannot hold {n} label tokens plus 3 special tokens",
                config.max_len
            )));
        }
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, config.encoder(), token_rows, rng)?;
        let head = HeadParams::init(
            &mut store,
            HeadConfig {
                labels: n,
                hidden: config.hidden,
                window: config.window,
                filters: config.filters,
                cross_attention: !config.no_ca,
                free_label_emb: config.needs_label_emb(),
            },
            rng,
        )?;
        let aux = AuxParams::init(&mut store, config.mode, config.hidden, config.symmetric_plcp, rng);
        Ok(Self {
            config,
            vocab,
            store,
            encoder,
            head,
            aux,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.num_labels()
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Zeroes the classifier and auxiliary heads so every sigmoid outputs 0.5.
    pub fn zero_heads(&mut self) {
        let mut ids = vec![self.head.classifier_w, self.head.classifier_b];
        for (w, b) in self.aux.plcp.into_iter().chain(self.aux.clcp) {
            ids.extend([w, b]);
        }
        for id in ids {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Packs an instance into the encoder input for this configuration.
    pub fn sequence(&self, instance: &Instance) -> Result<JointSequence> {
        if !self.config.no_je {
            return pack(instance, &self.vocab, self.config.max_len);
        }
        let mut seq = pack_document(instance, &self.vocab, self.config.max_len)?;
        // the document-only token table has no label rows
        let first_word = self.vocab.label_offset() + self.vocab.num_labels();
        for id in &mut seq.token_ids {
            if *id >= first_word {
                *id -= self.vocab.num_labels();
            }
        }
        Ok(seq)
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, seq: &JointSequence) -> Result<Forward> {
        let enc = encode(g, &self.store, &self.encoder, seq)?;
        let h_y = match self.head.label_emb {
            Some(id) => Some(self.store.leaf(g, id)),
            None if self.config.no_je => None,
            None => Some(enc.h_y),
        };
        let (c, ca) = match (self.head.conv_filters, self.head.conv_bias) {
            (Some(f), Some(b)) => {
                let h_y = h_y.expect("cross attention has label vectors");
                let m = compatibility(g, enc.h_d, h_y)?;
                let weights = CaWeights {
                    filters: self.store.leaf(g, f),
                    bias: self.store.leaf(g, b),
                    window: self.config.window,
                };
                let ca = cross_attention(g, m, enc.h_d, weights)?;
                (ca.c, Some(ca))
            }
            _ => (enc.h_cls, None),
        };
        let w = self.store.leaf(g, self.head.classifier_w);
        let b = self.store.leaf(g, self.head.classifier_b);
        let probs = label_probs(g, c, w, b)?;
        Ok(Forward {
            encoder: enc,
            h_y,
            ca,
            probs,
        })
    }

    /// Label probabilities for one instance.
    pub fn probs(&self, instance: &Instance) -> Result<Vec<f64>> {
        let seq = self.sequence(instance)?;
        let mut g = Graph::new();
        let f = self.forward(&mut g, &seq)?;
        Ok(g.value(f.probs).data().to_vec())
    }

    pub fn predict(&self, instance: &Instance, threshold: f64) -> Result<Prediction> {
        Prediction::from_probs(self.probs(instance)?, threshold)
    }

    /// Overwrites every parameter from `(name, tensor)` pairs; names and shapes must match.
    pub fn load_params(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        if params.len() != self.store.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, model expects {}",
                params.len(),
                self.store.len()
            )));
        }
        for (name, t) in params {
            let id = self
                .store
                .id(&name)
                .ok_or_else(|| Error::config(format!("unexpected parameter {name}")))?;
            let slot = self.store.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::config(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}
