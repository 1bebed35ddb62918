//! Document-label cross attention and the multi-label classifier.
//!
//! The word-label compatibility matrix `M = H_D · H_Yᵀ` is convolved along
//! the word axis (local phrase windows), passed through ReLU, max-pooled
//! over filters and squashed with tanh to one score per word. A softmax over
//! words turns the scores into attention weights `β`, and the document
//! vector is `c = β · H_D`.

use rand::Rng;

use crate::autograd::{bce_value, Graph, NodeId, ParamId, Tensor};
use crate::encoder::INIT_STD;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub labels: usize,
    pub hidden: usize,
    pub window: usize,
    pub filters: usize,
    /// Cross attention on; otherwise the classifier reads `h_cls`.
    pub cross_attention: bool,
    /// Free label embeddings instead of encoder label tokens.
    pub free_label_emb: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    pub config: HeadConfig,
    /// `F×window×n`
    pub conv_filters: Option<ParamId>,
    /// `F`
    pub conv_bias: Option<ParamId>,
    /// `n×k`, one row per label.
    pub classifier_w: ParamId,
    /// `n`
    pub classifier_b: ParamId,
    /// `n×k` label vectors used when the encoder does not see labels.
    pub label_emb: Option<ParamId>,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, k) = (config.labels, config.hidden);
        if config.cross_attention && (config.window == 0 || config.filters == 0) {
            return Err(Error::config("cross attention needs window >= 1 and filters >= 1"));
        }
        let (conv_filters, conv_bias) = if config.cross_attention {
            (
                Some(store.add(
                    "head.conv_filters",
                    Tensor::randn(&[config.filters, config.window, n], INIT_STD, rng),
                )),
                Some(store.add("head.conv_bias", Tensor::zeros(&[config.filters]))),
            )
        } else {
            (None, None)
        };
        let label_emb = config
            .free_label_emb
            .then(|| store.add("head.label_emb", Tensor::randn(&[n, k], INIT_STD, rng)));
        let classifier_w = store.add("head.classifier_w", Tensor::randn(&[n, k], INIT_STD, rng));
        let classifier_b = store.add("head.classifier_b", Tensor::zeros(&[n]));
        Ok(Self {
            config,
            conv_filters,
            conv_bias,
            classifier_w,
            classifier_b,
            label_emb,
        })
    }
}

/// `M = H_D · H_Yᵀ`, shape `m×n`.
pub fn compatibility(g: &mut Graph<'_>, h_d: NodeId, h_y: NodeId) -> Result<NodeId> {
    Ok(g.matmul_t(h_d, h_y)?)
}

#[derive(Debug, Clone, Copy)]
pub struct CaWeights {
    pub filters: NodeId,
    pub bias: NodeId,
    pub window: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    /// Document vector, `1×k`.
    pub c: NodeId,
    /// Attention over words, `1×m`; absent for an empty document.
    pub beta: Option<NodeId>,
    /// Set when the document had no words and `c` fell back to zeros.
    pub degenerate: bool,
}

/// Label-aware document vector from the compatibility matrix `m` (`m×n`)
/// and word representations `h_d` (`m×k`).
pub fn cross_attention(
    g: &mut Graph<'_>,
    m: NodeId,
    h_d: NodeId,
    weights: CaWeights,
) -> Result<CrossAttention> {
    let words = g.shape(h_d)[0];
    if words == 0 {
        let k = g.shape(h_d)[1];
        let c = g.constant(Tensor::zeros(&[1, k]));
        return Ok(CrossAttention {
            c,
            beta: None,
            degenerate: true,
        });
    }
    let conv = g.conv1d(m, weights.filters, weights.window)?;
    let conv = g.add(conv, weights.bias)?;
    let hidden = g.relu(conv);
    let pooled = g.max_pool(hidden, 1)?;
    let scores = g.tanh(pooled);
    let scores = g.reshape(scores, &[1, words])?;
    let beta = g.softmax(scores, None)?;
    let c = g.matmul(beta, h_d)?;
    Ok(CrossAttention {
        c,
        beta: Some(beta),
        degenerate: false,
    })
}

/// Label probabilities `σ(W_1 c + b_1)`, shape `1×n`.
pub fn label_probs(g: &mut Graph<'_>, c: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let logits = g.matmul_t(c, w)?;
    let logits = g.add(logits, b)?;
    Ok(g.sigmoid(logits))
}

/// Summed BCE over labels for one instance.
pub fn mlc_loss(g: &mut Graph<'_>, probs: NodeId, gold: &[f64]) -> Result<NodeId> {
    Ok(g.bce(probs, gold)?)
}

/// Scalar form of [`mlc_loss`].
pub fn mlc_loss_value(probs: &[f64], gold: &[f64]) -> f64 {
    bce_value(probs, gold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Label indices with `prob >= threshold`, ascending. May be empty.
    pub predicted: Vec<usize>,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        let predicted = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= threshold)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { probs, predicted })
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("threshold {threshold} must lie in (0, 1)")))
    }
}
