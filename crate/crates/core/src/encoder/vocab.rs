use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::Instance;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
const LABEL_PREFIX: &str = "[label:";

/// Lowercases a raw token and strips every non-alphanumeric character.
/// Returns `None` when nothing is left.
pub fn normalize(token: &str) -> Option<String> {
    let s: String = token
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    (!s.is_empty()).then_some(s)
}

/// Token ↔ id mapping: four specials, then one atomic token per label in
/// label-space order, then corpus words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    num_labels: usize,
}

impl Vocab {
    /// Keeps normalized words seen at least `min_freq` times, ordered by
    /// descending frequency then lexicographically.
    pub fn build(corpus: &[Instance], labels: &[String], min_freq: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("cannot build a vocabulary for an empty label space"));
        }
        if corpus.is_empty() {
            return Err(Error::config("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for inst in corpus {
            for tok in inst.text.iter().filter_map(|t| normalize(t)) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(labels.iter().map(|l| format!("{LABEL_PREFIX}{l}]")));
        tokens.extend(words.into_iter().map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Format {
            source_name: "vocab".into(),
            line,
            reason: reason.into(),
        };
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(bad(i + 1, &format!("expected special token {s}")));
            }
        }
        let num_labels = tokens[SPECIALS.len()..]
            .iter()
            .take_while(|t| t.starts_with(LABEL_PREFIX))
            .count();
        let after = SPECIALS.len() + num_labels;
        if let Some(pos) = tokens[after..].iter().position(|t| t.starts_with(LABEL_PREFIX)) {
            return Err(bad(after + pos + 1, "label tokens must form one contiguous block"));
        }
        if num_labels == 0 {
            return Err(bad(SPECIALS.len() + 1, "no label tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(bad(i + 1, &format!("duplicate token {t}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            num_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Number of ordinary word tokens (excluding specials and labels).
    pub fn num_words(&self) -> usize {
        self.tokens.len() - SPECIALS.len() - self.num_labels
    }

    pub fn label_offset(&self) -> usize {
        SPECIALS.len()
    }

    pub fn label_token(&self, label: usize) -> usize {
        assert!(label < self.num_labels, "label index {label} out of range");
        SPECIALS.len() + label
    }

    /// Label names recovered from the label tokens, in label-space order.
    pub fn label_names(&self) -> Vec<String> {
        self.tokens[SPECIALS.len()..SPECIALS.len() + self.num_labels]
            .iter()
            .map(|t| t[LABEL_PREFIX.len()..t.len() - 1].to_string())
            .collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a normalized word, `[UNK]` when absent. Label tokens are never
    /// produced from document text.
    pub fn word_id(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&i) if i >= SPECIALS.len() + self.num_labels => i,
            _ => UNK,
        }
    }

    /// Normalizes and maps raw document tokens; tokens that normalize to
    /// nothing are dropped.
    pub fn encode_words(&self, text: &[String]) -> Vec<usize> {
        text.iter()
            .filter_map(|t| normalize(t))
            .map(|w| self.word_id(&w))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
