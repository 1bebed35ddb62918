//! Binary checkpoints: a text header listing every tensor, a line `end`,
//! then all values as little-endian f64 in header order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RunConfig;
use crate::autograd::{AdamState, Tensor};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;

const MAGIC: &str = "laco-checkpoint 1";
const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub labels: Vec<String>,
    pub vocab: Vocab,
    pub step: usize,
    pub best_micro_f1: f64,
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn capture(model: &Model, config: &RunConfig, adam: &AdamState, step: usize, best_micro_f1: f64) -> Self {
        Self {
            config: config.clone(),
            labels: model.vocab.label_names(),
            vocab: model.vocab.clone(),
            step,
            best_micro_f1,
            params: model
                .store
                .names()
                .iter()
                .cloned()
                .zip(model.store.tensors().iter().cloned())
                .collect(),
            adam: adam.clone(),
        }
    }

    /// Rebuilds the model with the stored weights.
    pub fn model(&self) -> Result<Model> {
        // initial values are overwritten; the rng only drives shapes here
        let mut model = Model::new(self.config.model(), self.vocab.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Serialised bytes; the vocabulary is referenced by file name.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC}");
        let _ = writeln!(h, "step {}", self.step);
        let _ = writeln!(h, "best_micro_f1 {:?}", self.best_micro_f1);
        let _ = writeln!(h, "vocab {VOCAB_FILE} {}", self.vocab.len());
        let _ = writeln!(h, "labels {}", self.labels.join(" "));
        for line in self.config.to_text().lines() {
            let _ = writeln!(h, "config {line}");
        }
        let a = &self.adam;
        let _ = writeln!(
            h,
            "adam {} {:?} {:?} {:?} {:?}",
            a.step, a.config.lr, a.config.beta1, a.config.beta2, a.config.eps
        );
        let mut offset = 0usize;
        let mut blob: Vec<f64> = Vec::new();
        let mut entry = |h: &mut String, kind: &str, name: &str, shape: &[usize], data: &[f64]| {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            let _ = writeln!(h, "tensor {kind} {name} {} {offset}", dims.join("x"));
            offset += data.len();
            blob.extend_from_slice(data);
        };
        for (name, t) in &self.params {
            entry(&mut h, "param", name, t.shape(), t.data());
        }
        for (i, (name, t)) in self.params.iter().enumerate() {
            entry(&mut h, "adam_m", name, t.shape(), &a.m[i]);
            entry(&mut h, "adam_v", name, t.shape(), &a.v[i]);
        }
        let _ = writeln!(h, "end");
        let mut bytes = h.into_bytes();
        bytes.reserve(blob.len() * 8);
        for v in blob {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    /// Parses checkpoint bytes given the already-loaded vocabulary.
    pub fn from_bytes(bytes: &[u8], vocab: Vocab, source_name: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Format {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let marker = b"\nend\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad(0, "missing `end` line".into()))?;
        let header = std::str::from_utf8(&bytes[..end + 1]).map_err(|_| bad(0, "header is not UTF-8".into()))?;
        let body = &bytes[end + marker.len()..];
        if body.len() % 8 != 0 {
            return Err(bad(0, format!("blob length {} is not a multiple of 8", body.len())));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut lines = header.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(MAGIC) {
            return Err(bad(1, "not a checkpoint file".into()));
        }
        let mut step = None;
        let mut best = None;
        let mut labels = None;
        let mut config_text = String::new();
        let mut adam_head = None;
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let (mut ms, mut vs) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            let ln = i + 1;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(ln, format!("bad number `{s}`"))) };
            match key {
                "step" => step = Some(rest.parse::<usize>().map_err(|_| bad(ln, "bad step".into()))?),
                "best_micro_f1" => best = Some(num(rest)?),
                "vocab" => {
                    let len: usize = rest
                        .split_whitespace()
                        .nth(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(ln, "bad vocab line".into()))?;
                    if len != vocab.len() {
                        return Err(bad(ln, format!("vocabulary has {} tokens, checkpoint expects {len}", vocab.len())));
                    }
                }
                "labels" => labels = Some(rest.split_whitespace().map(str::to_string).collect::<Vec<_>>()),
                "config" => {
                    config_text.push_str(rest);
                    config_text.push('\n');
                }
                "adam" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    if f.len() != 5 {
                        return Err(bad(ln, "bad adam line".into()));
                    }
                    let t: u64 = f[0].parse().map_err(|_| bad(ln, "bad adam step".into()))?;
                    adam_head = Some((t, num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?));
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    if f.len() != 4 {
                        return Err(bad(ln, "bad tensor line".into()));
                    }
                    let shape: Vec<usize> = f[2]
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad(ln, format!("bad shape `{}`", f[2]))))
                        .collect::<Result<_>>()?;
                    let offset: usize = f[3].parse().map_err(|_| bad(ln, "bad offset".into()))?;
                    let len: usize = shape.iter().product();
                    let data = values
                        .get(offset..offset + len)
                        .ok_or_else(|| bad(ln, "tensor extends past the end of the blob".into()))?
                        .to_vec();
                    match f[0] {
                        "param" => params.push((f[1].to_string(), Tensor::new(shape, data)?)),
                        "adam_m" => ms.push(data),
                        "adam_v" => vs.push(data),
                        other => return Err(bad(ln, format!("unknown tensor kind `{other}`"))),
                    }
                }
                "" => {}
                other => return Err(bad(ln, format!("unknown header key `{other}`"))),
            }
        }
        let (t, lr, beta1, beta2, eps) = adam_head.ok_or_else(|| bad(0, "missing adam line".into()))?;
        if ms.len() != params.len() || vs.len() != params.len() {
            return Err(bad(0, "optimizer moments do not match parameters".into()));
        }
        let labels = labels.ok_or_else(|| bad(0, "missing labels line".into()))?;
        if labels != vocab.label_names() {
            return Err(Error::LabelSpace("checkpoint labels differ from its vocabulary".into()));
        }
        Ok(Self {
            config: RunConfig::parse(&config_text)?,
            labels,
            vocab,
            step: step.ok_or_else(|| bad(0, "missing step".into()))?,
            best_micro_f1: best.ok_or_else(|| bad(0, "missing best_micro_f1".into()))?,
            params,
            adam: AdamState {
                config: crate::autograd::AdamConfig { lr, beta1, beta2, eps },
                step: t,
                m: ms,
                v: vs,
            },
        })
    }

    /// Writes `path` and the referenced vocabulary next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        Self::from_bytes(&bytes, vocab, &path.display().to_string())
    }
}
