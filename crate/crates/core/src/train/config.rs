use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::AdamConfig;
use crate::aux::Mode;
use crate::error::{Error, Result};
use crate::head::check_threshold;
use crate::model::ModelConfig;

/// Every knob of a training run. Serialised as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    pub window: usize,
    pub filters: usize,
    pub no_je: bool,
    pub no_ca: bool,
    pub min_freq: usize,

    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluations without a micro-F1 gain before stopping.
    pub patience: usize,
    pub seed: u64,
    pub threshold: f64,

    pub mode: Mode,
    pub alpha: Option<f64>,
    pub gamma: f64,
    pub plcp_pairs: usize,
    pub symmetric_plcp: bool,
    /// Stop auxiliary gradients at the label representations.
    pub detach_aux: bool,

    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        Self {
            layers: m.layers,
            heads: m.heads,
            hidden: m.hidden,
            ff_hidden: m.ff_hidden,
            max_len: m.max_len,
            window: m.window,
            filters: m.filters,
            no_je: false,
            no_ca: false,
            min_freq: 1,
            batch_size: 32,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            max_steps: 5000,
            eval_interval: 50,
            patience: 10,
            seed: 0,
            threshold: 0.5,
            mode: Mode::Mlc,
            alpha: None,
            gamma: 0.5,
            plcp_pairs: 4,
            symmetric_plcp: false,
            detach_aux: false,
            train: None,
            valid: None,
            test: None,
            labels: None,
            out_dir: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "layers", "heads", "hidden", "ff_hidden", "max_len", "window", "filters", "no_je", "no_ca",
    "min_freq", "batch_size", "lr", "beta1", "beta2", "eps", "max_steps", "eval_interval",
    "patience", "seed", "threshold", "mode", "alpha", "gamma", "plcp_pairs", "symmetric_plcp",
    "detach_aux", "train", "valid", "test", "labels", "out_dir",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "layers" => self.layers = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "ff_hidden" => self.ff_hidden = parse_num(key, v)?,
            "max_len" => self.max_len = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "filters" => self.filters = parse_num(key, v)?,
            "no_je" => self.no_je = parse_bool(key, v)?,
            "no_ca" => self.no_ca = parse_bool(key, v)?,
            "min_freq" => self.min_freq = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "eval_interval" => self.eval_interval = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "alpha" => {
                self.alpha = match v {
                    "" | "none" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "gamma" => self.gamma = parse_num(key, v)?,
            "plcp_pairs" => self.plcp_pairs = parse_num(key, v)?,
            "symmetric_plcp" => self.symmetric_plcp = parse_bool(key, v)?,
            "detach_aux" => self.detach_aux = parse_bool(key, v)?,
            "train" => self.train = opt_path(v),
            "valid" => self.valid = opt_path(v),
            "test" => self.test = opt_path(v),
            "labels" => self.labels = opt_path(v),
            "out_dir" => self.out_dir = opt_path(v),
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    reason: "expected `key = value`".into(),
                });
            };
            self.set(k, v).map_err(|e| Error::Format {
                source_name: source_name.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, "config")?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        Some(match key {
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "hidden" => self.hidden.to_string(),
            "ff_hidden" => self.ff_hidden.to_string(),
            "max_len" => self.max_len.to_string(),
            "window" => self.window.to_string(),
            "filters" => self.filters.to_string(),
            "no_je" => self.no_je.to_string(),
            "no_ca" => self.no_ca.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => format!("{:?}", self.lr),
            "beta1" => format!("{:?}", self.beta1),
            "beta2" => format!("{:?}", self.beta2),
            "eps" => format!("{:?}", self.eps),
            "max_steps" => self.max_steps.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "threshold" => format!("{:?}", self.threshold),
            "mode" => self.mode.to_string(),
            "alpha" => self.alpha.map_or_else(|| "none".to_string(), |a| format!("{a:?}")),
            "gamma" => format!("{:?}", self.gamma),
            "plcp_pairs" => self.plcp_pairs.to_string(),
            "symmetric_plcp" => self.symmetric_plcp.to_string(),
            "detach_aux" => self.detach_aux.to_string(),
            "train" => path(&self.train),
            "valid" => path(&self.valid),
            "test" => path(&self.test),
            "labels" => path(&self.labels),
            "out_dir" => path(&self.out_dir),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.max_steps == 0 {
            return Err(Error::config("batch_size, eval_interval and max_steps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::config("adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma {} must be non-negative", self.gamma)));
        }
        match (self.mode, self.alpha) {
            (Mode::Both, None) => return Err(Error::config("mode +both requires alpha")),
            (Mode::Both, Some(_)) => {
                self.mode.weights(self.alpha)?;
            }
            (m, Some(_)) => return Err(Error::config(format!("alpha is only used with mode +both, not {m}"))),
            _ => {}
        }
        if self.mode.uses_plcp() && self.plcp_pairs == 0 {
            return Err(Error::config("plcp_pairs must be at least 1"));
        }
        check_threshold(self.threshold)?;
        self.model().encoder().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ff_hidden: self.ff_hidden,
            max_len: self.max_len,
            window: self.window,
            filters: self.filters,
            no_je: self.no_je,
            no_ca: self.no_ca,
            mode: self.mode,
            symmetric_plcp: self.symmetric_plcp,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}
