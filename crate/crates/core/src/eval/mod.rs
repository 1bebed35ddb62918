//! Multi-label metrics and label-correlation analysis.
//!
//! Prediction files hold one document per line: gold labels, a tab, then
//! predicted labels (both space-separated; the predicted field may be empty).

mod metrics;

pub use metrics::{
    conditional_kl, distinct_sets, frequency_groups, group_f1, hamming_loss, macro_avg, micro,
    subset_accuracy, tallies, GroupBoundaries, KlDistance, Prf, Tally, KL_EPSILON,
};

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Aligned gold and predicted label sets over one label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredFile {
    pub labels: Vec<String>,
    /// Sorted label indices per document.
    pub gold: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

impl PredFile {
    pub fn new(labels: Vec<String>, gold: Vec<Vec<usize>>, pred: Vec<Vec<usize>>) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::config(format!(
                "{} gold rows but {} predicted rows",
                gold.len(),
                pred.len()
            )));
        }
        let n = labels.len();
        let norm = |sets: Vec<Vec<usize>>| -> Result<Vec<Vec<usize>>> {
            sets.into_iter()
                .map(|s| {
                    if let Some(&bad) = s.iter().find(|&&l| l >= n) {
                        return Err(Error::LabelSpace(format!("label index {bad} >= {n}")));
                    }
                    Ok(s.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
                })
                .collect()
        };
        Ok(Self {
            gold: norm(gold)?,
            pred: norm(pred)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Parses prediction lines. Without an explicit label space, the space is
    /// the sorted union of every label in the file.
    pub fn parse(text: &str, source_name: &str, labels: Option<&[String]>) -> Result<Self> {
        let mut rows: Vec<(Vec<&str>, Vec<&str>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            // a lone tab is a document with two empty sets
            if line.trim_end_matches('\r').is_empty() {
                continue;
            }
            let Some((g, p)) = line.split_once('\t') else {
                return Err(Error::Format {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    reason: "expected `gold<TAB>predicted`".into(),
                });
            };
            rows.push((g.split_whitespace().collect(), p.split_whitespace().collect()));
        }
        let labels: Vec<String> = match labels {
            Some(l) => l.to_vec(),
            None => rows
                .iter()
                .flat_map(|(g, p)| g.iter().chain(p))
                .copied()
                .collect::<BTreeSet<&str>>()
                .into_iter()
                .map(str::to_string)
                .collect(),
        };
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut unknown = BTreeSet::new();
        let mut ids = |names: &[&str]| -> Vec<usize> {
            names
                .iter()
                .filter_map(|n| {
                    let id = index.get(n).copied();
                    if id.is_none() {
                        unknown.insert(n.to_string());
                    }
                    id
                })
                .collect()
        };
        let (gold, pred): (Vec<_>, Vec<_>) = rows.iter().map(|(g, p)| (ids(g), ids(p))).unzip();
        if !unknown.is_empty() {
            return Err(Error::LabelSpace(format!(
                "{source_name}: labels not in the label space: {}",
                unknown.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Self::new(labels, gold, pred)
    }

    pub fn read(path: &Path, labels: Option<&[String]>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), labels)
    }

    pub fn to_text(&self) -> String {
        let names = |s: &[usize]| s.iter().map(|&l| self.labels[l].as_str()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        for (g, p) in self.gold.iter().zip(&self.pred) {
            let _ = writeln!(out, "{}\t{}", names(g), names(p));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Same documents re-indexed into a larger label space containing this one.
    pub fn reindex(&self, labels: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let map: Vec<usize> = self
            .labels
            .iter()
            .map(|l| {
                index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::LabelSpace(format!("label {l} missing from target space")))
            })
            .collect::<Result<_>>()?;
        let remap = |sets: &[Vec<usize>]| sets.iter().map(|s| s.iter().map(|&l| map[l]).collect()).collect();
        Self::new(labels.to_vec(), remap(&self.gold), remap(&self.pred))
    }
}

/// Full metric bundle for one prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub documents: usize,
    pub labels: usize,
    pub hamming_loss: f64,
    pub micro: Prf,
    pub macro_: Prf,
    pub subset_accuracy: f64,
    pub c_test: usize,
    /// Macro-F1 per frequency group, most frequent first.
    pub group_f1: Option<[Option<f64>; 4]>,
    pub kl: Option<KlDistance>,
}

impl EvalReport {
    pub fn new(pf: &PredFile) -> Self {
        let n = pf.num_labels();
        let t = tallies(&pf.gold, &pf.pred, n);
        Self {
            documents: pf.len(),
            labels: n,
            hamming_loss: hamming_loss(&pf.gold, &pf.pred, n),
            micro: micro(&t),
            macro_: macro_avg(&t, None),
            subset_accuracy: subset_accuracy(&pf.gold, &pf.pred),
            c_test: distinct_sets(&pf.pred),
            group_f1: None,
            kl: None,
        }
    }

    /// Adds the per-group breakdown using training-set label frequencies.
    pub fn with_groups(mut self, pf: &PredFile, train_freq: &[usize], boundaries: &GroupBoundaries) -> Self {
        let groups = frequency_groups(train_freq, boundaries);
        self.group_f1 = Some(group_f1(&tallies(&pf.gold, &pf.pred, pf.num_labels()), &groups));
        self
    }

    /// Adds the conditional KL of the predictions against `reference` sets.
    pub fn with_kl(mut self, pf: &PredFile, reference: &[Vec<usize>], epsilon: f64) -> Self {
        self.kl = Some(conditional_kl(reference, &pf.pred, pf.num_labels(), epsilon));
        self
    }

    /// `(key, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e = vec![
            ("documents".to_string(), self.documents.to_string()),
            ("labels".to_string(), self.labels.to_string()),
            ("hamming_loss".to_string(), self.hamming_loss.to_string()),
            ("micro_precision".to_string(), self.micro.precision.to_string()),
            ("micro_recall".to_string(), self.micro.recall.to_string()),
            ("micro_f1".to_string(), self.micro.f1.to_string()),
            ("macro_precision".to_string(), self.macro_.precision.to_string()),
            ("macro_recall".to_string(), self.macro_.recall.to_string()),
            ("macro_f1".to_string(), self.macro_.f1.to_string()),
            ("subset_accuracy".to_string(), self.subset_accuracy.to_string()),
            ("c_test".to_string(), self.c_test.to_string()),
        ];
        if let Some(groups) = &self.group_f1 {
            for (i, g) in groups.iter().enumerate() {
                let v = g.map_or_else(|| "absent".to_string(), |f| f.to_string());
                e.push((format!("group{}_macro_f1", i + 1), v));
            }
        }
        if let Some(kl) = &self.kl {
            e.push(("kl_distance".to_string(), kl.value.to_string()));
            e.push(("kl_degenerate".to_string(), kl.degenerate.to_string()));
        }
        e
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "documents        {}", self.documents);
        let _ = writeln!(s, "labels           {}", self.labels);
        let _ = writeln!(s, "hamming loss     {:.4}", self.hamming_loss);
        let _ = writeln!(
            s,
            "micro P/R/F1     {:.4} / {:.4} / {:.4}",
            self.micro.precision, self.micro.recall, self.micro.f1
        );
        let _ = writeln!(
            s,
            "macro P/R/F1     {:.4} / {:.4} / {:.4}",
            self.macro_.precision, self.macro_.recall, self.macro_.f1
        );
        let _ = writeln!(s, "subset accuracy  {:.4}", self.subset_accuracy);
        let _ = writeln!(s, "C_test           {}", self.c_test);
        if let Some(groups) = &self.group_f1 {
            for (i, g) in groups.iter().enumerate() {
                match g {
                    Some(f) => {
                        let _ = writeln!(s, "group{} macro-F1  {f:.4}", i + 1);
                    }
                    None => {
                        let _ = writeln!(s, "group{} macro-F1  absent", i + 1);
                    }
                }
            }
        }
        if let Some(kl) = &self.kl {
            let flag = if kl.degenerate { " (no reference pairs)" } else { "" };
            let _ = writeln!(s, "KL distance      {:.4}{flag}", kl.value);
        }
        s
    }
}
