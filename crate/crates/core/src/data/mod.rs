//! Corpus ingestion, statistics, batching and the synthetic generator.
//!
//! Corpus files hold one document per line: space-separated label names, a
//! tab, then the raw text.

mod synth;

pub use synth::{CooccurrenceTable, SynthSpec, SyntheticCorpus};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: missing label field (expected `labels<TAB>text`)")]
    MissingLabelField { source_name: String, line: usize },
    #[error("{source_name}:{line}: empty label set")]
    EmptyLabels { source_name: String, line: usize },
    #[error("labels not in the label space: {}", .labels.join(", "))]
    UnknownLabels { labels: Vec<String> },
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("label space is empty")]
    EmptyLabelSpace,
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),
    #[error("{source_name}:{line}: malformed matrix row: {reason}")]
    Matrix {
        source_name: String,
        line: usize,
        reason: String,
    },
}

/// One document with its relevant label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    /// Whitespace-separated tokens of the raw text.
    pub text: Vec<String>,
    /// Sorted, de-duplicated label names.
    pub labels: Vec<String>,
}

impl Instance {
    pub fn new<S: AsRef<str>>(text: &str, labels: &[S]) -> Self {
        let set: BTreeSet<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
        Self {
            text: text.split_whitespace().map(str::to_string).collect(),
            labels: set.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    /// Label space in lexicographic order; every n-vector uses this order.
    pub labels: Vec<String>,
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Corpus {
    /// Builds a corpus, inferring the label space from all splits unless an
    /// explicit one is supplied (in which case unknown labels are an error).
    pub fn from_splits(
        train: Vec<Instance>,
        valid: Vec<Instance>,
        test: Vec<Instance>,
        label_space: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        let seen: BTreeSet<&String> = train
            .iter()
            .chain(&valid)
            .chain(&test)
            .flat_map(|i| &i.labels)
            .collect();
        let labels: Vec<String> = match label_space {
            Some(space) => {
                let known: BTreeSet<String> = space.into_iter().collect();
                let unknown: Vec<String> = seen
                    .iter()
                    .filter(|l| !known.contains(l.as_str()))
                    .map(|l| l.to_string())
                    .collect();
                if !unknown.is_empty() {
                    return Err(DataError::UnknownLabels { labels: unknown });
                }
                known.into_iter().collect()
            }
            None => seen.into_iter().cloned().collect(),
        };
        if labels.is_empty() {
            return Err(DataError::EmptyLabelSpace);
        }
        Ok(Self {
            labels,
            train,
            valid,
            test,
        })
    }

    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }

    /// Label indices of an instance in label-space order.
    pub fn label_ids(&self, instance: &Instance) -> Vec<usize> {
        label_ids(&self.labels, instance)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Instance> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_instances(&dir.join("train.tsv"), &self.train)?;
        write_instances(&dir.join("valid.tsv"), &self.valid)?;
        write_instances(&dir.join("test.tsv"), &self.test)?;
        Ok(())
    }
}

/// Label indices of `instance` against an ordered label space; names outside
/// the space are skipped.
pub fn label_ids(labels: &[String], instance: &Instance) -> Vec<usize> {
    instance
        .labels
        .iter()
        .filter_map(|l| labels.binary_search(l).ok())
        .collect()
}

/// Paths for the three splits; `valid` and `test` are optional.
#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Optional file with one label name per line fixing the label space.
    pub labels: Option<PathBuf>,
}

pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus, DataError> {
    let read_opt = |p: &Option<PathBuf>| -> Result<Vec<Instance>, DataError> {
        p.as_ref().map_or(Ok(Vec::new()), |p| read_instances(p))
    };
    let train = read_instances(&paths.train)?;
    let valid = read_opt(&paths.valid)?;
    let test = read_opt(&paths.test)?;
    let space = match &paths.labels {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| io_err(p, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        ),
        None => None,
    };
    if train.is_empty() && valid.is_empty() && test.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Corpus::from_splits(train, valid, test, space)
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_instances(&text, &path.display().to_string())
}

pub fn parse_instances(text: &str, source_name: &str) -> Result<Vec<Instance>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((labels, body)) = line.split_once('\t') else {
            return Err(DataError::MissingLabelField {
                source_name: source_name.to_string(),
                line: line_no,
            });
        };
        let labels: Vec<&str> = labels.split_whitespace().collect();
        if labels.is_empty() {
            return Err(DataError::EmptyLabels {
                source_name: source_name.to_string(),
                line: line_no,
            });
        }
        out.push(Instance::new(body, &labels));
    }
    Ok(out)
}

pub fn format_instances(instances: &[Instance]) -> String {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&inst.labels.join(" "));
        s.push('\t');
        s.push_str(&inst.text.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<(), DataError> {
    fs::write(path, format_instances(instances)).map_err(|e| io_err(path, e))
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Dataset summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub labels: usize,
    /// Mean number of whitespace tokens per document.
    pub mean_length: f64,
    /// Mean size of the relevant label set.
    pub mean_labels: f64,
    /// Document frequency of every label in label-space order.
    pub label_frequency: Vec<(String, usize)>,
    pub distinct_combinations: usize,
}

impl CorpusStats {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "documents\t{}\nlabels\t{}\nmean_length\t{:.2}\nmean_labels\t{:.2}\ndistinct_combinations\t{}\n",
            self.documents, self.labels, self.mean_length, self.mean_labels, self.distinct_combinations
        );
        s.push_str("# label frequencies\n");
        for (l, f) in &self.label_frequency {
            s.push_str(&format!("{l}\t{f}\n"));
        }
        s
    }
}

pub fn corpus_stats<'a, I>(labels: &[String], docs: I) -> Result<CorpusStats, DataError>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let mut freq: BTreeMap<&str, usize> = labels.iter().map(|l| (l.as_str(), 0)).collect();
    let mut combos: BTreeSet<&[String]> = BTreeSet::new();
    let (mut n_docs, mut tokens, mut label_total) = (0usize, 0usize, 0usize);
    for doc in docs {
        n_docs += 1;
        tokens += doc.text.len();
        label_total += doc.labels.len();
        for l in &doc.labels {
            *freq.entry(l.as_str()).or_insert(0) += 1;
        }
        combos.insert(&doc.labels);
    }
    if n_docs == 0 {
        return Err(DataError::EmptyCorpus);
    }
    Ok(CorpusStats {
        documents: n_docs,
        labels: freq.len(),
        mean_length: tokens as f64 / n_docs as f64,
        mean_labels: label_total as f64 / n_docs as f64,
        label_frequency: freq.into_iter().map(|(l, f)| (l.to_string(), f)).collect(),
        distinct_combinations: combos.len(),
    })
}

impl Corpus {
    /// Statistics over all splits together.
    pub fn stats(&self) -> Result<CorpusStats, DataError> {
        corpus_stats(&self.labels, self.documents())
    }
}

/// Splits `0..len` into batches, shuffled deterministically by `(seed, epoch)`
/// when a seed is given. The final partial batch is kept.
pub fn batch_indices(len: usize, batch_size: usize, seed: Option<u64>, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Borrowing form of [`batch_indices`].
pub fn batches(
    items: &[Instance],
    batch_size: usize,
    seed: Option<u64>,
    epoch: u64,
) -> impl Iterator<Item = Vec<&Instance>> {
    batch_indices(items.len(), batch_size, seed, epoch)
        .into_iter()
        .map(move |b| b.into_iter().map(|i| &items[i]).collect())
}
