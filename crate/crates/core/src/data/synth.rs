use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, label_ids, Corpus, DataError, Instance};

/// Generative description of a synthetic corpus with planted label structure.
///
/// Each document draws an anchor label from a power-law marginal profile,
/// then adds every other label `j` with probability `affinity[anchor][j]`
/// (clipped to 1). Its text mixes keywords of the chosen labels with noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub labels: usize,
    /// Anchor probability of label `i` is proportional to `(i + 1)^-exponent`.
    pub exponent: f64,
    /// `affinity[a][j]`: probability that `j` joins a set anchored at `a`.
    pub affinity: Vec<Vec<f64>>,
    pub keywords_per_label: usize,
    /// Inclusive range of document lengths in tokens.
    pub doc_length: (usize, usize),
    pub noise_rate: f64,
    pub noise_vocab: usize,
    pub train_docs: usize,
    pub valid_docs: usize,
    pub test_docs: usize,
    /// Expected label-set size the caller is aiming for, if any.
    pub target_cardinality: Option<f64>,
}

impl SynthSpec {
    /// A spec with no affinities (single-label documents).
    pub fn new(labels: usize, exponent: f64) -> Self {
        Self {
            labels,
            exponent,
            affinity: vec![vec![0.0; labels]; labels],
            keywords_per_label: 4,
            doc_length: (12, 20),
            noise_rate: 0.5,
            noise_vocab: 200,
            train_docs: 1000,
            valid_docs: 100,
            test_docs: 100,
            target_cardinality: None,
        }
    }

    /// Long-tail profile with a planted dependency structure: every label
    /// past the first `hubs` has a parent hub it pulls in almost surely
    /// (`affinity[child][parent] = strong`), while a hub pulls in each of
    /// its children only rarely (`affinity[parent][child] = weak`).
    pub fn long_tail(labels: usize, exponent: f64, hubs: usize, strong: f64, weak: f64) -> Self {
        let mut spec = Self::new(labels, exponent);
        let hubs = hubs.clamp(1, labels);
        for child in hubs..labels {
            let parent = child % hubs;
            spec.affinity[child][parent] = strong;
            spec.affinity[parent][child] = weak;
        }
        spec
    }

    pub fn label_names(&self) -> Vec<String> {
        let width = self.labels.saturating_sub(1).to_string().len().max(2);
        (0..self.labels).map(|i| format!("t{i:0width$}")).collect()
    }

    pub fn anchor_distribution(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.labels)
            .map(|i| ((i + 1) as f64).powf(-self.exponent))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Inclusion probability of `j` in a set anchored at `a`.
    fn inclusion(&self, a: usize, j: usize) -> f64 {
        if a == j {
            1.0
        } else {
            self.affinity[a][j].min(1.0)
        }
    }

    pub fn expected_cardinality(&self) -> f64 {
        let pi = self.anchor_distribution();
        (0..self.labels)
            .map(|a| pi[a] * (0..self.labels).map(|j| self.inclusion(a, j)).sum::<f64>())
            .sum()
    }

    /// Exact pairwise co-occurrence probabilities implied by the spec;
    /// the diagonal holds the marginals.
    pub fn truth_table(&self) -> CooccurrenceTable {
        let n = self.labels;
        let pi = self.anchor_distribution();
        let mut p = vec![vec![0.0; n]; n];
        for (a, &pa) in pi.iter().enumerate() {
            for i in 0..n {
                let qi = self.inclusion(a, i);
                if qi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    p[i][j] += if i == j {
                        pa * qi
                    } else {
                        pa * qi * self.inclusion(a, j)
                    };
                }
            }
        }
        CooccurrenceTable {
            labels: self.label_names(),
            p,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSynthSpec(m.to_string()));
        if self.labels == 0 {
            return bad("at least one label required");
        }
        if !(self.exponent.is_finite() && self.exponent >= 0.0) {
            return bad("exponent must be finite and non-negative");
        }
        if self.affinity.len() != self.labels || self.affinity.iter().any(|r| r.len() != self.labels) {
            return bad("affinity must be an n x n matrix");
        }
        if self.affinity.iter().flatten().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("affinities must be finite and non-negative");
        }
        if self.keywords_per_label == 0 {
            return bad("keywords_per_label must be positive");
        }
        if self.doc_length.0 == 0 || self.doc_length.0 > self.doc_length.1 {
            return bad("doc_length must be a non-empty range starting at 1 or more");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1)");
        }
        if self.noise_rate > 0.0 && self.noise_vocab == 0 {
            return bad("noise_vocab must be positive when noise_rate > 0");
        }
        Ok(())
    }

    fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let wants_sets = self.target_cardinality.is_some_and(|c| c > 1.0);
        if wants_sets {
            let names = self.label_names();
            for i in 0..self.labels {
                let isolated = (0..self.labels)
                    .filter(|&j| j != i)
                    .all(|j| self.affinity[i][j] == 0.0 && self.affinity[j][i] == 0.0);
                if isolated {
                    out.push(format!(
                        "label {} has no affinities; it only ever appears alone",
                        names[i]
                    ));
                }
            }
        }
        for w in &out {
            log::warn!("{w}");
        }
        out
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticCorpus, DataError> {
        self.validate()?;
        let warnings = self.warnings();
        let names = self.label_names();
        let anchors = WeightedIndex::new(self.anchor_distribution())
            .map_err(|e| DataError::InvalidSynthSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Instance> {
            (0..count)
                .map(|_| self.draw_document(&names, &anchors, rng))
                .collect()
        };
        let train = draw(self.train_docs, &mut rng);
        let valid = draw(self.valid_docs, &mut rng);
        let test = draw(self.test_docs, &mut rng);
        let mut corpus = Corpus {
            labels: names,
            train,
            valid,
            test,
        };
        corpus.labels.sort();
        Ok(SyntheticCorpus {
            corpus,
            truth: self.truth_table(),
            warnings,
        })
    }

    fn draw_document(
        &self,
        names: &[String],
        anchors: &WeightedIndex<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Instance {
        let anchor = anchors.sample(rng);
        let mut set = Vec::new();
        for j in 0..self.labels {
            let p = self.inclusion(anchor, j);
            if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                set.push(j);
            }
        }
        let len = rng.random_range(self.doc_length.0..=self.doc_length.1);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if self.noise_rate > 0.0 && rng.random::<f64>() < self.noise_rate {
                words.push(format!("w{}", rng.random_range(0..self.noise_vocab)));
            } else {
                let label = set[rng.random_range(0..set.len())];
                let k = rng.random_range(0..self.keywords_per_label);
                words.push(format!("{}k{k}", names[label]));
            }
        }
        let labels: Vec<&str> = set.iter().map(|&j| names[j].as_str()).collect();
        Instance::new(&words.join(" "), &labels)
    }
}

/// A generated corpus with the exact generative co-occurrence table.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: CooccurrenceTable,
    pub warnings: Vec<String>,
}

impl SyntheticCorpus {
    /// Writes the three splits, `labels.txt` and `truth.tsv`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        self.corpus.save(dir)?;
        let labels = dir.join("labels.txt");
        fs::write(&labels, self.corpus.labels.join("\n") + "\n").map_err(|e| io_err(&labels, e))?;
        self.truth.write(&dir.join("truth.tsv"))
    }
}

/// Pairwise co-occurrence probabilities (diagonal: marginals).
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    pub labels: Vec<String>,
    pub p: Vec<Vec<f64>>,
}

impl CooccurrenceTable {
    /// Empirical table: fraction of documents containing both labels.
    pub fn empirical<'a, I>(labels: &[String], docs: I) -> Self
    where
        I: IntoIterator<Item = &'a Instance>,
    {
        let n = labels.len();
        let mut counts = vec![vec![0usize; n]; n];
        let mut total = 0usize;
        for doc in docs {
            total += 1;
            let ids = label_ids(labels, doc);
            for &i in &ids {
                for &j in &ids {
                    counts[i][j] += 1;
                }
            }
        }
        let denom = total.max(1) as f64;
        Self {
            labels: labels.to_vec(),
            p: counts
                .into_iter()
                .map(|r| r.into_iter().map(|c| c as f64 / denom).collect())
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = self.labels.join("\t");
        s.push('\n');
        for row in &self.p {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self, DataError> {
        let mut lines = text.lines();
        let labels: Vec<String> = lines
            .next()
            .unwrap_or_default()
            .split('\t')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let mut p = Vec::new();
        for (i, line) in lines.enumerate() {
            let err = |reason: String| DataError::Matrix {
                source_name: source_name.to_string(),
                line: i + 2,
                reason,
            };
            let row: Vec<f64> = line
                .split('\t')
                .map(|c| c.parse::<f64>().map_err(|e| err(e.to_string())))
                .collect::<Result<_, _>>()?;
            if row.len() != labels.len() {
                return Err(err(format!("{} cells, expected {}", row.len(), labels.len())));
            }
            p.push(row);
        }
        if p.len() != labels.len() {
            return Err(DataError::Matrix {
                source_name: source_name.to_string(),
                line: p.len() + 2,
                reason: format!("{} rows, expected {}", p.len(), labels.len()),
            });
        }
        Ok(Self { labels, p })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.p
            .iter()
            .flatten()
            .zip(other.p.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
