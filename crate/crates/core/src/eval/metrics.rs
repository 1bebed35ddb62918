use std::collections::BTreeSet;

/// Per-label confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Tally {
    pub fn scores(self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Precision, recall and F1 with `0/0 = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Confusion counts for every label. Label sets must be sorted.
pub fn tallies(gold: &[Vec<usize>], pred: &[Vec<usize>], n: usize) -> Vec<Tally> {
    let mut t = vec![Tally::default(); n];
    for (g, p) in gold.iter().zip(pred) {
        for &l in p {
            if g.binary_search(&l).is_ok() {
                t[l].tp += 1;
            } else {
                t[l].fp += 1;
            }
        }
        for &l in g {
            if p.binary_search(&l).is_err() {
                t[l].fn_ += 1;
            }
        }
    }
    t
}

/// Fraction of wrong label decisions over `N·n` positions.
pub fn hamming_loss(gold: &[Vec<usize>], pred: &[Vec<usize>], n: usize) -> f64 {
    if gold.is_empty() || n == 0 {
        return 0.0;
    }
    let wrong: usize = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            let common = g.iter().filter(|l| p.binary_search(l).is_ok()).count();
            g.len() + p.len() - 2 * common
        })
        .sum();
    wrong as f64 / (gold.len() * n) as f64
}

pub fn micro(t: &[Tally]) -> Prf {
    let (tp, fp, fn_) = t
        .iter()
        .fold((0, 0, 0), |a, x| (a.0 + x.tp, a.1 + x.fp, a.2 + x.fn_));
    Prf::from_counts(tp, fp, fn_)
}

/// Unweighted mean of per-label scores over `labels` (all labels when `None`).
pub fn macro_avg(t: &[Tally], labels: Option<&[usize]>) -> Prf {
    let idx: Vec<usize> = match labels {
        Some(l) => l.to_vec(),
        None => (0..t.len()).collect(),
    };
    if idx.is_empty() {
        return Prf::default();
    }
    let mut sum = Prf::default();
    for &i in &idx {
        let s = t[i].scores();
        sum.precision += s.precision;
        sum.recall += s.recall;
        sum.f1 += s.f1;
    }
    let k = idx.len() as f64;
    Prf {
        precision: sum.precision / k,
        recall: sum.recall / k,
        f1: sum.f1 / k,
    }
}

pub fn subset_accuracy(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    hits as f64 / gold.len() as f64
}

/// Number of distinct label sets.
pub fn distinct_sets(sets: &[Vec<usize>]) -> usize {
    sets.iter().collect::<BTreeSet<_>>().len()
}

/// How labels are split into four frequency groups.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum GroupBoundaries {
    /// Each group covers about a quarter of the label-occurrence mass.
    #[default]
    Mass,
    /// Rank cut points: group g holds ranks `[cuts[g-1], cuts[g])`.
    Ranks([usize; 3]),
}

/// Group index (0 = most frequent) of every label given training frequencies.
/// Labels are ranked by descending frequency, ties by index.
pub fn frequency_groups(freq: &[usize], boundaries: &GroupBoundaries) -> Vec<usize> {
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let total: usize = freq.iter().sum();
    let mut group = vec![0; freq.len()];
    let mut before = 0usize;
    for (rank, &l) in order.iter().enumerate() {
        group[l] = match boundaries {
            GroupBoundaries::Mass if total == 0 => (4 * rank / freq.len().max(1)).min(3),
            GroupBoundaries::Mass => (4 * before / total).min(3),
            GroupBoundaries::Ranks(cuts) => cuts.iter().filter(|&&c| rank >= c).count(),
        };
        before += freq[l];
    }
    group
}

/// Macro-F1 within each group; `None` for an empty group.
pub fn group_f1(t: &[Tally], groups: &[usize]) -> [Option<f64>; 4] {
    let mut out = [None; 4];
    for (g, slot) in out.iter_mut().enumerate() {
        let members: Vec<usize> = (0..groups.len()).filter(|&l| groups[l] == g).collect();
        if !members.is_empty() {
            *slot = Some(macro_avg(t, Some(&members)).f1);
        }
    }
    out
}

/// Result of [`conditional_kl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDistance {
    pub value: f64,
    /// No reference pair contributed; the value is 0 by convention.
    pub degenerate: bool,
}

pub const KL_EPSILON: f64 = 1e-6;

fn pair_counts(sets: &[Vec<usize>], n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut single = vec![0; n];
    let mut pair = vec![0; n * n];
    for s in sets {
        for &a in s {
            single[a] += 1;
            for &b in s {
                if a != b {
                    pair[a * n + b] += 1;
                }
            }
        }
    }
    (single, pair)
}

/// `Σ p^g(b|a) ln(p^g(b|a) / p^p(b|a))` over ordered pairs `a ≠ b`, with
/// `p(b|a) = #(a,b)/#(a)`. Reference zeros contribute nothing; model-side
/// zeros are floored at `epsilon`.
pub fn conditional_kl(reference: &[Vec<usize>], model: &[Vec<usize>], n: usize, epsilon: f64) -> KlDistance {
    let (rs, rp) = pair_counts(reference, n);
    let (ms, mp) = pair_counts(model, n);
    let mut value = 0.0;
    let mut terms = 0usize;
    for a in 0..n {
        if rs[a] == 0 {
            continue;
        }
        for b in 0..n {
            if a == b || rp[a * n + b] == 0 {
                continue;
            }
            let pg = rp[a * n + b] as f64 / rs[a] as f64;
            let pp = if ms[a] == 0 {
                0.0
            } else {
                mp[a * n + b] as f64 / ms[a] as f64
            };
            value += pg * (pg / pp.max(epsilon)).ln();
            terms += 1;
        }
    }
    KlDistance {
        value,
        degenerate: terms == 0,
    }
}
