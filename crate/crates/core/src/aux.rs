//! Label co-occurrence auxiliary tasks.
//!
//! *Pairwise* (PLCP): given two label vectors `[h_i; h_j]`, predict whether
//! both labels are relevant to the document. *Conditional* (CLCP): given the
//! mean vector of a sampled subset of the relevant labels, predict for every
//! other label whether it is relevant too. Both heads read the label rows of
//! the same encoder pass that feeds the classifier.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::autograd::{Graph, NodeId, ParamId, Tensor};
use crate::encoder::INIT_STD;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Which losses enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Mlc,
    Plcp,
    Clcp,
    Both,
}

impl Mode {
    pub fn uses_plcp(self) -> bool {
        matches!(self, Mode::Plcp | Mode::Both)
    }

    pub fn uses_clcp(self) -> bool {
        matches!(self, Mode::Clcp | Mode::Both)
    }

    /// Weights `(w_plcp, w_clcp)` applied to the auxiliary losses.
    pub fn weights(self, alpha: Option<f64>) -> Result<(f64, f64)> {
        match self {
            Mode::Mlc => Ok((0.0, 0.0)),
            Mode::Plcp => Ok((1.0, 0.0)),
            Mode::Clcp => Ok((0.0, 1.0)),
            Mode::Both => match alpha {
                Some(a) if a > 0.0 && a < 1.0 => Ok((a, 1.0 - a)),
                Some(a) => Err(Error::config(format!("alpha {a} must lie in (0, 1)"))),
                None => Err(Error::config("mode +both requires alpha")),
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mlc => "mlc",
            Mode::Plcp => "+plcp",
            Mode::Clcp => "+clcp",
            Mode::Both => "+both",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches('+') {
            "mlc" => Ok(Mode::Mlc),
            "plcp" => Ok(Mode::Plcp),
            "clcp" => Ok(Mode::Clcp),
            "both" => Ok(Mode::Both),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected mlc, +plcp, +clcp or +both)"
            ))),
        }
    }
}

/// `l_mlc + w_plcp·l_plcp + w_clcp·l_clcp` with weights from [`Mode::weights`].
pub fn combined_loss(l_mlc: f64, l_plcp: f64, l_clcp: f64, alpha: Option<f64>, mode: Mode) -> Result<f64> {
    let (wp, wc) = mode.weights(alpha)?;
    let mut total = l_mlc;
    if wp != 0.0 {
        total += wp * l_plcp;
    }
    if wc != 0.0 {
        total += wc * l_clcp;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlcpSample {
    pub first: usize,
    pub second: usize,
    /// `true` for IsCo-occur, `false` for NotCo-occur.
    pub co_occur: bool,
}

impl PlcpSample {
    /// Target implied by the instance: both labels relevant.
    pub fn derive_target(first: usize, second: usize, relevant: &[usize]) -> bool {
        relevant.contains(&first) && relevant.contains(&second)
    }
}

/// Draws `pairs` label pairs. Each is IsCo-occur (two distinct relevant
/// labels) with probability `γ/(1+γ)`, otherwise NotCo-occur (a relevant
/// label followed by an irrelevant one). Degenerate instances fall back to
/// whichever kind exists.
pub fn sample_plcp<R: Rng + ?Sized>(
    relevant: &[usize],
    irrelevant: &[usize],
    gamma: f64,
    pairs: usize,
    rng: &mut R,
) -> Vec<PlcpSample> {
    let can_pos = relevant.len() >= 2;
    let can_neg = !relevant.is_empty() && !irrelevant.is_empty();
    let p_pos = gamma / (1.0 + gamma);
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let positive = match (can_pos, can_neg) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => rng.random::<f64>() < p_pos,
        };
        let sample = if positive {
            let two: Vec<usize> = relevant.choose_multiple(rng, 2).copied().collect();
            PlcpSample {
                first: two[0],
                second: two[1],
                co_occur: true,
            }
        } else {
            PlcpSample {
                first: *relevant.choose(rng).expect("non-empty"),
                second: *irrelevant.choose(rng).expect("non-empty"),
                co_occur: false,
            }
        };
        out.push(sample);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClcpSample {
    /// Given subset `Y^G` of the relevant labels, ascending.
    pub given: Vec<usize>,
    /// `0` at given positions, `1` at positions to predict.
    pub positions: Vec<u8>,
    /// `(label, relevant)` for every position to predict, ascending by label.
    pub targets: Vec<(usize, bool)>,
}

impl ClcpSample {
    /// Builds the sample for an explicit given subset.
    pub fn new(relevant: &[usize], given: &[usize], num_labels: usize) -> Self {
        let mut given = given.to_vec();
        given.sort_unstable();
        let mut positions = vec![1u8; num_labels];
        for &g in &given {
            positions[g] = 0;
        }
        let targets = (0..num_labels)
            .filter(|&i| positions[i] == 1)
            .map(|i| (i, relevant.contains(&i)))
            .collect();
        Self {
            given,
            positions,
            targets,
        }
    }
}

/// Picks `s ~ Uniform{1..|Y⁺|-1}` then a uniform `s`-subset of the relevant
/// labels. Returns `None` (skip) when fewer than two labels are relevant.
pub fn sample_clcp<R: Rng + ?Sized>(
    relevant: &[usize],
    num_labels: usize,
    rng: &mut R,
) -> Option<ClcpSample> {
    if relevant.len() < 2 {
        return None;
    }
    let s = rng.random_range(1..relevant.len());
    sample_clcp_with_size(relevant, s, num_labels, rng)
}

/// As [`sample_clcp`] with a fixed subset size; `None` unless `1 <= s < |Y⁺|`.
pub fn sample_clcp_with_size<R: Rng + ?Sized>(
    relevant: &[usize],
    s: usize,
    num_labels: usize,
    rng: &mut R,
) -> Option<ClcpSample> {
    if s == 0 || s >= relevant.len() {
        return None;
    }
    let mut pool = relevant.to_vec();
    pool.shuffle(rng);
    Some(ClcpSample::new(relevant, &pool[..s], num_labels))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxParams {
    /// `1×2k` weights and scalar bias of the pairwise classifier.
    pub plcp: Option<(ParamId, ParamId)>,
    /// `1×2k` weights and scalar bias of the conditional classifier.
    pub clcp: Option<(ParamId, ParamId)>,
    pub symmetric_plcp: bool,
}

impl AuxParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        mode: Mode,
        hidden: usize,
        symmetric_plcp: bool,
        rng: &mut R,
    ) -> Self {
        let mut head = |name: &str, rng: &mut R| {
            (
                store.add(format!("aux.{name}_w"), Tensor::randn(&[1, 2 * hidden], INIT_STD, rng)),
                store.add(format!("aux.{name}_b"), Tensor::zeros(&[1])),
            )
        };
        let plcp = mode.uses_plcp().then(|| head("plcp", rng));
        let clcp = mode.uses_clcp().then(|| head("clcp", rng));
        Self {
            plcp,
            clcp,
            symmetric_plcp,
        }
    }
}

/// Scores `1×2k → 1` logits for each row of `features`.
fn logits(g: &mut Graph<'_>, features: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let z = g.matmul_t(features, w)?;
    Ok(g.add(z, b)?)
}

/// Mean BCE over the pairs of one instance. `None` when there are no samples.
pub fn plcp_loss(
    g: &mut Graph<'_>,
    h_y: NodeId,
    samples: &[PlcpSample],
    w: NodeId,
    b: NodeId,
    symmetric: bool,
) -> Result<Option<NodeId>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let firsts: Vec<usize> = samples.iter().map(|s| s.first).collect();
    let seconds: Vec<usize> = samples.iter().map(|s| s.second).collect();
    let hi = g.gather_rows(h_y, &firsts)?;
    let hj = g.gather_rows(h_y, &seconds)?;
    let forward = g.concat_cols(&[hi, hj])?;
    let mut z = logits(g, forward, w, b)?;
    if symmetric {
        let backward = g.concat_cols(&[hj, hi])?;
        let zb = logits(g, backward, w, b)?;
        let sum = g.add(z, zb)?;
        z = g.scale(sum, 0.5);
    }
    let p = g.sigmoid(z);
    let targets: Vec<f64> = samples.iter().map(|s| f64::from(u8::from(s.co_occur))).collect();
    let total = g.bce(p, &targets)?;
    Ok(Some(g.scale(total, 1.0 / samples.len() as f64)))
}

/// Summed BCE over the non-given positions of one CLCP sample.
pub fn clcp_loss(
    g: &mut Graph<'_>,
    h_y: NodeId,
    sample: &ClcpSample,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let given = g.gather_rows(h_y, &sample.given)?;
    let h_given = g.mean_rows(given)?;
    let scored: Vec<usize> = sample.targets.iter().map(|t| t.0).collect();
    let repeated = g.gather_rows(h_given, &vec![0; scored.len()])?;
    let rows = g.gather_rows(h_y, &scored)?;
    let features = g.concat_cols(&[repeated, rows])?;
    let z = logits(g, features, w, b)?;
    let p = g.sigmoid(z);
    let targets: Vec<f64> = sample.targets.iter().map(|t| f64::from(u8::from(t.1))).collect();
    Ok(g.bce(p, &targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn plcp_pairs_by_enumeration() {
        // a=0, b=1 relevant; c=2 irrelevant
        let samples = sample_plcp(&[0, 1], &[2], 0.5, 500, &mut rng());
        for s in &samples {
            if s.co_occur {
                assert!(matches!((s.first, s.second), (0, 1) | (1, 0)));
            } else {
                assert!(matches!((s.first, s.second), (0, 2) | (1, 2)));
            }
            assert_ne!(s.first, s.second);
            assert_eq!(PlcpSample::derive_target(s.first, s.second, &[0, 1]), s.co_occur);
        }
        assert!(samples.iter().any(|s| s.co_occur));
        assert!(samples.iter().any(|s| !s.co_occur));
    }

    #[test]
    fn plcp_ratio_follows_gamma() {
        let samples = sample_plcp(&[0, 1, 2], &[3, 4, 5], 0.5, 30_000, &mut rng());
        let frac = samples.iter().filter(|s| s.co_occur).count() as f64 / samples.len() as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn plcp_degenerate_sets() {
        let only_neg = sample_plcp(&[3], &[0, 1, 2], 0.5, 50, &mut rng());
        assert_eq!(only_neg.len(), 50);
        assert!(only_neg.iter().all(|s| !s.co_occur));
        let only_pos = sample_plcp(&[0, 1, 2], &[], 0.5, 50, &mut rng());
        assert!(only_pos.iter().all(|s| s.co_occur));
        assert!(sample_plcp(&[0], &[], 0.5, 10, &mut rng()).is_empty());
    }

    #[test]
    fn clcp_targets_by_definition() {
        let s = ClcpSample::new(&[0, 1, 2], &[0], 6);
        assert_eq!(s.positions, vec![0, 1, 1, 1, 1, 1]);
        assert_eq!(
            s.targets,
            vec![(1, true), (2, true), (3, false), (4, false), (5, false)]
        );
    }

    #[test]
    fn clcp_forced_size_one_of_two() {
        let s = sample_clcp_with_size(&[2, 5], 1, 8, &mut rng()).unwrap();
        assert_eq!(s.targets.iter().filter(|t| t.1).count(), 1);
        assert_eq!(s.given.len(), 1);
        assert!(sample_clcp(&[4], 8, &mut rng()).is_none());
        assert!(sample_clcp_with_size(&[2, 5], 2, 8, &mut rng()).is_none());
    }

    #[test]
    fn clcp_subset_size_is_uniform() {
        let mut r = rng();
        let draws = 10_000;
        let ones = (0..draws)
            .filter(|_| sample_clcp(&[1, 4, 7], 10, &mut r).unwrap().given.len() == 1)
            .count();
        let frac = ones as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn clcp_never_leaks() {
        let mut r = rng();
        let relevant = [0, 3, 4, 9];
        for _ in 0..500 {
            let s = sample_clcp(&relevant, 12, &mut r).unwrap();
            assert!(s.given.iter().all(|g| relevant.contains(g)));
            assert!(s.targets.iter().all(|(l, _)| !s.given.contains(l)));
            let positives: Vec<usize> = s.targets.iter().filter(|t| t.1).map(|t| t.0).collect();
            let expected: Vec<usize> = relevant.iter().copied().filter(|l| !s.given.contains(l)).collect();
            assert_eq!(positives, expected);
            assert_eq!(s.positions.iter().filter(|&&p| p == 0).count(), s.given.len());
        }
    }

    fn zero_head(g: &mut Graph<'_>, k: usize) -> (NodeId, NodeId) {
        (g.constant(Tensor::zeros(&[1, 2 * k])), g.constant(Tensor::zeros(&[1])))
    }

    #[test]
    fn zero_heads_give_ln2() {
        let mut r = rng();
        let mut g = Graph::new();
        let hy = g.constant(Tensor::uniform(&[54, 6], -1.0, 1.0, &mut r));
        let (w, b) = zero_head(&mut g, 6);
        let pair = [PlcpSample {
            first: 0,
            second: 3,
            co_occur: true,
        }];
        let l = plcp_loss(&mut g, hy, &pair, w, b, false).unwrap().unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-9);
        let sample = ClcpSample::new(&[1, 2, 7], &[2], 54);
        let l = clcp_loss(&mut g, hy, &sample, w, b).unwrap();
        assert!((g.value(l).item() - 53.0 * 2f64.ln()).abs() < 1e-9);
        assert!((g.value(l).item() - 36.74).abs() < 0.01);
    }

    #[test]
    fn hand_evaluated_losses() {
        // A single-feature head whose logit is exactly the first coordinate of h_j.
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let mut g = Graph::new();
        let hy = g.constant(Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, logit(0.8)],
        ]));
        let w = g.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0, 1.0]]));
        let b = g.constant(Tensor::zeros(&[1]));
        let pair = [PlcpSample {
            first: 0,
            second: 1,
            co_occur: true,
        }];
        let l = plcp_loss(&mut g, hy, &pair, w, b, false).unwrap().unwrap();
        assert!((g.value(l).item() - 0.2231).abs() < 1e-4);

        // n = 3, given {0}; targets [1, 0] with probs [0.9, 0.1].
        let mut g = Graph::new();
        let hy = g.constant(Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, logit(0.9)],
            vec![0.0, logit(0.1)],
        ]));
        let w = g.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0, 1.0]]));
        let b = g.constant(Tensor::zeros(&[1]));
        let sample = ClcpSample::new(&[0, 1], &[0], 3);
        let l = clcp_loss(&mut g, hy, &sample, w, b).unwrap();
        let expected = -(0.9f64.ln() + 0.9f64.ln());
        assert!((g.value(l).item() - expected).abs() < 1e-12);
        assert!((g.value(l).item() - 0.2107).abs() < 1e-4);
    }

    #[test]
    fn symmetric_head_ignores_order() {
        let mut r = rng();
        let mut g = Graph::new();
        let hy = g.constant(Tensor::uniform(&[5, 4], -1.0, 1.0, &mut r));
        let w = g.constant(Tensor::uniform(&[1, 8], -1.0, 1.0, &mut r));
        let b = g.constant(Tensor::vector(vec![0.1]));
        let ab = [PlcpSample { first: 1, second: 3, co_occur: true }];
        let ba = [PlcpSample { first: 3, second: 1, co_occur: true }];
        let l1 = plcp_loss(&mut g, hy, &ab, w, b, true).unwrap().unwrap();
        let l2 = plcp_loss(&mut g, hy, &ba, w, b, true).unwrap().unwrap();
        assert!((g.value(l1).item() - g.value(l2).item()).abs() < 1e-15);
        let l3 = plcp_loss(&mut g, hy, &ab, w, b, false).unwrap().unwrap();
        let l4 = plcp_loss(&mut g, hy, &ba, w, b, false).unwrap().unwrap();
        assert_ne!(g.value(l3).item(), g.value(l4).item());
    }

    #[test]
    fn given_order_does_not_matter() {
        let mut r = rng();
        let mut g = Graph::new();
        let hy = g.constant(Tensor::uniform(&[6, 3], -1.0, 1.0, &mut r));
        let w = g.constant(Tensor::uniform(&[1, 6], -1.0, 1.0, &mut r));
        let b = g.constant(Tensor::vector(vec![0.0]));
        let a = ClcpSample::new(&[0, 2, 4, 5], &[4, 0, 2], 6);
        let mut c = a.clone();
        c.given = vec![2, 4, 0];
        let la = clcp_loss(&mut g, hy, &a, w, b).unwrap();
        let lc = clcp_loss(&mut g, hy, &c, w, b).unwrap();
        assert!((g.value(la).item() - g.value(lc).item()).abs() < 1e-14);
    }

    #[test]
    fn combined_objective() {
        let v = combined_loss(1.0, 0.5, 0.2, Some(0.4), Mode::Both).unwrap();
        assert!((v - 1.32).abs() < 1e-12);
        assert_eq!(combined_loss(1.0, 0.5, 0.2, None, Mode::Mlc).unwrap(), 1.0);
        assert_eq!(combined_loss(1.0, 0.5, 0.2, None, Mode::Plcp).unwrap(), 1.5);
        assert_eq!(combined_loss(1.0, 0.5, 0.2, None, Mode::Clcp).unwrap(), 1.2);
        assert!(combined_loss(1.0, 0.5, 0.2, Some(1.0), Mode::Both).is_err());
        assert!(combined_loss(1.0, 0.5, 0.2, None, Mode::Both).is_err());
        // linear and increasing in alpha when l_plcp > l_clcp
        let f = |a: f64| combined_loss(1.0, 0.5, 0.2, Some(a), Mode::Both).unwrap();
        let grid: Vec<f64> = (1..100).map(|i| f(i as f64 / 100.0)).collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("+clcp".parse::<Mode>().unwrap(), Mode::Clcp);
        assert_eq!("mlc".parse::<Mode>().unwrap(), Mode::Mlc);
        assert_eq!(Mode::Both.to_string().parse::<Mode>().unwrap(), Mode::Both);
        assert!("nope".parse::<Mode>().is_err());
    }
}
