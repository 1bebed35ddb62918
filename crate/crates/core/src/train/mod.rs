//! Training loop, evaluation and run artifacts.

mod checkpoint;
mod config;
mod curve;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, KEYS};
pub use curve::{CurveLog, CurveRow};

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{AdamState, Graph, NodeId};
use crate::aux::{clcp_loss, plcp_loss, sample_clcp, sample_plcp, ClcpSample, PlcpSample};
use crate::data::{batch_indices, label_ids, Corpus, Instance, Split};
use crate::encoder::{JointSequence, Vocab};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, GroupBoundaries, PredFile, KL_EPSILON};
use crate::head::{mlc_loss, Prediction};
use crate::model::Model;

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const AUX_SALT: u64 = 0x4155_5853_414d_504c;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Other(#[from] Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    /// Validation micro-F1 reached 1.0.
    Perfect,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot at the best validation micro-F1.
    pub best: Checkpoint,
    /// Snapshot after the final step.
    pub last: Checkpoint,
    pub curve: CurveLog,
    /// Combined batch loss of every step.
    pub step_losses: Vec<f64>,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// Writes `best.ckpt`, `last.ckpt`, `vocab.txt`, `curve.csv` and `config.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.best.save(&dir.join("best.ckpt"))?;
        self.last.save(&dir.join("last.ckpt"))?;
        self.curve.write(&dir.join("curve.csv"))?;
        let cfg = dir.join("config.txt");
        fs::write(&cfg, self.best.config.to_text()).map_err(|e| Error::io(cfg, e))
    }
}

/// Per-instance multipliers that turn per-instance losses into batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mlc: f64,
    pub plcp: f64,
    pub clcp: f64,
}

/// Nodes of one instance's loss graph.
#[derive(Debug, Clone, Copy)]
pub struct InstanceLoss {
    pub loss: NodeId,
    pub mlc: NodeId,
    pub plcp: Option<NodeId>,
    pub clcp: Option<NodeId>,
    /// Label rows read by the classifier head.
    pub head_h_y: Option<NodeId>,
    /// Label rows read by the auxiliary heads.
    pub aux_h_y: Option<NodeId>,
}

/// One forward pass feeding the classifier and both auxiliary tasks.
#[allow(clippy::too_many_arguments)]
pub fn instance_loss<'a>(
    model: &'a Model,
    g: &mut Graph<'a>,
    seq: &JointSequence,
    gold: &[f64],
    plcp: &[PlcpSample],
    clcp: Option<&ClcpSample>,
    weights: LossWeights,
    detach_aux: bool,
) -> Result<InstanceLoss> {
    let f = model.forward(g, seq)?;
    let mlc = mlc_loss(g, f.probs, gold)?;
    let mut loss = g.scale(mlc, weights.mlc);
    let needs_aux = !plcp.is_empty() || clcp.is_some();
    let aux_h_y = match f.h_y {
        Some(h) if needs_aux => Some(if detach_aux { g.detach(h) } else { h }),
        None if needs_aux => return Err(Error::config("auxiliary tasks need label representations")),
        _ => None,
    };
    let mut plcp_node = None;
    if let (Some(h), Some((w, b))) = (aux_h_y, model.aux.plcp) {
        let (w, b) = (model.store.leaf(g, w), model.store.leaf(g, b));
        if let Some(l) = plcp_loss(g, h, plcp, w, b, model.aux.symmetric_plcp)? {
            let scaled = g.scale(l, weights.plcp);
            loss = g.add(loss, scaled)?;
            plcp_node = Some(l);
        }
    }
    let mut clcp_node = None;
    if let (Some(h), Some((w, b)), Some(sample)) = (aux_h_y, model.aux.clcp, clcp) {
        let (w, b) = (model.store.leaf(g, w), model.store.leaf(g, b));
        let l = clcp_loss(g, h, sample, w, b)?;
        let scaled = g.scale(l, weights.clcp);
        loss = g.add(loss, scaled)?;
        clcp_node = Some(l);
    }
    Ok(InstanceLoss {
        loss,
        mlc,
        plcp: plcp_node,
        clcp: clcp_node,
        head_h_y: f.h_y,
        aux_h_y,
    })
}

struct Prepared {
    seqs: Vec<JointSequence>,
    gold: Vec<Vec<usize>>,
    targets: Vec<Vec<f64>>,
}

fn prepare(model: &Model, labels: &[String], docs: &[Instance]) -> Result<Prepared> {
    let n = labels.len();
    let mut p = Prepared {
        seqs: Vec::with_capacity(docs.len()),
        gold: Vec::with_capacity(docs.len()),
        targets: Vec::with_capacity(docs.len()),
    };
    for d in docs {
        let ids = label_ids(labels, d);
        let mut t = vec![0.0; n];
        for &l in &ids {
            t[l] = 1.0;
        }
        p.seqs.push(model.sequence(d)?);
        p.gold.push(ids);
        p.targets.push(t);
    }
    Ok(p)
}

/// Thresholded predictions for `docs`.
pub fn predict_docs(model: &Model, labels: &[String], docs: &[Instance], threshold: f64) -> Result<PredFile> {
    let mut gold = Vec::with_capacity(docs.len());
    let mut pred = Vec::with_capacity(docs.len());
    for d in docs {
        gold.push(label_ids(labels, d));
        pred.push(model.predict(d, threshold)?.predicted);
    }
    PredFile::new(labels.to_vec(), gold, pred)
}

fn predict_prepared(model: &Model, labels: &[String], data: &Prepared, threshold: f64) -> Result<PredFile> {
    let mut pred = Vec::with_capacity(data.seqs.len());
    for seq in &data.seqs {
        let mut g = Graph::new();
        let f = model.forward(&mut g, seq)?;
        pred.push(Prediction::from_probs(g.value(f.probs).data().to_vec(), threshold)?.predicted);
    }
    PredFile::new(labels.to_vec(), data.gold.clone(), pred)
}

/// Builds the vocabulary and model from `config`, then trains.
pub fn train(config: &RunConfig, corpus: &Corpus) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let model = init_model(config, corpus)?;
    train_model(model, config, corpus)
}

/// Fresh model for `config` over the training split's vocabulary.
pub fn init_model(config: &RunConfig, corpus: &Corpus) -> Result<Model> {
    if corpus.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let vocab = Vocab::build(&corpus.train, &corpus.labels, config.min_freq)?;
    Model::new(config.model(), vocab, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Trains an existing model. Validation uses the valid split, or the
/// training split when no validation documents exist.
pub fn train_model(mut model: Model, config: &RunConfig, corpus: &Corpus) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if model.vocab.label_names() != corpus.labels {
        return Err(Error::LabelSpace("model and corpus label spaces differ".into()).into());
    }
    let labels = &corpus.labels;
    let n = labels.len();
    let train_set = prepare(&model, labels, &corpus.train)?;
    if train_set.seqs.is_empty() {
        return Err(Error::config("training split is empty").into());
    }
    let valid_docs = if corpus.valid.is_empty() {
        log::warn!("no validation split; validating on the training split");
        &corpus.train
    } else {
        &corpus.valid
    };
    let valid_set = prepare(&model, labels, valid_docs)?;
    let (wp, wc) = config.mode.weights(config.alpha)?;
    let mode = config.mode;

    let shuffle_seed = config.seed ^ SHUFFLE_SALT;
    let mut aux_rng = ChaCha8Rng::seed_from_u64(config.seed ^ AUX_SALT);
    let mut adam = AdamState::new(config.adam(), model.store.tensors());
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let mut epoch = 0u64;

    let started = Instant::now();
    let mut curve = CurveLog::default();
    let mut step_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut last_good = Checkpoint::capture(&model, config, &adam, 0, 0.0);
    let mut bad_evals = 0usize;
    let mut window = [0.0f64; 4];
    let mut window_steps = 0usize;
    let mut stop = StopReason::MaxSteps;
    let mut last_step = 0;

    for step in 1..=config.max_steps {
        last_step = step;
        if queue.is_empty() {
            queue.extend(batch_indices(train_set.seqs.len(), config.batch_size, Some(shuffle_seed), epoch));
            epoch += 1;
        }
        let batch = queue.pop_front().expect("refilled");

        let mut plcp_samples: Vec<Vec<PlcpSample>> = Vec::with_capacity(batch.len());
        let mut clcp_samples: Vec<Option<ClcpSample>> = Vec::with_capacity(batch.len());
        for &i in &batch {
            let gold = &train_set.gold[i];
            plcp_samples.push(if mode.uses_plcp() {
                let irrelevant: Vec<usize> = (0..n).filter(|l| gold.binary_search(l).is_err()).collect();
                sample_plcp(gold, &irrelevant, config.gamma, config.plcp_pairs, &mut aux_rng)
            } else {
                Vec::new()
            });
            clcp_samples.push(if mode.uses_clcp() { sample_clcp(gold, n, &mut aux_rng) } else { None });
        }
        let n_plcp = plcp_samples.iter().filter(|s| !s.is_empty()).count();
        let n_clcp = clcp_samples.iter().filter(|s| s.is_some()).count();
        let weights = LossWeights {
            mlc: 1.0 / batch.len() as f64,
            plcp: if n_plcp > 0 { wp / n_plcp as f64 } else { 0.0 },
            clcp: if n_clcp > 0 { wc / n_clcp as f64 } else { 0.0 },
        };

        let mut grads = model.store.zero_grads();
        let (mut s_mlc, mut s_plcp, mut s_clcp) = (0.0, 0.0, 0.0);
        for (j, &i) in batch.iter().enumerate() {
            let mut g = Graph::new();
            let parts = instance_loss(
                &model,
                &mut g,
                &train_set.seqs[i],
                &train_set.targets[i],
                &plcp_samples[j],
                clcp_samples[j].as_ref(),
                weights,
                config.detach_aux,
            )?;
            if !config.detach_aux {
                debug_assert!(parts.aux_h_y.is_none() || parts.aux_h_y == parts.head_h_y);
            }
            s_mlc += g.value(parts.mlc).item();
            s_plcp += parts.plcp.map_or(0.0, |l| g.value(l).item());
            s_clcp += parts.clcp.map_or(0.0, |l| g.value(l).item());
            let gr = g.backward(parts.loss).map_err(Error::from)?;
            gr.accumulate_into(&mut grads);
        }
        let l_mlc = s_mlc / batch.len() as f64;
        let l_plcp = if n_plcp > 0 { s_plcp / n_plcp as f64 } else { 0.0 };
        let l_clcp = if n_clcp > 0 { s_clcp / n_clcp as f64 } else { 0.0 };
        let total = l_mlc + wp * l_plcp + wc * l_clcp;
        if !total.is_finite() {
            return Err(TrainError::Diverged {
                step,
                reason: format!("loss is {total}"),
                last_good: Box::new(last_good),
            });
        }
        let (names, tensors) = model.store.split_mut();
        if let Err(e) = adam.step(names, tensors, &grads) {
            return Err(TrainError::Diverged {
                step,
                reason: e.to_string(),
                last_good: Box::new(last_good),
            });
        }
        step_losses.push(total);
        for (w, v) in window.iter_mut().zip([total, l_mlc, l_plcp, l_clcp]) {
            *w += v;
        }
        window_steps += 1;

        if step % config.eval_interval == 0 || step == config.max_steps {
            let pf = predict_prepared(&model, labels, &valid_set, config.threshold)?;
            let f1 = EvalReport::new(&pf).micro.f1;
            let k = window_steps as f64;
            curve.push(CurveRow {
                step,
                loss: window[0] / k,
                loss_mlc: window[1] / k,
                loss_plcp: window[2] / k,
                loss_clcp: window[3] / k,
                valid_micro_f1: f1,
                wall_secs: started.elapsed().as_secs_f64(),
            });
            log::info!("step {step}: loss {:.4} valid micro-F1 {f1:.4}", window[0] / k);
            window = [0.0; 4];
            window_steps = 0;
            if f1 > best_f1 {
                best_f1 = f1;
                bad_evals = 0;
                let snap = Checkpoint::capture(&model, config, &adam, step, f1);
                last_good = snap.clone();
                best = Some(snap);
            } else {
                bad_evals += 1;
            }
            if best_f1 >= 1.0 {
                stop = StopReason::Perfect;
                break;
            }
            if bad_evals >= config.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let best = best.expect("the final step always evaluates");
    let last = Checkpoint::capture(&model, config, &adam, last_step, best_f1);
    log::info!("stopped after {last_step} steps ({stop:?}); best valid micro-F1 {best_f1:.4}");
    Ok(TrainOutcome {
        best,
        last,
        curve,
        step_losses,
        stop,
    })
}

/// Predicts `split` with the checkpoint and computes the full report,
/// including frequency groups from the training split and the conditional
/// KL against the split's gold label sets.
pub fn evaluate(checkpoint: &Checkpoint, corpus: &Corpus, split: Split) -> Result<(EvalReport, PredFile)> {
    if checkpoint.labels != corpus.labels {
        return Err(Error::LabelSpace(format!(
            "checkpoint has {} labels, corpus has {}; the label spaces must match exactly",
            checkpoint.labels.len(),
            corpus.labels.len()
        )));
    }
    let model = checkpoint.model()?;
    let docs = corpus.split(split);
    if docs.is_empty() {
        return Err(Error::config(format!("split {split:?} is empty")));
    }
    let pf = predict_docs(&model, &corpus.labels, docs, checkpoint.config.threshold)?;
    Ok((report_for(&pf, corpus), pf))
}

/// Report with groups (when training documents exist) and KL against gold.
pub fn report_for(pf: &PredFile, corpus: &Corpus) -> EvalReport {
    let mut report = EvalReport::new(pf).with_kl(pf, &pf.gold, KL_EPSILON);
    if !corpus.train.is_empty() {
        let mut freq = vec![0usize; corpus.num_labels()];
        for d in &corpus.train {
            for l in corpus.label_ids(d) {
                freq[l] += 1;
            }
        }
        report = report.with_groups(pf, &freq, &GroupBoundaries::Mass);
    }
    report
}
