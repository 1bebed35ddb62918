#![allow(dead_code)]

use laco::autograd::gradcheck::relative_error;
use laco::autograd::{Graph, NodeId, ParamId};
use laco::data::{Corpus, Instance};
use laco::encoder::Vocab;
use laco::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Result of comparing tape and finite-difference gradients of model parameters.
pub struct ParamCheck {
    pub max_error: f64,
    pub kink_margin: f64,
}

/// Compares tape gradients of `loss` against central differences on
/// `coords` random positions of each listed parameter.
pub fn check_params<F>(model: &mut Model, ids: &[ParamId], coords: usize, rng: &mut ChaCha8Rng, loss: F) -> ParamCheck
where
    F: for<'a> Fn(&'a Model, &mut Graph<'a>) -> NodeId,
{
    let picks: Vec<Vec<usize>> = ids
        .iter()
        .map(|&id| {
            let len = model.store.get(id).numel();
            (0..coords.min(len)).map(|_| rng.random_range(0..len)).collect()
        })
        .collect();
    let (analytic, kink_margin) = {
        let m: &Model = model;
        let mut g = Graph::new();
        let l = loss(m, &mut g);
        let margin = g.kink_margin();
        let grads = g.backward(l).unwrap();
        let a: Vec<Vec<f64>> = ids
            .iter()
            .zip(&picks)
            .map(|(&id, pk)| {
                let full = grads.param(id);
                pk.iter().map(|&j| full.map_or(0.0, |gr| gr[j])).collect()
            })
            .collect();
        (a, margin)
    };
    let value = |m: &Model| {
        let mut g = Graph::new();
        let l = loss(m, &mut g);
        g.value(l).item()
    };
    let mut max_error: f64 = 0.0;
    for ((&id, pk), a) in ids.iter().zip(&picks).zip(&analytic) {
        let numeric: Vec<f64> = pk
            .iter()
            .map(|&j| {
                let orig = model.store.get(id).data()[j];
                model.store.get_mut(id).data_mut()[j] = orig + STEP;
                let up = value(model);
                model.store.get_mut(id).data_mut()[j] = orig - STEP;
                let down = value(model);
                model.store.get_mut(id).data_mut()[j] = orig;
                (up - down) / (2.0 * STEP)
            })
            .collect();
        max_error = max_error.max(relative_error(a, &numeric));
    }
    ParamCheck {
        max_error,
        kink_margin,
    }
}

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

/// Random documents over a small word list with 1–3 labels each.
pub fn random_docs(count: usize, n: usize, len: std::ops::RangeInclusive<usize>, rng: &mut ChaCha8Rng) -> Vec<Instance> {
    let names = labels(n);
    (0..count)
        .map(|_| {
            let m = rng.random_range(len.clone());
            let words: Vec<String> = (0..m).map(|_| format!("w{}", rng.random_range(0..30))).collect();
            let k = rng.random_range(1..=3.min(n));
            let ls: Vec<&str> = (0..k).map(|_| names[rng.random_range(0..n)].as_str()).collect();
            Instance::new(&words.join(" "), &ls)
        })
        .collect()
}

/// A small randomly initialised model over random documents.
pub fn tiny_model(config: ModelConfig, n: usize, seed: u64) -> (Model, Vec<Instance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = random_docs(12, n, 3..=8, &mut rng);
    let vocab = Vocab::build(&docs, &labels(n), 1).unwrap();
    let model = Model::new(config, vocab, &mut rng).unwrap();
    (model, docs)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        ff_hidden: 16,
        max_len: 32,
        window: 3,
        filters: 4,
        ..ModelConfig::default()
    }
}

pub fn corpus_of(docs: Vec<Instance>) -> Corpus {
    Corpus::from_splits(docs, vec![], vec![], None).unwrap()
}
