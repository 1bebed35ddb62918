mod common;

use common::{check_params, tiny_config, tiny_model};
use laco::autograd::{Graph, Tensor};
use laco::encoder::{encode, PAD};
use laco::head::{compatibility, cross_attention, mlc_loss, mlc_loss_value, CaWeights};
use laco::model::{Model, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Replaces every weight with a wider draw so gradients are far from zero.
fn widen(model: &mut Model, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = model.store.names().to_vec();
    for name in names {
        if name.contains("_gain") {
            continue;
        }
        let id = model.store.id(&name).unwrap();
        for v in model.store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

fn gold_for(model: &Model, doc: &laco::data::Instance) -> Vec<f64> {
    let labels = model.vocab.label_names();
    labels
        .iter()
        .map(|l| f64::from(u8::from(doc.labels.contains(l))))
        .collect()
}

#[test]
fn mlc_gradient_reaches_every_embedding_table() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 5 {
        seed += 1;
        assert!(seed < 50, "too many near-kink draws");
        let (mut model, docs) = tiny_model(tiny_config(), 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        widen(&mut model, &mut rng);
        let seq = model.sequence(&docs[0]).unwrap();
        let gold = gold_for(&model, &docs[0]);
        let ids = [model.encoder.token_emb, model.encoder.position_emb, model.encoder.segment_emb];
        let report = check_params(&mut model, &ids, 25, &mut rng, |m, g| {
            let f = m.forward(g, &seq).unwrap();
            mlc_loss(g, f.probs, &gold).unwrap()
        });
        if report.kink_margin < 1e-6 {
            continue;
        }
        assert!(report.max_error < 1e-4, "seed {seed}: {}", report.max_error);
        checked += 1;
    }
}

#[test]
fn padding_never_changes_outputs() {
    for seed in 0..5 {
        let (model, docs) = tiny_model(tiny_config(), 4, seed);
        let seq = model.sequence(&docs[1]).unwrap();
        let mut padded = seq.clone();
        padded.pad_to(seq.len() + 6);
        let mut other = padded.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut other.token_ids[seq.len()..] {
            *t = rng.random_range(0..model.vocab.len());
        }
        // permute the padding-only positions' contents
        other.token_ids[seq.len()..].reverse();

        let run = |s: &laco::encoder::JointSequence| {
            let mut g = Graph::new();
            let out = encode(&mut g, &model.store, &model.encoder, s).unwrap();
            (g.value(out.h_d).clone(), g.value(out.h_y).clone())
        };
        let (d0, y0) = run(&seq);
        let (d1, y1) = run(&padded);
        let (d2, y2) = run(&other);
        assert_eq!(d1, d2);
        assert_eq!(y1, y2);
        for (a, b) in d0.data().iter().chain(y0.data()).zip(d1.data().iter().chain(y1.data())) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(padded.token_ids[seq.len()], PAD);
    }
}

#[test]
fn label_rows_depend_on_document_words() {
    for seed in 0..10 {
        let (model, docs) = tiny_model(tiny_config(), 4, seed);
        let mut seq = model.sequence(&docs[2]).unwrap();
        let h_y = |s: &laco::encoder::JointSequence| {
            let mut g = Graph::new();
            let out = encode(&mut g, &model.store, &model.encoder, s).unwrap();
            g.value(out.h_y).clone()
        };
        let before = h_y(&seq);
        let pos = seq.doc_span.start;
        let word = seq.token_ids[pos];
        seq.token_ids[pos] = if word + 1 < model.vocab.len() { word + 1 } else { word - 1 };
        assert_ne!(h_y(&seq), before, "seed {seed}");
    }
}

#[test]
fn zero_layers_give_embedding_sums() {
    let (model, docs) = tiny_model(ModelConfig { layers: 0, ..tiny_config() }, 3, 7);
    let seq = model.sequence(&docs[0]).unwrap();
    let mut g = Graph::new();
    let out = encode(&mut g, &model.store, &model.encoder, &seq).unwrap();
    let h_y = g.value(out.h_y);
    let tok = model.store.get(model.encoder.token_emb);
    let pos = model.store.get(model.encoder.position_emb);
    let seg = model.store.get(model.encoder.segment_emb);
    for (r, p) in seq.label_span.clone().enumerate() {
        for c in 0..8 {
            let want = tok.at(seq.token_ids[p], c) + pos.at(p, c) + seg.at(1, c);
            assert_eq!(h_y.at(r, c), want);
        }
    }
}

#[test]
fn ablation_without_je_and_ca_has_plain_head() {
    let (model, docs) = tiny_model(ModelConfig { no_je: true, no_ca: true, ..tiny_config() }, 4, 1);
    assert!(model.head.conv_filters.is_none());
    assert!(model.head.label_emb.is_none());
    let seq = model.sequence(&docs[0]).unwrap();
    assert!(seq.label_span.is_empty());
    assert_eq!(seq.segment_ids.iter().max(), Some(&0));
    assert!(model.store.names().iter().all(|n| !n.starts_with("head.conv")));
    let mut g = Graph::new();
    let f = model.forward(&mut g, &seq).unwrap();
    assert!(f.h_y.is_none() && f.ca.is_none());
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_a_distribution_and_c_stays_in_hull(
        m in 1usize..9,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, f, w) = (3, 4, 5, 3);
        let h_d = Tensor::uniform(&[m, k], -1.0, 1.0, &mut rng);
        let h_y = Tensor::uniform(&[n, k], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let hd = g.constant(h_d.clone());
        let hy = g.constant(h_y);
        let mm = compatibility(&mut g, hd, hy).unwrap();
        let weights = CaWeights {
            filters: g.constant(Tensor::uniform(&[f, w, n], -1.0, 1.0, &mut rng)),
            bias: g.constant(Tensor::uniform(&[f], -0.5, 0.5, &mut rng)),
            window: w,
        };
        let ca = cross_attention(&mut g, mm, hd, weights).unwrap();
        let beta = g.value(ca.beta.unwrap()).data().to_vec();
        prop_assert!(beta.iter().all(|&b| b >= 0.0));
        prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let c = g.value(ca.c);
        for col in 0..k {
            let column: Vec<f64> = (0..m).map(|r| h_d.at(r, col)).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.at(0, col) >= lo - 1e-12 && c.at(0, col) <= hi + 1e-12);
        }
    }

    #[test]
    fn mlc_loss_is_permutation_equivariant(
        probs in prop::collection::vec(0.001f64..0.999, 1..20),
        bits in prop::collection::vec(any::<bool>(), 20),
        seed in any::<u64>(),
    ) {
        let n = probs.len();
        let gold: Vec<f64> = bits[..n].iter().map(|&b| f64::from(u8::from(b))).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let pp: Vec<f64> = perm.iter().map(|&i| probs[i]).collect();
        let pg: Vec<f64> = perm.iter().map(|&i| gold[i]).collect();
        let a = mlc_loss_value(&probs, &gold);
        let b = mlc_loss_value(&pp, &pg);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn compatibility_matches_dot_products(hd in matrix(3, 4), hy in matrix(2, 4)) {
        let mut g = Graph::new();
        let a = g.constant(hd.clone());
        let b = g.constant(hy.clone());
        let m = compatibility(&mut g, a, b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let dot: f64 = (0..4).map(|c| hd.at(i, c) * hy.at(j, c)).sum();
                prop_assert!((g.value(m).at(i, j) - dot).abs() < 1e-12);
            }
        }
    }
}
