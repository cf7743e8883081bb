use codetag::correction::TagVocabulary;
use codetag::ingest::TaggedDocument;
use codetag::models::{
    build_cnn, read_bundle, train, train_embed_lr, train_ngram_lr, write_bundle, ArchConfig, Architecture, BundleError,
    Features, ModelBundle, Schedule,
};
use codetag::nn::{Graph, Mode};
use codetag::synth::{motif_corpus, random_text, MotifCorpusConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_arch() -> ArchConfig {
    ArchConfig {
        filter_widths: vec![3, 5],
        filters_per_width: 8,
        dense_sizes: [16, 16],
        ..ArchConfig::default()
    }
}

fn vocab(n: usize) -> TagVocabulary {
    TagVocabulary::new((0..n).map(|i| format!("t{i}")).collect())
}

fn doc(id: u64, text: &str, tags: &[&str]) -> TaggedDocument {
    TaggedDocument {
        id,
        text: text.into(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        score: 0,
        snippet_count: 1,
    }
}

#[test]
fn build_is_deterministic_per_seed() {
    let a = build_cnn(ArchConfig::default(), vocab(7), 3).unwrap();
    let b = build_cnn(ArchConfig::default(), vocab(7), 3).unwrap();
    let c = build_cnn(ArchConfig::default(), vocab(7), 4).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    assert_eq!(a.params.get("output.weight").unwrap().shape(), &[512, 7]);
}

#[test]
fn probabilities_are_open_interval_and_sorted() {
    let m = build_cnn(small_arch(), vocab(5), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for len in [0, 1, 7, 50, 3000] {
        let ranked = m.predict_probs(&random_text(&mut rng, len)).unwrap();
        assert_eq!(ranked.len(), 5);
        assert!(ranked.iter().all(|(_, p)| *p > 0.0 && *p < 1.0));
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn ties_keep_vocabulary_order() {
    let m = build_cnn(small_arch(), vocab(4), 1).unwrap();
    let ranked = m.rank(&[0.2, 0.5, 0.5, 0.1]);
    let tags: Vec<&str> = ranked.iter().map(|(t, _)| t.as_str()).collect();
    assert_eq!(tags, ["t1", "t2", "t0", "t3"]);
}

#[test]
fn chunked_inference_matches_graph() {
    let mut m = build_cnn(small_arch(), vocab(3), 2).unwrap();
    // make running statistics non-trivial
    for (i, p) in ["bn0.running_mean", "bn1.running_var"].iter().enumerate() {
        m.params
            .get_mut(p)
            .unwrap()
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v += 0.1 * (k + i) as f32);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in [0, 4, 300, 5000] {
        let text = random_text(&mut rng, len);
        let f = m.architecture.featurize(&text);
        let fast = m.architecture.infer(&m.params, &f).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let mut store = m.params.clone();
        let p = m
            .architecture
            .forward(&mut g, &b, &mut store, &[&f], Mode::Infer)
            .unwrap();
        for (x, y) in fast.iter().zip(g.value(p).data()) {
            assert!((x - y).abs() < 1e-5, "len {len}: {x} vs {y}");
        }
        assert_eq!(store, m.params, "inference must not touch running statistics");
    }
}

#[test]
fn million_character_input() {
    let m = build_cnn(small_arch(), vocab(3), 2).unwrap();
    let text: String = "for (int i = 0; i < n; ++i) { sum += a[i]; }\n".repeat(23_000);
    assert!(text.chars().count() >= 1_000_000);
    let p = m.predict_raw(&text).unwrap();
    assert_eq!(p.len(), 3);
    assert!(p.iter().all(|v| v.is_finite()));
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let (docs, vocab) = motif_corpus(&MotifCorpusConfig::separable(100, 10), 5);
    let schedule = Schedule {
        max_epochs: 6,
        seed: 2,
        single_threaded: true,
        ..Schedule::default()
    };
    let run = || {
        train(
            build_cnn(small_arch(), vocab.clone(), 2).unwrap(),
            &docs,
            &[],
            &schedule,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.meta.loss_curve, b.meta.loss_curve);
    assert_eq!(a.params, b.params);
    let l: Vec<f64> = a.meta.loss_curve.iter().map(|e| e.train).collect();
    // two-epoch moving average
    let smooth: Vec<f64> = l.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    assert!(smooth.windows(2).take(4).all(|w| w[1] < w[0]), "{l:?}");
}

#[test]
fn validation_loss_uses_inference_mode() {
    let (docs, vocab) = motif_corpus(&MotifCorpusConfig::separable(60, 4), 8);
    let (tr, va) = docs.split_at(48);
    let schedule = Schedule {
        max_epochs: 1,
        ..Schedule::default()
    };
    let m = train(build_cnn(small_arch(), vocab.clone(), 1).unwrap(), tr, va, &schedule).unwrap();
    let recorded = m.meta.loss_curve[0].val.unwrap();
    let mut total = 0f64;
    for d in va {
        let p = m.predict_raw(&d.text).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            let y = d.tags.iter().any(|t| vocab.index_of(t) == Some(i)) as u8 as f64;
            let pi = pi as f64;
            total -= y * pi.ln() + (1.0 - y) * (1.0 - pi).ln();
        }
    }
    let expected = total / (va.len() * vocab.len()) as f64;
    assert!((recorded - expected).abs() < 1e-4, "{recorded} vs {expected}");
}

#[test]
fn early_stopping_restores_best_epoch() {
    let (docs, vocab) = motif_corpus(&MotifCorpusConfig::separable(80, 4), 3);
    // validation labels are shuffled, so validation loss stops improving quickly
    let mut val: Vec<TaggedDocument> = docs[60..].to_vec();
    let n = val.len();
    for i in 0..n {
        val[i].tags = docs[60 + (i + 1) % n].tags.clone();
    }
    let schedule = Schedule {
        max_epochs: 40,
        patience: 3,
        learning_rate: 1e-2,
        ..Schedule::default()
    };
    let m = train(build_cnn(small_arch(), vocab, 1).unwrap(), &docs[..60], &val, &schedule).unwrap();
    let curve = &m.meta.loss_curve;
    assert!(m.meta.epochs < 40);
    let best = curve
        .iter()
        .min_by(|a, b| a.val.unwrap().total_cmp(&b.val.unwrap()))
        .unwrap();
    assert_eq!(best.epoch, m.meta.best_epoch);
    assert_eq!(m.meta.epochs, m.meta.best_epoch + 3);
}

#[test]
fn empty_training_set_is_an_error() {
    let m = build_cnn(small_arch(), vocab(2), 1).unwrap();
    assert!(train(m, &[], &[], &Schedule::default()).is_err());
}

#[test]
fn ngram_lr_weights_the_discriminative_token() {
    let mut docs = Vec::new();
    for i in 0..40 {
        let text = if i % 2 == 0 {
            "x = foo + bar ; marker"
        } else {
            "x = foo + bar ;"
        };
        docs.push(doc(i, text, if i % 2 == 0 { &["t0"] } else { &[] }));
    }
    let schedule = Schedule {
        max_epochs: 30,
        learning_rate: 5e-2,
        ..Schedule::default()
    };
    let m = train_ngram_lr(&docs, &[], vocab(1), None, &schedule).unwrap();
    let Architecture::NgramLr(cfg) = &m.architecture else {
        panic!()
    };
    let w = m.params.get("output.weight").unwrap().data();
    let best = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    assert_eq!(cfg.vocab.entries()[best].0, "marker");

    // no known n-gram: output is the sigmoid of the bias
    let b = m.params.get("output.bias").unwrap().data()[0];
    let p = m.architecture.infer(&m.params, &Features::Counts(vec![])).unwrap()[0];
    assert!((p - 1.0 / (1.0 + (-b).exp())).abs() < 1e-6);

    let again = train_ngram_lr(&docs, &[], vocab(1), None, &schedule).unwrap();
    assert_eq!(m.params, again.params);
}

#[test]
fn embed_lr_is_order_free() {
    let (docs, vocab) = motif_corpus(&MotifCorpusConfig::separable(40, 3), 1);
    let schedule = Schedule {
        max_epochs: 2,
        ..Schedule::default()
    };
    let m = train_embed_lr(&docs, &[], vocab, &schedule).unwrap();
    assert_eq!(m.params.get("embedding").unwrap().shape(), &[101, 8]);
    let text = "while (x < 10) { x++; }";
    let mut rev: Vec<char> = text.chars().collect();
    rev.reverse();
    let rev: String = rev.into_iter().collect();
    assert_eq!(m.predict_raw(text).unwrap(), m.predict_raw(&rev).unwrap());
    let again = train_embed_lr(&docs, &[], m.vocab.clone(), &schedule).unwrap();
    assert_eq!(m.params, again.params);
}

fn round_trip(m: &ModelBundle) {
    let bytes = write_bundle(m).unwrap();
    let back = read_bundle(&bytes).unwrap();
    assert_eq!(&back, m);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let len = rand::Rng::random_range(&mut rng, 0..400);
        let t = random_text(&mut rng, len);
        let a: Vec<u32> = m.predict_raw(&t).unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.predict_raw(&t).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn bundles_round_trip_for_every_kind() {
    let (docs, vocab) = motif_corpus(&MotifCorpusConfig::separable(30, 3), 2);
    let schedule = Schedule {
        max_epochs: 1,
        ..Schedule::default()
    };
    round_trip(
        &train(
            build_cnn(small_arch(), vocab.clone(), 1).unwrap(),
            &docs,
            &[],
            &schedule,
        )
        .unwrap(),
    );
    round_trip(&train_embed_lr(&docs, &[], vocab.clone(), &schedule).unwrap());
    round_trip(&train_ngram_lr(&docs, &[], vocab, None, &schedule).unwrap());
}

#[test]
fn bundle_errors_are_distinct() {
    let m = build_cnn(small_arch(), vocab(2), 1).unwrap();
    let bytes = write_bundle(&m).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_bundle(&bad), Err(BundleError::BadMagic)));

    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        read_bundle(&newer),
        Err(BundleError::UnsupportedVersion { found: 2 })
    ));

    let cut = &bytes[..bytes.len() - 100];
    assert!(matches!(read_bundle(cut), Err(BundleError::Truncated { .. })));

    let mut flipped = bytes.clone();
    let k = bytes.len() - 50;
    flipped[k] ^= 0x40;
    assert!(matches!(read_bundle(&flipped), Err(BundleError::Checksum { .. })));

    let codes = [
        BundleError::BadMagic.code(),
        BundleError::UnsupportedVersion { found: 2 }.code(),
        BundleError::Truncated { offset: 0 }.code(),
        BundleError::Checksum { stored: 0, computed: 1 }.code(),
    ];
    let unique: std::collections::HashSet<_> = codes.iter().collect();
    assert_eq!(unique.len(), codes.len());
}
