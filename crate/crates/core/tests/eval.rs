use codetag::correction::TagVocabulary;
use codetag::eval::{
    argmax, embedding_projection_2d, evaluate_scores, pca_2d, roc_auc, roc_curve, sloc_per_sec, throughput_bench,
    top1_from_scores, EvalError,
};
use codetag::ingest::TaggedDocument;
use codetag::models::{build_cnn, ArchConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(P·N) count of concordant pairs, ties counted half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0f64, 0f64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn doc(tags: &[&str]) -> TaggedDocument {
    TaggedDocument {
        id: 0,
        text: String::new(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        score: 0,
        snippet_count: 1,
    }
}

#[test]
fn auc_examples() {
    assert_eq!(
        roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).unwrap(),
        Some(0.75)
    );
    assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), Some(1.0));
    assert_eq!(roc_auc(&[0.9, 0.8], &[true, true]).unwrap(), None);
    assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), Some(0.5));
    assert!(matches!(
        roc_auc(&[0.1], &[true, false]),
        Err(EvalError::LengthMismatch { .. })
    ));
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for k in 0..1000 {
        let n = rng.random_range(1..=200);
        let levels = if k % 2 == 0 { 5 } else { 1000 };
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let fast = roc_auc(&scores, &labels).unwrap();
        match (fast, pairwise_auc(&scores, &labels)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
            (a, b) => assert_eq!(a, b),
        }
    }
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform(
        raw in prop::collection::vec((0u32..50, any::<bool>()), 2..100)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 50.0).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&moved, &labels).unwrap());
    }

    #[test]
    fn roc_curve_is_valid(raw in prop::collection::vec((0u32..20, any::<bool>()), 2..150)) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        if let Some(c) = roc_curve(&scores, &labels).unwrap() {
            prop_assert_eq!(c.points.first().copied(), Some((0.0, 0.0)));
            prop_assert_eq!(c.points.last().copied(), Some((1.0, 1.0)));
            prop_assert!(c.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert!((c.trapezoid_area() - c.auc).abs() < 1e-9);
        }
    }

    #[test]
    fn top1_invariant_under_monotone_transform(raw in prop::collection::vec(0u32..10, 3)) {
        let vocab = TagVocabulary::new(vec!["a".into(), "b".into(), "c".into()]);
        let docs = vec![doc(&["b"])];
        let s: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
        let t: Vec<f32> = s.iter().map(|v| v * 2.0 + 1.0).collect();
        prop_assert_eq!(top1_from_scores(&vocab, &[s], &docs), top1_from_scores(&vocab, &[t], &docs));
    }
}

#[test]
fn top1_examples() {
    let vocab = TagVocabulary::new(vec!["python".into(), "java".into(), "list".into()]);
    let hit = vec![doc(&["python", "list"])];
    assert_eq!(top1_from_scores(&vocab, &[vec![0.9, 0.2, 0.1]], &hit), 1.0);
    let miss = vec![doc(&["java"])];
    assert_eq!(top1_from_scores(&vocab, &[vec![0.9, 0.2, 0.1]], &miss), 0.0);
    // ties resolve to the earlier vocabulary entry
    assert_eq!(argmax(&[0.3, 0.7, 0.7]), Some(1));
}

#[test]
fn majority_tag_model_scores_its_frequency() {
    let vocab = TagVocabulary::new(vec!["a".into(), "b".into()]);
    let docs = vec![doc(&["a"]), doc(&["b"]), doc(&["a", "b"]), doc(&["a"]), doc(&["b"])];
    let direct = docs.iter().filter(|d| d.tags.iter().any(|t| t == "a")).count() as f64 / docs.len() as f64;
    let scores = vec![vec![0.9, 0.1]; docs.len()];
    assert_eq!(top1_from_scores(&vocab, &scores, &docs), direct);
}

#[test]
fn report_statistics() {
    let vocab = TagVocabulary::new(vec!["a".into(), "b".into(), "never".into()]);
    let docs = vec![doc(&["a"]), doc(&["b"]), doc(&["a", "b"]), doc(&["b"])];
    let scores = vec![
        vec![0.9, 0.1, 0.5],
        vec![0.2, 0.8, 0.5],
        vec![0.7, 0.6, 0.5],
        vec![0.6, 0.4, 0.5],
    ];
    let r = evaluate_scores(&vocab, &scores, &docs, "test").unwrap();
    assert_eq!(r.undefined, 1);
    assert_eq!(r.tags[0].auc, Some(1.0));
    // b: positives 0.8, 0.6, 0.4 vs negative 0.1
    assert_eq!(r.tags[1].auc, Some(1.0));
    assert_eq!(r.mean, 1.0);
    assert_eq!(r.stdev, 0.0);
    assert_eq!(r.histogram.iter().sum::<u64>(), 2);
    assert_eq!(r.histogram[99], 2);
    assert!(r.to_text().contains("never\tundefined"));
    assert!(matches!(
        evaluate_scores(&vocab, &[], &[], "test"),
        Err(EvalError::EmptyTestSet)
    ));
}

#[test]
fn single_tag_has_zero_spread() {
    let vocab = TagVocabulary::new(vec!["a".into()]);
    let docs = vec![doc(&["a"]), doc(&[]), doc(&["a"])];
    let r = evaluate_scores(&vocab, &[vec![0.3], vec![0.6], vec![0.9]], &docs, "test").unwrap();
    assert_eq!(r.stdev, 0.0);
    assert_eq!(r.mean, 0.5);
}

#[test]
fn random_scores_are_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
    let vocab = TagVocabulary::new(names.clone());
    let docs: Vec<TaggedDocument> = (0..500)
        .map(|_| {
            let t = &names[rng.random_range(0..20)];
            doc(&[t.as_str()])
        })
        .collect();
    let scores: Vec<Vec<f32>> = (0..500).map(|_| (0..20).map(|_| rng.random()).collect()).collect();
    let r = evaluate_scores(&vocab, &scores, &docs, "test").unwrap();
    assert!((r.mean - 0.5).abs() < 0.05, "{}", r.mean);
}

#[test]
fn sloc_conversion() {
    assert_eq!(sloc_per_sec(317_000.0).round(), 8342.0);
}

#[test]
fn bench_validates_input() {
    let m = build_cnn(
        ArchConfig {
            filter_widths: vec![3],
            filters_per_width: 4,
            dense_sizes: [4, 4],
            ..ArchConfig::default()
        },
        TagVocabulary::new(vec!["a".into()]),
        1,
    )
    .unwrap();
    assert!(matches!(
        throughput_bench(&m, &["x = 1"], 0),
        Err(EvalError::TooFewRepetitions(0))
    ));
    assert!(matches!(
        throughput_bench::<&str>(&m, &[], 3),
        Err(EvalError::EmptyCorpus)
    ));
    let r = throughput_bench(&m, &["int x = 1;"; 20], 3).unwrap();
    assert!(r.single_threaded.chars_per_sec > 0.0);
    assert_eq!(r.parallel.sloc_per_sec, r.parallel.chars_per_sec / 38.0);
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn pca_recovers_planar_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // orthonormal pair in 16-D
    let mut u = [0.0; 16];
    let mut v = [0.0; 16];
    u[2] = 0.6;
    u[7] = 0.8;
    v[3] = 1.0;
    let offset: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coords: Vec<[f64; 2]> = (0..30)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
        .collect();
    let rows: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| (0..16).map(|j| offset[j] + c[0] * u[j] + c[1] * v[j]).collect())
        .collect();
    let (p, degenerate) = pca_2d(&rows);
    assert!(!degenerate);
    for i in 0..30 {
        for j in 0..30 {
            assert!((dist(p[i], p[j]) - dist(coords[i], coords[j])).abs() < 1e-5);
        }
    }
    let var = |k: usize, pts: &[[f64; 2]]| pts.iter().map(|q| q[k] * q[k]).sum::<f64>();
    let total_in: f64 = rows
        .iter()
        .map(|r| r.iter().zip(&offset).map(|(a, o)| (a - o).powi(2)).sum::<f64>())
        .sum();
    assert!(var(0, &p) + var(1, &p) <= total_in + 1e-6);
}

#[test]
fn pca_collinear_and_degenerate() {
    let rows = vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]];
    let (p, degenerate) = pca_2d(&rows);
    assert!(!degenerate);
    assert!(p.iter().all(|q| q[1].abs() < 1e-12));
    let (_, degenerate) = pca_2d(&vec![vec![1.0; 4]; 5]);
    assert!(degenerate);
}

#[test]
fn projection_covers_every_embedding_row() {
    let m = build_cnn(ArchConfig::default(), TagVocabulary::new(vec!["a".into()]), 1).unwrap();
    let p = embedding_projection_2d(&m).unwrap();
    assert_eq!(p.points.len(), 101);
    assert_eq!(p.points[0].0, "0");
    assert_eq!(p.points[100].0, "<unk>");
}
