use std::sync::Arc;

use codetag::correction::TagVocabulary;
use codetag::models::{build_cnn, ArchConfig};
use codetag::sampling::ManifestEntry;
use codetag::validation::{create_session, RatingStore};
use codetag_serve::{bind, AppState};
use serde_json::{json, Value};

struct Fixture {
    _dir: tempfile::TempDir,
    base: String,
    client: reqwest::Client,
    ratings_path: std::path::PathBuf,
}

async fn start() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = Vec::new();
    for i in 0..4 {
        let path = dir.path().join(format!("f{i}.src"));
        std::fs::write(&path, format!("int x{i} = {i};\nreturn x{i} * 2;")).unwrap();
        manifest.push(ManifestEntry {
            id: format!("doc{i:04}"),
            path,
        });
    }
    let arch = ArchConfig {
        filter_widths: vec![3],
        filters_per_width: 4,
        dense_sizes: [8, 8],
        ..ArchConfig::default()
    };
    let vocab = TagVocabulary::new((0..6).map(|i| format!("tag{i}")).collect());
    let model = build_cnn(arch, vocab, 3).unwrap();
    let session = create_session(&manifest, &model, 5, vec!["r1".into(), "r2".into(), "r3".into()]).unwrap();
    let ratings_path = dir.path().join("ratings.jsonl");
    let state = Arc::new(AppState::new(session, RatingStore::open(&ratings_path).unwrap()));
    let (addr, server) = bind("127.0.0.1:0".parse().unwrap(), state).await.unwrap();
    tokio::spawn(server);
    Fixture {
        _dir: dir,
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        ratings_path,
    }
}

impl Fixture {
    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn rate(&self, body: Value) -> (u16, Value) {
        let r = self
            .client
            .post(format!("{}/api/ratings", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }
}

#[tokio::test]
async fn session_and_documents() {
    let f = start().await;
    let (code, s) = f.get("/api/session").await;
    assert_eq!(code, 200);
    assert_eq!(s["k"], 5);
    assert_eq!(s["documents"], 4);
    assert_eq!(s["slots_per_reviewer"], 20);

    let (_, docs) = f.get("/api/documents").await;
    assert_eq!(docs.as_array().unwrap().len(), 4);
    assert_eq!(docs[0]["id"], "doc0000");
    assert!(docs[0]["length"].as_u64().unwrap() > 0);

    let (code, d) = f.get("/api/documents/doc0001").await;
    assert_eq!(code, 200);
    let preds = d["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 5);
    let c: Vec<f64> = preds.iter().map(|p| p["certainty"].as_f64().unwrap()).collect();
    assert!(c.windows(2).all(|w| w[0] >= w[1]));
    assert!(d["text"].as_str().unwrap().contains("x1"));

    let (code, e) = f.get("/api/documents/nope").await;
    assert_eq!(code, 404);
    assert_eq!(e["error"], "unknown_document");
}

#[tokio::test]
async fn ratings_are_validated_and_persisted() {
    let f = start().await;
    let (_, d) = f.get("/api/documents/doc0000").await;
    let tag = d["predictions"][0]["tag"].as_str().unwrap().to_string();

    let (code, ok) = f
        .rate(json!({"doc_id": "doc0000", "tag": tag, "reviewer_id": "r1", "rating": "agree"}))
        .await;
    assert_eq!((code, ok["ok"].clone()), (200, json!(true)));
    let (_, docs) = f.get("/api/documents").await;
    assert_eq!(docs[0]["rated_counts"]["r1"], 1);

    let (code, e) = f
        .rate(json!({"doc_id": "doc0000", "tag": "not-a-tag", "reviewer_id": "r1", "rating": "agree"}))
        .await;
    assert_eq!((code, e["error"].as_str()), (422, Some("unknown_tag")));
    let (code, e) = f
        .rate(json!({"doc_id": "doc0000", "tag": tag, "reviewer_id": "intruder", "rating": "agree"}))
        .await;
    assert_eq!((code, e["error"].as_str()), (422, Some("unknown_reviewer")));
    let (code, e) = f
        .rate(json!({"doc_id": "doc9999", "tag": tag, "reviewer_id": "r1", "rating": "agree"}))
        .await;
    assert_eq!((code, e["error"].as_str()), (404, Some("unknown_document")));

    // resubmission overwrites; the log keeps both lines
    f.rate(json!({"doc_id": "doc0000", "tag": tag, "reviewer_id": "r1", "rating": "disagree"}))
        .await;
    let lines = std::fs::read_to_string(&f.ratings_path).unwrap();
    assert_eq!(lines.lines().count(), 2);
    let (_, r) = f.get("/api/results").await;
    assert_eq!(r["ground_truth"]["negative"], 1);
    assert_eq!(r["ground_truth"]["positive"], 0);
}

#[tokio::test]
async fn results_before_any_rating() {
    let f = start().await;
    let (code, r) = f.get("/api/results").await;
    assert_eq!(code, 200);
    assert_eq!(r["auc"], Value::Null);
    assert_eq!(r["ground_truth"]["excluded"], 20);
    assert!(r["top1_denominator"].as_str().unwrap().contains("dropped"));
}
