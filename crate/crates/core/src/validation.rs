//! Human validation of model predictions: frozen sessions, an append-only
//! rating log, voted ground truth and the resulting ROC and top-1 accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{roc_curve, EvalError, RocCurve};
use crate::io::{read_jsonl, write_jsonl_record, JsonlError};
use crate::models::ModelBundle;
use crate::sampling::ManifestEntry;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("no document in the manifest could be read")]
    NothingReadable,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("every (document, tag) pair is excluded")]
    AllExcluded,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("prediction failed: {0}")]
    Predict(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum RatingError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("tag {tag} is not among the top predictions for {doc_id}")]
    UnknownTag { doc_id: String, tag: String },
    #[error("unknown reviewer {0}")]
    UnknownReviewer(String),
}

impl RatingError {
    pub fn code(&self) -> &'static str {
        match self {
            RatingError::UnknownDocument(_) => "unknown_document",
            RatingError::UnknownTag { .. } => "unknown_tag",
            RatingError::UnknownReviewer(_) => "unknown_reviewer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tag: String,
    pub certainty: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub id: String,
    pub path: PathBuf,
    pub text: String,
    /// Length in characters.
    pub length: usize,
    /// Top-k predictions, highest certainty first.
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSession {
    pub k: usize,
    pub reviewers: Vec<String>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub model_kind: String,
    pub documents: Vec<SessionDocument>,
    pub warnings: Vec<String>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Predicts once for every readable manifest entry and freezes the top-k.
/// Unreadable files are skipped with a warning.
pub fn create_session(
    manifest: &[ManifestEntry],
    bundle: &ModelBundle,
    k: usize,
    reviewers: Vec<String>,
) -> Result<ValidationSession, ValidationError> {
    if manifest.is_empty() {
        return Err(ValidationError::EmptyManifest);
    }
    if k == 0 {
        return Err(ValidationError::ZeroK);
    }
    let mut seen = HashSet::new();
    for e in manifest {
        if !seen.insert(e.id.as_str()) {
            return Err(ValidationError::DuplicateId(e.id.clone()));
        }
    }
    let mut warnings = Vec::new();
    let mut documents = Vec::new();
    for e in manifest {
        let bytes = match fs::read(&e.path) {
            Ok(b) => b,
            Err(err) => {
                warnings.push(format!("{}: {} excluded: {err}", e.id, e.path.display()));
                continue;
            }
        };
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let ranked = bundle
            .predict_probs(&text)
            .map_err(|err| ValidationError::Predict(err.to_string()))?;
        documents.push(SessionDocument {
            id: e.id.clone(),
            path: e.path.clone(),
            length: text.chars().count(),
            text,
            predictions: ranked
                .into_iter()
                .take(k)
                .map(|(tag, certainty)| Prediction { tag, certainty })
                .collect(),
        });
    }
    if documents.is_empty() {
        return Err(ValidationError::NothingReadable);
    }
    Ok(ValidationSession {
        k,
        reviewers,
        created_at: now_secs(),
        model_kind: bundle.kind().to_string(),
        documents,
        warnings,
    })
}

impl ValidationSession {
    pub fn save(&self, path: &Path) -> Result<(), ValidationError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn document(&self, id: &str) -> Option<&SessionDocument> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Rating slots per reviewer: one per (document, predicted tag).
    pub fn slots(&self) -> usize {
        self.documents.iter().map(|d| d.predictions.len()).sum()
    }

    pub fn check(&self, record: &RatingRecord) -> Result<(), RatingError> {
        let doc = self
            .document(&record.doc_id)
            .ok_or_else(|| RatingError::UnknownDocument(record.doc_id.clone()))?;
        if !doc.predictions.iter().any(|p| p.tag == record.tag) {
            return Err(RatingError::UnknownTag {
                doc_id: record.doc_id.clone(),
                tag: record.tag.clone(),
            });
        }
        if !self.reviewers.iter().any(|r| r == &record.reviewer_id) {
            return Err(RatingError::UnknownReviewer(record.reviewer_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rating {
    Agree,
    Disagree,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub doc_id: String,
    pub tag: String,
    pub reviewer_id: String,
    pub rating: Rating,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

type SlotKey = (String, String, String);

/// Full rating history plus the current rating per (document, tag, reviewer).
/// A record replaces the current one unless it is strictly older.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingLog {
    history: Vec<RatingRecord>,
    current: BTreeMap<SlotKey, (u64, Rating)>,
}

impl RatingLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds state by applying `records` in order.
    pub fn replay<I: IntoIterator<Item = RatingRecord>>(records: I) -> Self {
        let mut log = Self::new();
        for r in records {
            log.apply(r);
        }
        log
    }

    fn apply(&mut self, r: RatingRecord) {
        let key = (r.doc_id.clone(), r.tag.clone(), r.reviewer_id.clone());
        match self.current.get(&key) {
            Some((t, _)) if *t > r.timestamp => {}
            _ => {
                self.current.insert(key, (r.timestamp, r.rating));
            }
        }
        self.history.push(r);
    }

    pub fn record(&mut self, session: &ValidationSession, r: RatingRecord) -> Result<(), RatingError> {
        session.check(&r)?;
        self.apply(r);
        Ok(())
    }

    pub fn history(&self) -> &[RatingRecord] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn current(&self, doc_id: &str, tag: &str, reviewer: &str) -> Option<Rating> {
        self.current
            .get(&(doc_id.to_string(), tag.to_string(), reviewer.to_string()))
            .map(|(_, r)| *r)
    }

    /// Current ratings of one (document, tag) pair by all reviewers.
    pub fn ratings_for(&self, doc_id: &str, tag: &str) -> Vec<Rating> {
        let lo = (doc_id.to_string(), tag.to_string(), String::new());
        self.current
            .range(lo..)
            .take_while(|((d, t, _), _)| d == doc_id && t == tag)
            .map(|(_, (_, r))| *r)
            .collect()
    }

    /// Number of tags each reviewer has rated on `doc_id`.
    pub fn rated_counts(&self, doc_id: &str) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (d, _, reviewer) in self.current.keys() {
            if d == doc_id {
                *out.entry(reviewer.clone()).or_default() += 1;
            }
        }
        out
    }
}

/// Rating log backed by a line-delimited file; every accepted record is
/// appended and flushed before it becomes visible.
pub struct RatingStore {
    log: RatingLog,
    file: File,
    path: PathBuf,
}

impl RatingStore {
    pub fn open(path: &Path) -> Result<Self, ValidationError> {
        let log = match File::open(path) {
            Ok(f) => RatingLog::replay(read_jsonl::<RatingRecord, _>(BufReader::new(f))?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => RatingLog::new(),
            Err(e) => return Err(e.into()),
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            log,
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log(&self) -> &RatingLog {
        &self.log
    }

    pub fn record(&mut self, session: &ValidationSession, r: RatingRecord) -> Result<(), ValidationError> {
        session.check(&r)?;
        let mut line = Vec::new();
        write_jsonl_record(&mut line, &r)?;
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.log.apply(r);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Excluded,
}

/// Drops unsure votes and takes the majority of the rest; ties and pairs
/// with no remaining votes are excluded.
pub fn vote(ratings: &[Rating]) -> Verdict {
    let agree = ratings.iter().filter(|r| **r == Rating::Agree).count();
    let disagree = ratings.iter().filter(|r| **r == Rating::Disagree).count();
    match agree.cmp(&disagree) {
        std::cmp::Ordering::Greater => Verdict::Positive,
        std::cmp::Ordering::Less => Verdict::Negative,
        std::cmp::Ordering::Equal => Verdict::Excluded,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Keyed by (document id, tag), covering every rating slot of the session.
    pub verdicts: BTreeMap<(String, String), Verdict>,
}

impl GroundTruth {
    pub fn get(&self, doc_id: &str, tag: &str) -> Option<Verdict> {
        self.verdicts.get(&(doc_id.to_string(), tag.to_string())).copied()
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.verdicts.values().filter(|x| **x == v).count()
    }
}

pub fn compute_ground_truth(session: &ValidationSession, log: &RatingLog) -> GroundTruth {
    let mut verdicts = BTreeMap::new();
    for d in &session.documents {
        for p in &d.predictions {
            verdicts.insert((d.id.clone(), p.tag.clone()), vote(&log.ratings_for(&d.id, &p.tag)));
        }
    }
    GroundTruth { verdicts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationMetrics {
    /// `None` when the judged pairs are all positive or all negative.
    pub roc: Option<RocCurve>,
    pub auc: Option<f64>,
    pub pairs: usize,
    pub excluded: usize,
    /// Documents whose first-ranked tag is judged positive, over documents
    /// whose first-ranked tag is not excluded.
    pub top1: Option<f64>,
    pub top1_documents: usize,
    pub top1_dropped: usize,
}

pub fn validation_metrics(
    session: &ValidationSession,
    truth: &GroundTruth,
) -> Result<ValidationMetrics, ValidationError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut excluded = 0;
    let index: HashMap<&str, &SessionDocument> = session.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    for ((doc_id, tag), v) in &truth.verdicts {
        let certainty = index
            .get(doc_id.as_str())
            .and_then(|d| d.predictions.iter().find(|p| &p.tag == tag))
            .map(|p| p.certainty);
        match (v, certainty) {
            (Verdict::Excluded, _) | (_, None) => excluded += 1,
            (v, Some(c)) => {
                scores.push(c as f64);
                labels.push(*v == Verdict::Positive);
            }
        }
    }
    if scores.is_empty() {
        return Err(ValidationError::AllExcluded);
    }
    let roc = roc_curve(&scores, &labels)?;
    let (mut hits, mut judged, mut dropped) = (0, 0, 0);
    for d in &session.documents {
        let Some(first) = d.predictions.first() else { continue };
        match truth.get(&d.id, &first.tag) {
            Some(Verdict::Positive) => {
                hits += 1;
                judged += 1;
            }
            Some(Verdict::Negative) => judged += 1,
            _ => dropped += 1,
        }
    }
    Ok(ValidationMetrics {
        auc: roc.as_ref().map(|r| r.auc),
        roc,
        pairs: scores.len(),
        excluded,
        top1: (judged > 0).then(|| hits as f64 / judged as f64),
        top1_documents: judged,
        top1_dropped: dropped,
    })
}
