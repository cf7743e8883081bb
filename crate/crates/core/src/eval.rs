//! Per-tag ROC AUC, top-1 accuracy, throughput and embedding projection.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::correction::TagVocabulary;
use crate::ingest::TaggedDocument;
use crate::models::{ModelBundle, ModelKind};
use crate::nn::{CharCodec, NnError};

/// Average characters per source line used to convert throughput to lines.
pub const CHARS_PER_LINE: f64 = 38.0;
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score is NaN")]
    NanScore,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("benchmark corpus is empty")]
    EmptyCorpus,
    #[error("need at least 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("operation needs a {expected} bundle, got {found}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Indices sorted by ascending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Result<Vec<Vec<usize>>, EvalError> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    Ok(groups)
}

/// Area under the ROC curve via the rank statistic, `P(s+ > s-) + P(tie) / 2`.
/// `None` when either class is absent. Ranks are kept doubled so the sum is
/// an exact integer and the only rounding is the final division.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut rank_sum2: u128 = 0;
    let mut seen = 0u128;
    for g in tie_groups(scores)? {
        let len = g.len() as u128;
        // doubled midrank of 1-based ranks seen+1 ..= seen+len
        let mid2 = 2 * seen + len + 1;
        let p = g.iter().filter(|&&i| labels[i]).count() as u128;
        rank_sum2 += p * mid2;
        seen += len;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(Some(u2 as f64 / (2 * pos * neg) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

/// ROC curve sweeping the threshold down through each distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Option<RocCurve>, EvalError> {
    let Some(auc) = roc_auc(scores, labels)? else {
        return Ok(None);
    };
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in tie_groups(scores)?.into_iter().rev() {
        for i in g {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / neg, tp as f64 / pos));
    }
    Ok(Some(RocCurve { points, auc }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagAuc {
    pub tag: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub documents: usize,
    pub tags: Vec<TagAuc>,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stdev: f64,
    pub undefined: usize,
    /// Counts of defined AUCs in bins of width 0.01 over `[0, 1]`; 1.0 falls in the last bin.
    pub histogram: Vec<u64>,
    pub top1: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("tag\tauc\tpositives\tnegatives\n");
        for t in &self.tags {
            let auc = t.auc.map_or("undefined".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(s, "{}\t{}\t{}\t{}", t.tag, auc, t.positives, t.negatives);
        }
        let _ = writeln!(s, "# split\t{}", self.split);
        let _ = writeln!(s, "# documents\t{}", self.documents);
        let _ = writeln!(s, "# mean_auc\t{:.6}", self.mean);
        let _ = writeln!(s, "# median_auc\t{:.6}", self.median);
        let _ = writeln!(s, "# stdev_auc\t{:.6}", self.stdev);
        let _ = writeln!(s, "# undefined\t{}", self.undefined);
        let _ = writeln!(s, "# top1\t{:.6}", self.top1);
        s
    }

    pub fn histogram_tsv(&self) -> String {
        let mut s = String::from("bin_start\tcount\n");
        for (i, c) in self.histogram.iter().enumerate() {
            let _ = writeln!(s, "{:.2}\t{}", i as f64 / HISTOGRAM_BINS as f64, c);
        }
        s
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn truth(vocab: &TagVocabulary, docs: &[TaggedDocument]) -> Vec<Vec<bool>> {
    docs.iter()
        .map(|d| {
            let mut row = vec![false; vocab.len()];
            for t in &d.tags {
                if let Some(i) = vocab.index_of(t) {
                    row[i] = true;
                }
            }
            row
        })
        .collect()
}

/// Index of the highest score; the earliest wins ties.
pub fn argmax(scores: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of documents whose top-scored tag is among their true tags.
pub fn top1_from_scores(vocab: &TagVocabulary, scores: &[Vec<f32>], docs: &[TaggedDocument]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    let y = truth(vocab, docs);
    let hits = scores
        .iter()
        .zip(&y)
        .filter(|(s, row)| argmax(s).is_some_and(|i| row[i]))
        .count();
    hits as f64 / docs.len() as f64
}

/// Per-tag AUC and summary statistics for precomputed scores (`scores[doc][tag]`).
pub fn evaluate_scores(
    vocab: &TagVocabulary,
    scores: &[Vec<f32>],
    docs: &[TaggedDocument],
    split: &str,
) -> Result<EvalReport, EvalError> {
    if docs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if scores.len() != docs.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: docs.len(),
        });
    }
    let y = truth(vocab, docs);
    let tags: Vec<TagAuc> = (0..vocab.len())
        .into_par_iter()
        .map(|j| {
            let s: Vec<f64> = scores.iter().map(|r| r[j] as f64).collect();
            let l: Vec<bool> = y.iter().map(|r| r[j]).collect();
            let positives = l.iter().filter(|&&b| b).count();
            Ok(TagAuc {
                tag: vocab.tag(j).to_string(),
                auc: roc_auc(&s, &l)?,
                positives,
                negatives: l.len() - positives,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let mut defined: Vec<f64> = tags.iter().filter_map(|t| t.auc).collect();
    defined.sort_by(f64::total_cmp);
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let stdev = (defined.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for a in &defined {
        let bin = ((a * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    Ok(EvalReport {
        split: split.to_string(),
        documents: docs.len(),
        undefined: tags.len() - defined.len(),
        median: median(&defined),
        mean,
        stdev,
        histogram,
        top1: top1_from_scores(vocab, scores, docs),
        tags,
    })
}

pub fn evaluate_model(bundle: &ModelBundle, docs: &[TaggedDocument], split: &str) -> Result<EvalReport, EvalError> {
    if docs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let scores = bundle.predict_many(&texts)?;
    evaluate_scores(&bundle.vocab, &scores, docs, split)
}

pub fn top1_accuracy(bundle: &ModelBundle, docs: &[TaggedDocument]) -> Result<f64, EvalError> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let scores = bundle.predict_many(&texts)?;
    Ok(top1_from_scores(&bundle.vocab, &scores, docs))
}

pub fn sloc_per_sec(chars_per_sec: f64) -> f64 {
    chars_per_sec / CHARS_PER_LINE
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Throughput {
    pub chars_per_sec: f64,
    pub sloc_per_sec: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub characters: usize,
    pub repetitions: usize,
    pub single_threaded: Throughput,
    pub parallel: Throughput,
    pub hardware: String,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "corpus_chars\t{}", self.characters);
        let _ = writeln!(s, "repetitions\t{}", self.repetitions);
        for (name, t) in [("single_threaded", &self.single_threaded), ("parallel", &self.parallel)] {
            let _ = writeln!(
                s,
                "{name}\tthreads={}\tchars_per_sec={:.0}\tsloc_per_sec={:.0}",
                t.threads, t.chars_per_sec, t.sloc_per_sec
            );
        }
        let _ = writeln!(s, "hardware\t{}", self.hardware);
        s
    }
}

fn hardware_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!(
        "{model}; {cpus} logical cpus; {} {}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn median_rate(
    chars: usize,
    repetitions: usize,
    mut run: impl FnMut() -> Result<(), EvalError>,
) -> Result<f64, EvalError> {
    let mut rates = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run()?;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(chars as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    Ok(median(&rates))
}

/// Median end-to-end prediction throughput (encoding included, disk reads
/// excluded), once on a single thread and once across the global pool.
pub fn throughput_bench<S: AsRef<str> + Sync>(
    bundle: &ModelBundle,
    corpus: &[S],
    repetitions: usize,
) -> Result<BenchReport, EvalError> {
    if repetitions < 3 {
        return Err(EvalError::TooFewRepetitions(repetitions));
    }
    let characters: usize = corpus.iter().map(|t| t.as_ref().chars().count()).sum();
    if corpus.is_empty() || characters == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let single = median_rate(characters, repetitions, || {
        for t in corpus {
            bundle.predict_raw(t.as_ref())?;
        }
        Ok(())
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
    let threads = pool.current_num_threads();
    let parallel = pool.install(|| {
        median_rate(characters, repetitions, || {
            bundle.predict_many(corpus)?;
            Ok(())
        })
    })?;
    Ok(BenchReport {
        characters,
        repetitions,
        single_threaded: Throughput {
            chars_per_sec: single,
            sloc_per_sec: sloc_per_sec(single),
            threads: 1,
        },
        parallel: Throughput {
            chars_per_sec: parallel,
            sloc_per_sec: sloc_per_sec(parallel),
            threads,
        },
        hardware: hardware_note(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub points: Vec<(String, f64, f64)>,
    /// Set when the rows had no variance and the axes are arbitrary.
    pub degenerate: bool,
}

impl Projection {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("char\tx\ty\n");
        for (c, x, y) in &self.points {
            let _ = writeln!(s, "{c}\t{x:.6}\t{y:.6}");
        }
        s
    }
}

/// Projects centred rows onto the two leading principal directions.
/// Returns the coordinates and whether the covariance was all zero.
pub fn pca_2d(rows: &[Vec<f64>]) -> (Vec<[f64; 2]>, bool) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return (vec![[0.0, 0.0]; n], true);
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n.max(2) - 1) as f64;
    let degenerate = cov.iter().all(|v| *v == 0.0);
    let axes: [Vec<f64>; 2] = if degenerate || d < 2 {
        let mut a = vec![0.0; d];
        a[0] = 1.0;
        let mut b = vec![0.0; d];
        if d > 1 {
            b[1] = 1.0;
        }
        [a, b]
    } else {
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let col = |k: usize| eig.eigenvectors.column(order[k]).iter().copied().collect();
        [col(0), col(1)]
    };
    let points = (0..n)
        .map(|i| {
            let dot = |a: &[f64]| (0..d).map(|j| centred[(i, j)] * a[j]).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect();
    (points, degenerate)
}

/// 2-D principal-component view of the CNN's character embedding, one point
/// per embedding row in codec order.
pub fn embedding_projection_2d(bundle: &ModelBundle) -> Result<Projection, EvalError> {
    if bundle.kind() != ModelKind::Cnn {
        return Err(EvalError::WrongKind {
            expected: ModelKind::Cnn,
            found: bundle.kind(),
        });
    }
    let table = bundle.params.get("embedding")?;
    let (rows, dim) = (table.dim(0), table.dim(1));
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|r| table.data()[r * dim..(r + 1) * dim].iter().map(|&v| v as f64).collect())
        .collect();
    let (pts, degenerate) = pca_2d(&data);
    let codec = CharCodec::shared();
    Ok(Projection {
        points: pts
            .into_iter()
            .enumerate()
            .map(|(i, [x, y])| (codec.row_label(i), x, y))
            .collect(),
        degenerate,
    })
}
