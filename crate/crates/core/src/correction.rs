//! Corrective filters (snippet length, score, tag frequency) and the corpus
//! statistics that motivate their thresholds.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ingest::TaggedDocument;
use crate::nn::codec::is_punctuation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Snippets shorter than this many characters are discarded.
    pub min_snippet_length: usize,
    pub min_score: i64,
    /// Tags on fewer posts than this are removed from the vocabulary.
    pub min_tag_count: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_snippet_length: 10,
            min_score: 0,
            min_tag_count: 1000,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorrectionError {
    #[error("no tag survives threshold {0}")]
    EmptyVocabulary(u64),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CorrectionError> {
        if self.min_score < 0 {
            return Err(CorrectionError::InvalidConfig("min_score must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

pub fn filter_snippet_length(snippets: Vec<String>, cfg: &FilterConfig) -> Vec<String> {
    snippets
        .into_iter()
        .filter(|s| char_len(s) >= cfg.min_snippet_length)
        .collect()
}

pub fn filter_score(doc: &TaggedDocument, cfg: &FilterConfig) -> bool {
    doc.score >= cfg.min_score
}

/// Ordered tag list; position is the label index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct TagVocabulary {
    tags: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tags: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabRepr> for TagVocabulary {
    fn from(r: VocabRepr) -> Self {
        Self::with_counts(r.tags.into_iter().zip(r.counts).collect())
    }
}

impl From<TagVocabulary> for VocabRepr {
    fn from(v: TagVocabulary) -> Self {
        VocabRepr {
            tags: v.tags,
            counts: v.counts,
        }
    }
}

impl TagVocabulary {
    pub fn with_counts(entries: Vec<(String, u64)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let (tags, counts) = entries.into_iter().unzip();
        Self { tags, counts, index }
    }

    pub fn new(tags: Vec<String>) -> Self {
        Self::with_counts(tags.into_iter().map(|t| (t, 0)).collect())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    /// `tag<TAB>count` lines in label order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tags.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tag, count) = line.split_once('\t').unwrap_or((line, "0"));
            let count = count
                .trim()
                .parse::<u64>()
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            entries.push((tag.to_string(), count));
        }
        Ok(Self::with_counts(entries))
    }
}

/// Distinct-post tag counts, mergeable across partitions of a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagCounter {
    counts: HashMap<String, u64>,
}

impl TagCounter {
    pub fn add(&mut self, doc: &TaggedDocument) {
        let mut seen: Vec<&str> = Vec::with_capacity(doc.tags.len());
        for t in &doc.tags {
            if !seen.contains(&t.as_str()) {
                seen.push(t);
                *self.counts.entry(t.clone()).or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, other: TagCounter) {
        for (t, c) in other.counts {
            *self.counts.entry(t).or_default() += c;
        }
    }

    /// All tags, descending by count, ties lexicographic.
    pub fn ranking(&self) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = self.counts.iter().map(|(t, c)| (t.clone(), *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn vocabulary(&self, cfg: &FilterConfig) -> Result<TagVocabulary, CorrectionError> {
        let kept: Vec<(String, u64)> = self
            .ranking()
            .into_iter()
            .filter(|(_, c)| *c >= cfg.min_tag_count)
            .collect();
        if kept.is_empty() {
            return Err(CorrectionError::EmptyVocabulary(cfg.min_tag_count));
        }
        Ok(TagVocabulary::with_counts(kept))
    }
}

/// Intersects a document's tags with `vocab`; `None` if nothing survives.
pub fn restrict_to_vocabulary(mut doc: TaggedDocument, vocab: &TagVocabulary) -> Option<TaggedDocument> {
    doc.tags.retain(|t| vocab.index_of(t).is_some());
    (!doc.tags.is_empty()).then_some(doc)
}

/// Counts tags over `docs` (already length- and score-filtered), keeps those
/// with at least `min_tag_count` posts, and restricts every document to them.
pub fn rank_and_filter_tags(
    docs: Vec<TaggedDocument>,
    cfg: &FilterConfig,
) -> Result<(TagVocabulary, Vec<TaggedDocument>), CorrectionError> {
    let mut counter = TagCounter::default();
    docs.iter().for_each(|d| counter.add(d));
    let vocab = counter.vocabulary(cfg)?;
    let kept = docs
        .into_iter()
        .filter_map(|d| restrict_to_vocabulary(d, &vocab))
        .collect();
    Ok((vocab, kept))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub vocab: TagVocabulary,
    pub documents: Vec<TaggedDocument>,
    pub dropped_by_score: u64,
    pub dropped_by_tags: u64,
}

/// Score filter followed by tag-frequency filtering, on documents whose
/// snippets were already length-filtered during ingestion.
pub fn filter_corpus(docs: Vec<TaggedDocument>, cfg: &FilterConfig) -> Result<FilterOutcome, CorrectionError> {
    cfg.validate()?;
    let before = docs.len() as u64;
    let scored: Vec<TaggedDocument> = docs.into_iter().filter(|d| filter_score(d, cfg)).collect();
    let dropped_by_score = before - scored.len() as u64;
    let remaining = scored.len() as u64;
    let (vocab, documents) = rank_and_filter_tags(scored, cfg)?;
    Ok(FilterOutcome {
        dropped_by_tags: remaining - documents.len() as u64,
        vocab,
        documents,
        dropped_by_score,
    })
}

pub fn punctuation_count(s: &str) -> usize {
    s.chars().filter(|c| is_punctuation(*c)).count()
}

/// Histogram of punctuation counts for snippets of one length.
type PunctHistogram = BTreeMap<usize, u64>;

fn mean_median(h: &PunctHistogram) -> (f64, f64) {
    let n: u64 = h.values().sum();
    let sum: f64 = h.iter().map(|(k, c)| *k as f64 * *c as f64).sum();
    let nth = |rank: u64| -> usize {
        let mut seen = 0;
        for (k, c) in h {
            seen += c;
            if seen > rank {
                return *k;
            }
        }
        0
    };
    let median = if n % 2 == 1 {
        nth(n / 2) as f64
    } else {
        (nth(n / 2 - 1) as f64 + nth(n / 2) as f64) / 2.0
    };
    (sum / n as f64, median)
}

/// Mean and median punctuation count per snippet length.
pub fn punctuation_stats<'a, I>(snippets: I) -> BTreeMap<usize, (f64, f64)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut acc = StatsAccumulator::default();
    snippets.into_iter().for_each(|s| acc.add_snippet(s));
    acc.finish().punctuation_by_length
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub snippet_length_histogram: BTreeMap<usize, u64>,
    pub punctuation_by_length: BTreeMap<usize, (f64, f64)>,
    pub tags_per_post_histogram: BTreeMap<usize, u64>,
    pub score_histogram: BTreeMap<i64, u64>,
    pub tag_ranking: Vec<(String, u64)>,
}

/// One-pass accumulator over snippets and documents.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    lengths: BTreeMap<usize, u64>,
    punctuation: BTreeMap<usize, PunctHistogram>,
    tags_per_post: BTreeMap<usize, u64>,
    scores: BTreeMap<i64, u64>,
    tags: TagCounter,
}

impl StatsAccumulator {
    pub fn add_snippet(&mut self, s: &str) {
        let len = char_len(s);
        *self.lengths.entry(len).or_default() += 1;
        *self
            .punctuation
            .entry(len)
            .or_default()
            .entry(punctuation_count(s))
            .or_default() += 1;
    }

    pub fn add_document(&mut self, doc: &TaggedDocument) {
        *self.tags_per_post.entry(doc.tags.len()).or_default() += 1;
        *self.scores.entry(doc.score).or_default() += 1;
        self.tags.add(doc);
    }

    pub fn merge(&mut self, other: StatsAccumulator) {
        for (k, v) in other.lengths {
            *self.lengths.entry(k).or_default() += v;
        }
        for (k, h) in other.punctuation {
            let mine = self.punctuation.entry(k).or_default();
            for (p, c) in h {
                *mine.entry(p).or_default() += c;
            }
        }
        for (k, v) in other.tags_per_post {
            *self.tags_per_post.entry(k).or_default() += v;
        }
        for (k, v) in other.scores {
            *self.scores.entry(k).or_default() += v;
        }
        self.tags.merge(other.tags);
    }

    pub fn finish(self) -> CorpusStats {
        CorpusStats {
            punctuation_by_length: self.punctuation.iter().map(|(len, h)| (*len, mean_median(h))).collect(),
            snippet_length_histogram: self.lengths,
            tags_per_post_histogram: self.tags_per_post,
            score_histogram: self.scores,
            tag_ranking: self.tags.ranking(),
        }
    }
}

impl CorpusStats {
    /// Plot-ready rows: `section<TAB>key<TAB>value...`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tkey\tvalue\textra\n");
        for (k, v) in &self.snippet_length_histogram {
            let _ = writeln!(out, "snippet_length\t{k}\t{v}\t");
        }
        for (k, (mean, median)) in &self.punctuation_by_length {
            let _ = writeln!(out, "punctuation\t{k}\t{mean}\t{median}");
        }
        for (k, v) in &self.tags_per_post_histogram {
            let _ = writeln!(out, "tags_per_post\t{k}\t{v}\t");
        }
        for (k, v) in &self.score_histogram {
            let _ = writeln!(out, "score\t{k}\t{v}\t");
        }
        for (rank, (t, c)) in self.tag_ranking.iter().enumerate() {
            let _ = writeln!(out, "tag_rank\t{t}\t{c}\t{}", rank + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: u64, tags: &[&str], score: i64) -> TaggedDocument {
        TaggedDocument {
            id,
            text: "some code here".into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            score,
            snippet_count: 1,
        }
    }

    #[test]
    fn length_threshold() {
        let cfg = FilterConfig::default();
        let kept = filter_snippet_length(vec!["x = 1".into(), "123456789".into(), "1234567890".into()], &cfg);
        assert_eq!(kept, vec!["1234567890"]);
        assert!(filter_snippet_length(vec![], &cfg).is_empty());
        // characters, not bytes
        assert_eq!(filter_snippet_length(vec!["ééééééééé".into()], &cfg).len(), 0);
    }

    #[test]
    fn score_threshold() {
        let cfg = FilterConfig::default();
        assert!(!filter_score(&doc(1, &["a"], -1), &cfg));
        assert!(filter_score(&doc(1, &["a"], 0), &cfg));
        assert!(filter_score(&doc(1, &["a"], 3500), &cfg));
    }

    #[test]
    fn tag_threshold() {
        let mut docs = Vec::new();
        for i in 0..1000 {
            docs.push(doc(i, &["common"], 0));
        }
        for i in 0..999 {
            docs[i as usize].tags.push("almost".into());
        }
        docs.push(doc(5000, &["rare"], 0));
        let (vocab, kept) = rank_and_filter_tags(docs, &FilterConfig::default()).unwrap();
        assert_eq!(vocab.tags(), &["common".to_string()]);
        assert_eq!(kept.len(), 1000);
        assert!(kept.iter().all(|d| d.tags == vec!["common"]));
    }

    #[test]
    fn all_tags_survive_low_threshold() {
        let cfg = FilterConfig {
            min_tag_count: 1,
            ..FilterConfig::default()
        };
        let docs = vec![doc(1, &["a", "b"], 0), doc(2, &["b"], 0)];
        let (vocab, kept) = rank_and_filter_tags(docs.clone(), &cfg).unwrap();
        assert_eq!(vocab.tags(), &["b".to_string(), "a".to_string()]);
        assert_eq!(kept, docs);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let err = rank_and_filter_tags(vec![doc(1, &["a"], 0)], &FilterConfig::default()).unwrap_err();
        assert_eq!(err, CorrectionError::EmptyVocabulary(1000));
        assert_eq!(err.to_string(), "no tag survives threshold 1000");
    }

    #[test]
    fn punctuation_examples() {
        let s = punctuation_stats(["a=b;", "abcd"]);
        assert_eq!(s[&4], (1.0, 1.0));
        let s = punctuation_stats(["()"]);
        assert_eq!(s[&2], (2.0, 2.0));
        assert!(punctuation_stats(std::iter::empty::<&str>()).is_empty());
        let s = punctuation_stats(["a.b", "c.d", "e,,"]);
        assert_eq!(s[&3], (4.0 / 3.0, 1.0));
    }

    #[test]
    fn stats_examples() {
        let mut acc = StatsAccumulator::default();
        acc.add_document(&doc(1, &["a"], 0));
        acc.add_document(&doc(2, &["a", "b", "c"], 2));
        acc.add_document(&doc(3, &["a", "b", "d"], 0));
        for s in ["0123456789", "abcdefghij", "0123456789ab"] {
            acc.add_snippet(s);
        }
        let stats = acc.finish();
        assert_eq!(stats.tags_per_post_histogram, BTreeMap::from([(1, 1), (3, 2)]));
        assert_eq!(stats.snippet_length_histogram, BTreeMap::from([(10, 2), (12, 1)]));
        assert_eq!(stats.score_histogram, BTreeMap::from([(0, 2), (2, 1)]));
        assert_eq!(stats.tag_ranking[0], ("a".to_string(), 3));
        assert_eq!(stats.tag_ranking[1], ("b".to_string(), 2));
        assert_eq!(stats.tag_ranking[2], ("c".to_string(), 1));
        let tsv = stats.to_tsv();
        assert!(tsv.contains("snippet_length\t10\t2\t"));
        assert!(tsv.contains("tag_rank\ta\t3\t1"));
    }

    #[test]
    fn ranking_ties_lexicographic() {
        let mut c = TagCounter::default();
        c.add(&doc(1, &["b", "a"], 0));
        c.add(&doc(2, &["c"], 0));
        c.add(&doc(3, &["c"], 0));
        assert_eq!(c.ranking(), vec![("c".into(), 2), ("a".into(), 1), ("b".into(), 1)]);
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let v = TagVocabulary::with_counts(vec![("c#".into(), 5), ("java".into(), 2)]);
        assert_eq!(TagVocabulary::from_tsv(&v.to_tsv()).unwrap(), v);
    }

    fn arb_docs() -> impl Strategy<Value = Vec<TaggedDocument>> {
        proptest::collection::vec((proptest::collection::btree_set(0u8..8, 1..4), -2i64..3), 0..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (tags, score))| TaggedDocument {
                    id: i as u64,
                    text: "t".repeat(12),
                    tags: tags.into_iter().map(|t| format!("t{t}")).collect(),
                    score,
                    snippet_count: 1,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tag_filter_is_idempotent_and_order_free(docs in arb_docs(), min in 1u64..6) {
            let cfg = FilterConfig { min_tag_count: min, ..FilterConfig::default() };
            if let Ok((vocab, once)) = rank_and_filter_tags(docs.clone(), &cfg) {
                let (vocab2, twice) = rank_and_filter_tags(once.clone(), &cfg).unwrap();
                prop_assert_eq!(&vocab2.tags(), &vocab.tags());
                prop_assert_eq!(twice, once);
                let mut rev = docs.clone();
                rev.reverse();
                let (vocab3, _) = rank_and_filter_tags(rev, &cfg).unwrap();
                prop_assert_eq!(vocab3.tags(), vocab.tags());
                if let Ok((higher, _)) = rank_and_filter_tags(docs, &FilterConfig { min_tag_count: min + 1, ..cfg }) {
                    prop_assert!(higher.len() <= vocab.len());
                }
            }
        }

        #[test]
        fn snippet_filter_is_idempotent_and_monotone(
            snippets in proptest::collection::vec("[a-z=;]{0,16}", 0..20),
            min in 0usize..14,
        ) {
            let cfg = FilterConfig { min_snippet_length: min, ..FilterConfig::default() };
            let once = filter_snippet_length(snippets.clone(), &cfg);
            prop_assert_eq!(filter_snippet_length(once.clone(), &cfg), once.clone());
            let stricter = filter_snippet_length(snippets, &FilterConfig { min_snippet_length: min + 1, ..cfg });
            prop_assert!(stricter.join("\n").len() <= once.join("\n").len());
        }
    }
}
