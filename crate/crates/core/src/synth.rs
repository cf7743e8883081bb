//! Seeded synthetic corpora with known ground truth, for tests, benchmarks
//! and the command-line demo pipeline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correction::TagVocabulary;
use crate::ingest::TaggedDocument;
use crate::stratify::LabelMatrix;

const CODE_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789 =+-*/();{}[]<>&\"'.,:_#!";

fn random_code(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *CODE_CHARS.choose(rng).unwrap() as char).collect()
}

/// Random printable text of `len` characters, including some non-ASCII.
pub fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| match rng.random_range(0..20) {
            0 => ['é', 'λ', '中', '\t', '\n'][rng.random_range(0..5)],
            _ => *CODE_CHARS.choose(rng).unwrap() as char,
        })
        .collect()
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A post-dump XML document together with the documents that the full
/// filter chain must produce from it.
#[derive(Debug, Clone)]
pub struct FixtureDump {
    pub xml: String,
    /// Tag name and distinct-post count for every tag at or above the threshold,
    /// in ranking order.
    pub vocabulary: Vec<(String, u64)>,
    /// Documents surviving all filters, in dump order, tags restricted to the vocabulary.
    pub documents: Vec<TaggedDocument>,
    /// Number of snippets shorter than 10 characters.
    pub short_snippets: usize,
    /// Number of posts (with surviving snippets) whose score is negative.
    pub negative_posts: usize,
}

struct PlannedPost {
    id: u64,
    parent: Option<u64>,
    score: i64,
    tags: Vec<String>,
    snippets: Vec<String>,
    orphan: bool,
}

/// Builds a dump of `posts` rows. Tags follow a skewed distribution so that
/// some fall under `min_tag_count`; snippet lengths cluster around the
/// 9/10-character boundary and use HTML entities, which count as one
/// character after decoding.
pub fn fixture_dump(posts: usize, min_tag_count: u64, seed: u64) -> FixtureDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag_pool: Vec<String> = (0..24).map(|i| format!("tag{i:02}")).collect();
    let weights: Vec<f64> = (0..tag_pool.len()).map(|i| 1.0 / (1.0 + i as f64).powf(1.8)).collect();
    let total_w: f64 = weights.iter().sum();

    let mut planned = Vec::with_capacity(posts);
    let mut questions: Vec<(u64, Vec<String>)> = Vec::new();
    for k in 0..posts {
        let id = 1000 + k as u64;
        let is_question = questions.is_empty() || rng.random_bool(0.4);
        let mut snippets = Vec::new();
        let n_snippets = [0usize, 1, 1, 2, 2, 3][rng.random_range(0..6)];
        for _ in 0..n_snippets {
            let len = match rng.random_range(0..4) {
                0 => 9,
                1 => 10,
                _ => rng.random_range(1..=30),
            };
            snippets.push(random_code(&mut rng, len));
        }
        let score = rng.random_range(-3..=8);
        if is_question {
            let mut tags = BTreeSet::new();
            let n_tags = rng.random_range(1..=5);
            while tags.len() < n_tags {
                let mut r = rng.random_range(0.0..total_w);
                let mut pick = 0;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        pick = i;
                        break;
                    }
                    r -= w;
                }
                tags.insert(tag_pool[pick].clone());
            }
            let mut tags: Vec<String> = tags.into_iter().collect();
            tags.shuffle(&mut rng);
            questions.push((id, tags.clone()));
            planned.push(PlannedPost {
                id,
                parent: None,
                score,
                tags,
                snippets,
                orphan: false,
            });
        } else if rng.random_bool(0.05) {
            planned.push(PlannedPost {
                id,
                parent: Some(1_000_000 + k as u64),
                score,
                tags: Vec::new(),
                snippets,
                orphan: true,
            });
        } else {
            let (qid, tags) = questions.choose(&mut rng).unwrap().clone();
            planned.push(PlannedPost {
                id,
                parent: Some(qid),
                score,
                tags,
                snippets,
                orphan: false,
            });
        }
    }

    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n");
    for p in &planned {
        let mut body = String::from("<p>Some prose &amp; a question.</p>\n");
        for (i, s) in p.snippets.iter().enumerate() {
            if i % 2 == 0 {
                body.push_str(&format!("<pre><code>{}</code></pre>\n", escape_html(s)));
            } else {
                body.push_str(&format!("<p>inline <code>{}</code> here</p>\n", escape_html(s)));
            }
        }
        let mut row = format!("  <row Id=\"{}\"", p.id);
        match p.parent {
            None => {
                let tags: String = p.tags.iter().map(|t| format!("<{t}>")).collect();
                row.push_str(&format!(" PostTypeId=\"1\" Tags=\"{}\"", escape_attr(&tags)));
            }
            Some(parent) => row.push_str(&format!(" PostTypeId=\"2\" ParentId=\"{parent}\"")),
        }
        row.push_str(&format!(" Score=\"{}\" Body=\"{}\" />\n", p.score, escape_attr(&body)));
        xml.push_str(&row);
    }
    xml.push_str("</posts>\n");

    let mut short_snippets = 0;
    let mut negative_posts = 0;
    let mut survivors = Vec::new();
    for p in planned.iter().filter(|p| !p.orphan) {
        let kept: Vec<&String> = p.snippets.iter().filter(|s| s.chars().count() >= 10).collect();
        short_snippets += p.snippets.len() - kept.len();
        if kept.is_empty() {
            continue;
        }
        if p.score < 0 {
            negative_posts += 1;
            continue;
        }
        survivors.push((p, kept));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for (p, _) in &survivors {
        for t in &p.tags {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut vocabulary: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_tag_count)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    vocabulary.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keep: BTreeSet<&str> = vocabulary.iter().map(|(t, _)| t.as_str()).collect();
    let documents = survivors
        .into_iter()
        .filter_map(|(p, kept)| {
            let tags: Vec<String> = p.tags.iter().filter(|t| keep.contains(t.as_str())).cloned().collect();
            (!tags.is_empty()).then(|| TaggedDocument {
                id: p.id,
                text: kept.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"),
                tags,
                score: p.score,
                snippet_count: kept.len(),
            })
        })
        .collect();
    FixtureDump {
        xml,
        vocabulary,
        documents,
        short_snippets,
        negative_posts,
    }
}

/// Tags defined by short character motifs hidden in random filler.
#[derive(Debug, Clone)]
pub struct MotifCorpusConfig {
    pub documents: usize,
    pub tags: usize,
    /// Filler tokens per document.
    pub tokens: usize,
    pub max_tags_per_doc: usize,
    /// When set, tags come in pairs whose motifs are anagrams of each other,
    /// so only the character order tells them apart.
    pub paired_anagrams: bool,
    /// Embed motifs inside random alphanumeric tokens rather than as separate tokens.
    pub hide_in_tokens: bool,
}

impl MotifCorpusConfig {
    /// Small, cleanly separable corpus for overfitting checks.
    pub fn separable(documents: usize, tags: usize) -> Self {
        Self {
            documents,
            tags,
            tokens: 12,
            max_tags_per_doc: 2,
            paired_anagrams: false,
            hide_in_tokens: false,
        }
    }

    /// Corpus where the tag signal lives in character order inside tokens.
    pub fn character_patterns(documents: usize, tags: usize) -> Self {
        Self {
            documents,
            tags,
            tokens: 16,
            max_tags_per_doc: 2,
            paired_anagrams: true,
            hide_in_tokens: true,
        }
    }
}

const MOTIF_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const FILLER_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const FILLER_PUNCT: &[&str] = &[" = ", "(", ")", "; ", ", ", ".", " + ", "{ ", " }", "[", "]"];

/// Motif strings for `tags` tags (three characters each).
pub fn motifs(tags: usize, paired_anagrams: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(tags);
    let mut next = 0usize;
    let letter = |k: usize| MOTIF_ALPHABET[k % MOTIF_ALPHABET.len()] as char;
    while out.len() < tags {
        let a = letter(next);
        let b = letter(next + 1);
        let c = letter(next + 2);
        next += 3;
        out.push(format!("{a}{b}{c}"));
        if paired_anagrams && out.len() < tags {
            out.push(format!("{c}{a}{b}"));
        }
    }
    out
}

pub fn motif_corpus(cfg: &MotifCorpusConfig, seed: u64) -> (Vec<TaggedDocument>, TagVocabulary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motif = motifs(cfg.tags, cfg.paired_anagrams);
    let names: Vec<String> = (0..cfg.tags).map(|i| format!("pattern{i:02}")).collect();
    let mut counts = vec![0u64; cfg.tags];
    let mut docs = Vec::with_capacity(cfg.documents);
    for d in 0..cfg.documents {
        let n_tags = rng.random_range(1..=cfg.max_tags_per_doc.clamp(1, cfg.tags));
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.tags, n_tags).into_vec();
        chosen.sort_unstable();
        let mut tokens: Vec<String> = (0..cfg.tokens)
            .map(|_| {
                let len = rng.random_range(2..=7);
                (0..len)
                    .map(|_| *FILLER_ALPHABET.choose(&mut rng).unwrap() as char)
                    .collect()
            })
            .collect();
        let slots = rand::seq::index::sample(&mut rng, cfg.tokens, n_tags.min(cfg.tokens)).into_vec();
        for (&t, &slot) in chosen.iter().zip(&slots) {
            counts[t] += 1;
            if cfg.hide_in_tokens {
                let cut = rng.random_range(0..=tokens[slot].len());
                tokens[slot].insert_str(cut, &motif[t]);
            } else {
                tokens[slot] = motif[t].clone();
            }
        }
        let mut text = String::new();
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                text.push_str(FILLER_PUNCT.choose(&mut rng).unwrap());
            }
            text.push_str(tok);
        }
        docs.push(TaggedDocument {
            id: d as u64,
            text,
            tags: chosen.iter().map(|&t| names[t].clone()).collect(),
            score: 0,
            snippet_count: 1,
        });
    }
    let vocab = TagVocabulary::with_counts(names.into_iter().zip(counts).collect());
    (docs, vocab)
}

/// Long-tailed label matrix: label `j` has a positive count decaying
/// geometrically from `head` down to exactly `rarest`, placed uniformly.
pub fn long_tail_labels(samples: usize, labels: usize, head: usize, rarest: usize, seed: u64) -> LabelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); samples];
    for j in 0..labels {
        let frac = if labels > 1 {
            j as f64 / (labels - 1) as f64
        } else {
            0.0
        };
        let count = (head as f64 * (rarest as f64 / head as f64).powf(frac)).round() as usize;
        for i in rand::seq::index::sample(&mut rng, samples, count.min(samples)) {
            rows[i].push(j);
        }
    }
    LabelMatrix::from_rows(labels, rows, (0..samples as u64).collect())
}
