//! Token n-gram features for the bag-of-n-grams baseline.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_FEATURES: usize = 75_000;
pub const DEFAULT_MAX_N: usize = 3;

/// Whitespace-separated tokens, with every ASCII punctuation character
/// standing alone.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || c.is_ascii_punctuation() {
            if let Some(s) = start.take() {
                tokens.push(&text[s..i]);
            }
            if c.is_ascii_punctuation() {
                tokens.push(&text[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

fn for_each_ngram(tokens: &[&str], max_n: usize, mut f: impl FnMut(String)) {
    for n in 1..=max_n {
        for w in tokens.windows(n) {
            f(w.join(" "));
        }
    }
}

/// Most frequent training-set n-grams, descending by count, ties lexicographic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NgramRepr", into = "NgramRepr")]
pub struct NgramVocab {
    max_n: usize,
    entries: Vec<(String, u64)>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct NgramRepr {
    max_n: usize,
    entries: Vec<(String, u64)>,
}

impl From<NgramRepr> for NgramVocab {
    fn from(r: NgramRepr) -> Self {
        Self::from_entries(r.max_n, r.entries)
    }
}

impl From<NgramVocab> for NgramRepr {
    fn from(v: NgramVocab) -> Self {
        NgramRepr {
            max_n: v.max_n,
            entries: v.entries,
        }
    }
}

impl NgramVocab {
    fn from_entries(max_n: usize, entries: Vec<(String, u64)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (g.clone(), i as u32))
            .collect();
        Self { max_n, entries, index }
    }

    /// Counts every 1..=`max_n` gram over `texts` and keeps the top `max_features`.
    pub fn build<'a, I>(texts: I, max_features: usize, max_n: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for t in texts {
            let tokens = tokenize(t);
            for_each_ngram(&tokens, max_n, |g| *counts.entry(g).or_default() += 1);
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_features);
        Self::from_entries(max_n, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn index_of(&self, gram: &str) -> Option<u32> {
        self.index.get(gram).copied()
    }

    /// Sparse count vector of in-vocabulary n-grams, sorted by column.
    pub fn featurize(&self, text: &str) -> Vec<(u32, f32)> {
        let tokens = tokenize(text);
        let mut counts: BTreeMap<u32, f32> = BTreeMap::new();
        for_each_ngram(&tokens, self.max_n, |g| {
            if let Some(i) = self.index.get(&g) {
                *counts.entry(*i).or_default() += 1.0;
            }
        });
        counts.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("a = b"), vec!["a", "=", "b"]);
        assert_eq!(tokenize("foo(x,y);\n"), vec!["foo", "(", "x", ",", "y", ")", ";"]);
        assert_eq!(tokenize("  "), Vec::<&str>::new());
        assert_eq!(tokenize("naïve_fn"), vec!["naïve", "_", "fn"]);
    }

    #[test]
    fn ngrams_of_assignment() {
        let v = NgramVocab::build(["a = b"], 100, 3);
        let grams: Vec<&str> = v.entries().iter().map(|(g, _)| g.as_str()).collect();
        assert_eq!(grams, vec!["=", "= b", "a", "a =", "a = b", "b"]);
    }

    #[test]
    fn featurize_counts() {
        let v = NgramVocab::build(["x + y", "x"], 100, 3);
        assert_eq!(v.entries()[0], ("x".to_string(), 2));
        assert!(v.featurize("nothing shared").is_empty());
        let once = v.featurize("x + y");
        let twice = v.featurize("x + y x + y");
        let x = v.index_of("x").unwrap();
        let get = |f: &[(u32, f32)], i: u32| f.iter().find(|(c, _)| *c == i).map(|p| p.1).unwrap_or(0.0);
        assert_eq!(get(&once, x), 1.0);
        assert_eq!(get(&twice, x), 2.0);
        let xy = v.index_of("x + y").unwrap();
        assert_eq!(get(&twice, xy), 2.0);
    }

    #[test]
    fn truncates_to_limit() {
        let v = NgramVocab::build(["a b c d e f"], 4, 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.index_of("e"), None);
    }
}
