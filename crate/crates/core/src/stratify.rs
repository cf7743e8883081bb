//! Multilabel train/validation/test partitioning.
//!
//! [`iterative_stratify`] is the greedy rarest-label-first algorithm;
//! [`labelset_stratify`] treats each distinct tag combination as a class and
//! serves as the baseline, alongside a plain seeded [`random_split`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::TagVocabulary;
use crate::ingest::TaggedDocument;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StratifyError {
    #[error("document {doc} has tag {tag:?} outside the vocabulary")]
    UnknownTag { doc: u64, tag: String },
    #[error("document {0} has no tags")]
    Unlabeled(u64),
    #[error("invalid ratios {0:?}: each must be > 0 and they must sum to 1")]
    BadRatios(Vec<f64>),
    #[error("partition line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Sparse binary sample-by-label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    labels: usize,
    rows: Vec<Vec<usize>>,
    sample_ids: Vec<u64>,
}

impl LabelMatrix {
    /// `rows[i]` lists the label indices of sample `i`.
    pub fn from_rows(labels: usize, rows: Vec<Vec<usize>>, sample_ids: Vec<u64>) -> Self {
        assert_eq!(rows.len(), sample_ids.len());
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                assert!(r.iter().all(|&j| j < labels), "label index out of range");
                r
            })
            .collect();
        Self {
            labels,
            rows,
            sample_ids,
        }
    }

    pub fn samples(&self) -> usize {
        self.rows.len()
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// Set entries as `(sample, label)` pairs in row order.
    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.labels];
        for r in &self.rows {
            for &j in r {
                c[j] += 1;
            }
        }
        c
    }

    /// Restriction to the given samples, in the given order.
    pub fn subset(&self, samples: &[usize]) -> LabelMatrix {
        LabelMatrix {
            labels: self.labels,
            rows: samples.iter().map(|&i| self.rows[i].clone()).collect(),
            sample_ids: samples.iter().map(|&i| self.sample_ids[i]).collect(),
        }
    }
}

pub fn build_label_matrix<'a, I>(docs: I, vocab: &TagVocabulary) -> Result<LabelMatrix, StratifyError>
where
    I: IntoIterator<Item = &'a TaggedDocument>,
{
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for d in docs {
        let mut r = Vec::with_capacity(d.tags.len());
        for t in &d.tags {
            let j = vocab.index_of(t).ok_or_else(|| StratifyError::UnknownTag {
                doc: d.id,
                tag: t.clone(),
            })?;
            r.push(j);
        }
        if r.is_empty() {
            return Err(StratifyError::Unlabeled(d.id));
        }
        rows.push(r);
        ids.push(d.id);
    }
    Ok(LabelMatrix::from_rows(vocab.len(), rows, ids))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

/// Assignment of every sample to one of `ratios.len()` subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Partition {
    pub fn subsets(&self) -> usize {
        self.ratios.len()
    }

    pub fn members(&self, subset: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == subset)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.ratios.len()];
        for &s in &self.assignment {
            sizes[s] += 1;
        }
        sizes
    }
}

fn check_ratios(ratios: &[f64]) -> Result<(), StratifyError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.is_empty() || ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(StratifyError::BadRatios(ratios.to_vec()));
    }
    Ok(())
}

/// Subset with the largest `demand`; ties go to the larger remaining
/// `capacity`, then to the lowest index.
fn pick_subset(demand: &[f64], capacity: &[f64]) -> usize {
    let mut best = 0;
    for s in 1..demand.len() {
        let better = demand[s] > demand[best] || (demand[s] == demand[best] && capacity[s] > capacity[best]);
        if better {
            best = s;
        }
    }
    best
}

/// Greedy iterative stratification.
///
/// Repeatedly takes the label with the fewest unassigned positives (lowest
/// index on ties) and places each of its unassigned samples, in seeded
/// random order, into the subset with the largest remaining demand for that
/// label. Samples without labels are placed by remaining capacity.
pub fn iterative_stratify(y: &LabelMatrix, ratios: &[f64], seed: u64) -> Result<Partition, StratifyError> {
    check_ratios(ratios)?;
    let m = y.samples();
    let k = ratios.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut capacity: Vec<f64> = ratios.iter().map(|r| r * m as f64).collect();
    let counts = y.label_counts();
    let mut demand: Vec<Vec<f64>> = counts
        .iter()
        .map(|&c| ratios.iter().map(|r| r * c as f64).collect())
        .collect();

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); y.labels()];
    for i in 0..m {
        for &j in y.row(i) {
            by_label[j].push(i);
        }
    }
    for samples in &mut by_label {
        samples.shuffle(&mut rng);
    }
    let mut remaining: Vec<usize> = counts.clone();
    let mut assignment: Vec<Option<usize>> = vec![None; m];
    let mut unassigned_labeled = (0..m).filter(|&i| !y.row(i).is_empty()).count();

    while unassigned_labeled > 0 {
        let label = (0..y.labels())
            .filter(|&j| remaining[j] > 0)
            .min_by_key(|&j| (remaining[j], j))
            .expect("a labeled sample is unassigned");
        for &i in &by_label[label] {
            if assignment[i].is_some() {
                continue;
            }
            let s = pick_subset(&demand[label], &capacity);
            assignment[i] = Some(s);
            unassigned_labeled -= 1;
            capacity[s] -= 1.0;
            for &j in y.row(i) {
                demand[j][s] -= 1.0;
                remaining[j] -= 1;
            }
        }
    }

    let mut rest: Vec<usize> = (0..m).filter(|&i| assignment[i].is_none()).collect();
    rest.shuffle(&mut rng);
    for i in rest {
        let s = pick_subset(&capacity, &capacity);
        assignment[i] = Some(s);
        capacity[s] -= 1.0;
    }
    debug_assert_eq!(capacity.len(), k);
    Ok(Partition {
        assignment: assignment.into_iter().map(|a| a.unwrap()).collect(),
        ratios: ratios.to_vec(),
    })
}

/// Fraction held out at each of the two stages.
pub const HOLDOUT_FRACTION: f64 = 0.01;

/// Two 99/1 iterative passes: first `rest / test`, then `train / val` on the
/// rest. Subset indices follow [`Subset`] order (train 0, val 1, test 2).
pub fn two_stage_split(y: &LabelMatrix, seed: u64) -> Result<Partition, StratifyError> {
    let ratios = [1.0 - HOLDOUT_FRACTION, HOLDOUT_FRACTION];
    let first = iterative_stratify(y, &ratios, seed)?;
    let rest = first.members(0);
    let second = iterative_stratify(&y.subset(&rest), &ratios, seed.wrapping_add(1))?;
    let mut assignment = vec![2; y.samples()];
    for (pos, &i) in rest.iter().enumerate() {
        assignment[i] = second.assignment[pos];
    }
    let keep = 1.0 - HOLDOUT_FRACTION;
    Ok(Partition {
        assignment,
        ratios: vec![keep * keep, keep * HOLDOUT_FRACTION, HOLDOUT_FRACTION],
    })
}

/// Stratification on whole labelsets. Labelsets that occur once are pooled
/// and spread by remaining subset capacity.
pub fn labelset_stratify(y: &LabelMatrix, ratios: &[f64], seed: u64) -> Result<Partition, StratifyError> {
    check_ratios(ratios)?;
    let m = y.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for i in 0..m {
        groups.entry(y.row(i)).or_default().push(i);
    }
    let mut capacity: Vec<f64> = ratios.iter().map(|r| r * m as f64).collect();
    let mut assignment = vec![usize::MAX; m];
    let mut singletons = Vec::new();
    for members in groups.values_mut() {
        if members.len() == 1 {
            singletons.push(members[0]);
            continue;
        }
        members.shuffle(&mut rng);
        let mut demand: Vec<f64> = ratios.iter().map(|r| r * members.len() as f64).collect();
        for &i in members.iter() {
            let s = pick_subset(&demand, &capacity);
            assignment[i] = s;
            demand[s] -= 1.0;
            capacity[s] -= 1.0;
        }
    }
    singletons.shuffle(&mut rng);
    for i in singletons {
        let s = pick_subset(&capacity, &capacity);
        assignment[i] = s;
        capacity[s] -= 1.0;
    }
    Ok(Partition {
        assignment,
        ratios: ratios.to_vec(),
    })
}

/// Seeded uniform split with subset sizes rounded from `ratios`.
pub fn random_split(m: usize, ratios: &[f64], seed: u64) -> Result<Partition, StratifyError> {
    check_ratios(ratios)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; m];
    let mut cumulative = 0.0;
    let mut start = 0;
    for (s, r) in ratios.iter().enumerate() {
        cumulative += r;
        let end = if s + 1 == ratios.len() {
            m
        } else {
            ((cumulative * m as f64).round() as usize).min(m)
        };
        for &i in &order[start..end.max(start)] {
            assignment[i] = s;
        }
        start = end.max(start);
    }
    Ok(Partition {
        assignment,
        ratios: ratios.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratReport {
    /// Corpus-wide positive proportion `c_j` per label.
    pub corpus_proportion: Vec<f64>,
    /// `[label][subset]` positive proportion within each subset.
    pub subset_proportion: Vec<Vec<f64>>,
    /// `[label][subset]` positive count.
    pub subset_positives: Vec<Vec<usize>>,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    /// `|size_s / m - ratio_s|` per subset.
    pub size_deviation: Vec<f64>,
}

impl StratReport {
    /// Mean over subsets of `|p_sj - c_j|` for one label.
    pub fn label_deviation(&self, label: usize) -> f64 {
        let c = self.corpus_proportion[label];
        let row = &self.subset_proportion[label];
        row.iter().map(|p| (p - c).abs()).sum::<f64>() / row.len() as f64
    }

    pub fn to_tsv(&self, vocab: Option<&TagVocabulary>, subset_names: &[&str]) -> String {
        let mut out = String::from("label\tcorpus");
        for n in subset_names {
            let _ = write!(out, "\t{n}");
        }
        out.push('\n');
        for (j, row) in self.subset_proportion.iter().enumerate() {
            let name = vocab.map(|v| v.tag(j).to_string()).unwrap_or_else(|| j.to_string());
            let _ = write!(out, "{name}\t{:.6}", self.corpus_proportion[j]);
            for p in row {
                let _ = write!(out, "\t{p:.6}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# max_deviation\t{:.6}", self.max_deviation);
        let _ = writeln!(out, "# mean_deviation\t{:.6}", self.mean_deviation);
        for (n, d) in subset_names.iter().zip(&self.size_deviation) {
            let _ = writeln!(out, "# size_deviation_{n}\t{d:.6}");
        }
        out
    }
}

pub fn strat_report(y: &LabelMatrix, partition: &Partition) -> StratReport {
    let m = y.samples();
    let k = partition.subsets();
    let sizes = partition.sizes();
    let mut positives = vec![vec![0usize; k]; y.labels()];
    for i in 0..m {
        let s = partition.assignment[i];
        for &j in y.row(i) {
            positives[j][s] += 1;
        }
    }
    let counts = y.label_counts();
    let corpus: Vec<f64> = counts
        .iter()
        .map(|&c| if m == 0 { 0.0 } else { c as f64 / m as f64 })
        .collect();
    let proportions: Vec<Vec<f64>> = positives
        .iter()
        .map(|row| {
            row.iter()
                .zip(&sizes)
                .map(|(&p, &n)| if n == 0 { 0.0 } else { p as f64 / n as f64 })
                .collect()
        })
        .collect();
    let mut max_dev: f64 = 0.0;
    let mut sum_dev = 0.0;
    for (j, row) in proportions.iter().enumerate() {
        for p in row {
            let d = (p - corpus[j]).abs();
            max_dev = max_dev.max(d);
            sum_dev += d;
        }
    }
    let cells = (y.labels() * k).max(1);
    StratReport {
        corpus_proportion: corpus,
        subset_proportion: proportions,
        subset_positives: positives,
        max_deviation: max_dev,
        mean_deviation: sum_dev / cells as f64,
        size_deviation: sizes
            .iter()
            .zip(&partition.ratios)
            .map(|(&n, r)| if m == 0 { 0.0 } else { (n as f64 / m as f64 - r).abs() })
            .collect(),
    }
}

/// `sample_id<TAB>subset` lines.
pub fn write_partition(ids: &[u64], partition: &Partition) -> String {
    let mut out = String::new();
    for (id, &s) in ids.iter().zip(&partition.assignment) {
        let name = Subset::ALL.get(s).map(|s| s.as_str()).unwrap_or("other");
        let _ = writeln!(out, "{id}\t{name}");
    }
    out
}

pub fn read_partition(text: &str) -> Result<HashMap<u64, Subset>, StratifyError> {
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| StratifyError::Parse { line: n + 1, message };
        let (id, subset) = line
            .split_once('\t')
            .ok_or_else(|| err("expected id<TAB>subset".into()))?;
        let id = id.trim().parse::<u64>().map_err(|e| err(e.to_string()))?;
        map.insert(id, subset.trim().parse::<Subset>().map_err(err)?);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<usize>>, labels: usize) -> LabelMatrix {
        let ids = (0..rows.len() as u64).collect();
        LabelMatrix::from_rows(labels, rows, ids)
    }

    fn doc(id: u64, tags: &[&str]) -> TaggedDocument {
        TaggedDocument {
            id,
            text: String::new(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            score: 0,
            snippet_count: 1,
        }
    }

    #[test]
    fn label_matrix_entries() {
        let vocab = TagVocabulary::new(vec!["a".into(), "b".into()]);
        let docs = vec![doc(10, &["a"]), doc(11, &["a", "b"])];
        let y = build_label_matrix(&docs, &vocab).unwrap();
        assert_eq!(y.entries(), vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(y.sample_ids(), &[10, 11]);

        let single = build_label_matrix(&[doc(1, &["b"])], &vocab).unwrap();
        assert_eq!(single.samples(), 1);
        assert_eq!(single.entries(), vec![(0, 1)]);

        let err = build_label_matrix(&[doc(3, &["zzz"])], &vocab).unwrap_err();
        assert_eq!(
            err,
            StratifyError::UnknownTag {
                doc: 3,
                tag: "zzz".into()
            }
        );
    }

    /// Every assignment of 4 samples into two halves; the minimal total
    /// per-label deviation is zero and only reached by balanced splits.
    #[test]
    fn four_sample_split_matches_enumeration() {
        let y = matrix(vec![vec![0], vec![0], vec![1], vec![1]], 2);
        let mut best = f64::INFINITY;
        let mut optimal = Vec::new();
        for mask in 0u32..16 {
            if mask.count_ones() != 2 {
                continue;
            }
            let p = Partition {
                assignment: (0..4).map(|i| ((mask >> i) & 1) as usize).collect(),
                ratios: vec![0.5, 0.5],
            };
            let dev = strat_report(&y, &p).mean_deviation;
            if dev < best - 1e-12 {
                best = dev;
                optimal.clear();
            }
            if (dev - best).abs() < 1e-12 {
                optimal.push(p.assignment.clone());
            }
        }
        assert_eq!(best, 0.0);
        for seed in 0..10 {
            let p = iterative_stratify(&y, &[0.5, 0.5], seed).unwrap();
            assert!(optimal.contains(&p.assignment));
            let report = strat_report(&y, &p);
            assert_eq!(report.max_deviation, 0.0);
            assert_eq!(report.label_deviation(0), 0.0);
            assert_eq!(report.label_deviation(1), 0.0);
        }
    }

    #[test]
    fn single_label_reduces_to_sizes() {
        let y = matrix(vec![vec![0]; 10], 1);
        let p = iterative_stratify(&y, &[0.9, 0.1], 1).unwrap();
        assert_eq!(p.sizes(), vec![9, 1]);

        let one = matrix(vec![vec![0]], 1);
        assert_eq!(
            iterative_stratify(&one, &[0.2, 0.7, 0.1], 5).unwrap().assignment,
            vec![1]
        );
    }

    #[test]
    fn bad_ratios() {
        let y = matrix(vec![vec![0]], 1);
        assert!(iterative_stratify(&y, &[0.5, 0.6], 0).is_err());
        assert!(iterative_stratify(&y, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn two_stage_small() {
        let y = matrix(vec![vec![0]; 100], 1);
        let p = two_stage_split(&y, 3).unwrap();
        assert_eq!(p.sizes(), vec![98, 1, 1]);
        assert_eq!(p, two_stage_split(&y, 3).unwrap());
    }

    #[test]
    fn two_stage_large() {
        // 10000 samples over 20 labels with 500 positives each
        let y = matrix((0..10_000).map(|i| vec![i % 20]).collect(), 20);
        for seed in 0..3 {
            let sizes = two_stage_split(&y, seed).unwrap().sizes();
            assert!((sizes[0] as i64 - 9801).abs() <= 1, "{sizes:?}");
            assert!((sizes[1] as i64 - 99).abs() <= 1, "{sizes:?}");
            assert!((sizes[2] as i64 - 100).abs() <= 1, "{sizes:?}");
        }
    }

    #[test]
    fn labelset_examples() {
        let mut rows = vec![vec![0]; 10];
        rows.extend(vec![vec![0, 1]; 10]);
        let y = matrix(rows, 2);
        let p = labelset_stratify(&y, &[0.5, 0.5], 4).unwrap();
        for s in 0..2 {
            let members = p.members(s);
            assert_eq!(members.iter().filter(|&&i| i < 10).count(), 5);
            assert_eq!(members.iter().filter(|&&i| i >= 10).count(), 5);
        }
        assert_eq!(p, labelset_stratify(&y, &[0.5, 0.5], 4).unwrap());

        let unique = matrix((0..20).map(|i| vec![i]).collect(), 20);
        let p = labelset_stratify(&unique, &[0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(p.sizes(), vec![16, 2, 2]);
    }

    #[test]
    fn report_for_concentrated_label() {
        let y = matrix(vec![vec![0], vec![0], vec![1], vec![1]], 2);
        let p = Partition {
            assignment: vec![0, 0, 1, 1],
            ratios: vec![0.5, 0.5],
        };
        let r = strat_report(&y, &p);
        assert_eq!(r.corpus_proportion, vec![0.5, 0.5]);
        // label 0 is absent from subset 1: deviation there is c_0
        assert_eq!((r.subset_proportion[0][1] - r.corpus_proportion[0]).abs(), 0.5);
        assert_eq!(r.max_deviation, 0.5);
    }

    #[test]
    fn partition_file_round_trip() {
        let p = Partition {
            assignment: vec![0, 2, 1],
            ratios: vec![0.98, 0.01, 0.01],
        };
        let text = write_partition(&[5, 6, 7], &p);
        assert_eq!(text, "5\ttrain\n6\ttest\n7\tval\n");
        let map = read_partition(&text).unwrap();
        assert_eq!(map[&6], Subset::Test);
        assert!(read_partition("x\ttrain").is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = LabelMatrix> {
        proptest::collection::vec(proptest::collection::btree_set(0usize..6, 0..3), 1..80)
            .prop_map(|rows| matrix(rows.into_iter().map(|r| r.into_iter().collect()).collect(), 6))
    }

    proptest! {
        #[test]
        fn partitions_are_total_and_deterministic(y in arb_matrix(), seed in 0u64..1000) {
            let ratios = [0.6, 0.3, 0.1];
            for p in [
                iterative_stratify(&y, &ratios, seed).unwrap(),
                labelset_stratify(&y, &ratios, seed).unwrap(),
            ] {
                prop_assert_eq!(p.assignment.len(), y.samples());
                prop_assert!(p.assignment.iter().all(|&s| s < 3));
                prop_assert_eq!(p.sizes().iter().sum::<usize>(), y.samples());
            }
            prop_assert_eq!(
                iterative_stratify(&y, &ratios, seed).unwrap(),
                iterative_stratify(&y, &ratios, seed).unwrap()
            );
            let r = strat_report(&y, &iterative_stratify(&y, &ratios, seed).unwrap());
            prop_assert!(r.max_deviation >= 0.0 && r.mean_deviation >= 0.0);
        }
    }
}
