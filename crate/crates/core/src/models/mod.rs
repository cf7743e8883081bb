//! The three classifiers (character CNN, embedding logistic regression,
//! n-gram logistic regression), their training loop and bundle format.

pub mod bundle;
pub mod ngram;
pub mod train;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::TagVocabulary;
use crate::nn::graph::{Mode, Var, BN_EPS};
use crate::nn::kernels;
use crate::nn::{Binding, CharCodec, Graph, NnError, ParamStore, Scalar, Tensor, EMBEDDING_ROWS, UNKNOWN_INDEX};

pub use bundle::{load_bundle, read_bundle, save_bundle, write_bundle, BundleError, BUNDLE_VERSION};
pub use ngram::NgramVocab;
pub use train::{train, train_embed_lr, train_ngram_lr, EpochLoss, Schedule, TrainError, TrainingMeta};

pub const CNN_EMBED_DIM: usize = 16;
pub const CNN_STACK_DEPTH: usize = 2;
pub const EMBED_LR_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub conv_stack_depth: usize,
    pub dense_sizes: [usize; 2],
    pub output_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: CNN_EMBED_DIM,
            filter_widths: vec![3, 5, 7, 9],
            filters_per_width: 64,
            conv_stack_depth: CNN_STACK_DEPTH,
            dense_sizes: [512, 512],
            output_dim: 0,
        }
    }
}

impl ArchConfig {
    pub fn with_outputs(output_dim: usize) -> Self {
        Self {
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Shape(format!("invalid architecture: {m}")));
        if self.embed_dim != CNN_EMBED_DIM {
            return bad("embed_dim must be 16");
        }
        if self.conv_stack_depth != CNN_STACK_DEPTH {
            return bad("conv_stack_depth must be 2");
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return bad("filter widths must be non-empty and positive");
        }
        if self.filters_per_width == 0 || self.dense_sizes.contains(&0) || self.output_dim == 0 {
            return bad("layer sizes must be positive");
        }
        Ok(())
    }

    /// Shortest input for which every stacked convolution has an output.
    pub fn min_input_len(&self) -> usize {
        let w = self.filter_widths.iter().copied().max().unwrap_or(1);
        self.conv_stack_depth * (w - 1) + 1
    }

    /// Length of the pooled representation.
    pub fn pooled_dim(&self) -> usize {
        self.filters_per_width * self.filter_widths.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedLrConfig {
    pub embed_dim: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramLrConfig {
    pub vocab: NgramVocab,
    pub output_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    EmbedLr,
    NgramLr,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn => "cnn",
            ModelKind::EmbedLr => "embed_lr",
            ModelKind::NgramLr => "ngram_lr",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "embed_lr" => Ok(ModelKind::EmbedLr),
            "ngram_lr" => Ok(ModelKind::NgramLr),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Cnn(ArchConfig),
    EmbedLr(EmbedLrConfig),
    NgramLr(NgramLrConfig),
}

/// Model input for one document.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Chars(Vec<u8>),
    Counts(Vec<(u32, f32)>),
}

impl Features {
    /// Cost proxy used for length bucketing.
    pub fn len(&self) -> usize {
        match self {
            Features::Chars(c) => c.len(),
            Features::Counts(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn chars(&self) -> Result<&[u8], NnError> {
        match self {
            Features::Chars(c) => Ok(c),
            Features::Counts(_) => Err(NnError::Shape("expected character features".into())),
        }
    }

    fn counts(&self) -> Result<&[(u32, f32)], NnError> {
        match self {
            Features::Counts(c) => Ok(c),
            Features::Chars(_) => Err(NnError::Shape("expected n-gram features".into())),
        }
    }
}

fn conv_name(width: usize, layer: usize) -> String {
    format!("conv{width}.{layer}")
}

fn zeros<F: Scalar>(store: &mut ParamStore<F>, name: String, n: usize) {
    store.insert(name, Tensor::zeros(vec![n]), true);
}

/// Pads a batch of index sequences to a common length. Returns the grid and
/// each sample's padded length (at least `min_len`).
fn pad_batch(batch: &[&[u8]], min_len: usize) -> (Vec<u8>, Vec<usize>, usize) {
    let lens: Vec<usize> = batch.iter().map(|s| s.len().max(min_len)).collect();
    let time = lens.iter().copied().max().unwrap_or(min_len);
    let mut grid = Vec::with_capacity(batch.len() * time);
    for s in batch {
        grid.extend_from_slice(s);
        grid.extend(std::iter::repeat_n(UNKNOWN_INDEX, time - s.len()));
    }
    (grid, lens, time)
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Cnn(_) => ModelKind::Cnn,
            Architecture::EmbedLr(_) => ModelKind::EmbedLr,
            Architecture::NgramLr(_) => ModelKind::NgramLr,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Cnn(a) => a.output_dim,
            Architecture::EmbedLr(c) => c.output_dim,
            Architecture::NgramLr(c) => c.output_dim,
        }
    }

    pub fn uses_batch_norm(&self) -> bool {
        matches!(self, Architecture::Cnn(_))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        match self {
            Architecture::Cnn(a) => a.validate(),
            Architecture::EmbedLr(c) if c.embed_dim == 0 || c.output_dim == 0 => {
                Err(NnError::Shape("embedding LR sizes must be positive".into()))
            }
            Architecture::NgramLr(c) if c.output_dim == 0 => Err(NnError::Shape("no outputs".into())),
            _ => Ok(()),
        }
    }

    /// Fresh parameters, deterministic per seed.
    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamStore<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        match self {
            Architecture::Cnn(a) => {
                s.insert_fan_in("embedding", vec![EMBEDDING_ROWS, a.embed_dim], a.embed_dim, &mut rng);
                for &w in &a.filter_widths {
                    let mut c_in = a.embed_dim;
                    for layer in 0..a.conv_stack_depth {
                        let name = conv_name(w, layer);
                        s.insert_fan_in(
                            &format!("{name}.weight"),
                            vec![w, c_in, a.filters_per_width],
                            w * c_in,
                            &mut rng,
                        );
                        zeros(&mut s, format!("{name}.bias"), a.filters_per_width);
                        c_in = a.filters_per_width;
                    }
                }
                let mut d_in = a.pooled_dim();
                for (i, &d) in a.dense_sizes.iter().enumerate() {
                    s.insert_fan_in(&format!("dense{i}.weight"), vec![d_in, d], d_in, &mut rng);
                    zeros(&mut s, format!("dense{i}.bias"), d);
                    s.insert(format!("bn{i}.gamma"), Tensor::full(vec![d], F::one()), true);
                    zeros(&mut s, format!("bn{i}.beta"), d);
                    s.insert(format!("bn{i}.running_mean"), Tensor::zeros(vec![d]), false);
                    s.insert(format!("bn{i}.running_var"), Tensor::full(vec![d], F::one()), false);
                    d_in = d;
                }
                s.insert_fan_in("output.weight", vec![d_in, a.output_dim], d_in, &mut rng);
                zeros(&mut s, "output.bias".into(), a.output_dim);
            }
            Architecture::EmbedLr(c) => {
                s.insert_fan_in("embedding", vec![EMBEDDING_ROWS, c.embed_dim], c.embed_dim, &mut rng);
                s.insert_fan_in("output.weight", vec![c.embed_dim, c.output_dim], c.embed_dim, &mut rng);
                zeros(&mut s, "output.bias".into(), c.output_dim);
            }
            Architecture::NgramLr(c) => {
                s.insert("output.weight", Tensor::zeros(vec![c.vocab.len(), c.output_dim]), true);
                zeros(&mut s, "output.bias".into(), c.output_dim);
            }
        }
        s
    }

    pub fn featurize(&self, text: &str) -> Features {
        match self {
            Architecture::NgramLr(c) => Features::Counts(c.vocab.featurize(text)),
            _ => Features::Chars(CharCodec::shared().encode(text)),
        }
    }

    /// Records a forward pass over `batch`; returns the `[batch, q]` probabilities.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        b: &Binding,
        store: &mut ParamStore<F>,
        batch: &[&Features],
        mode: Mode,
    ) -> Result<Var, NnError> {
        let logits = match self {
            Architecture::Cnn(a) => {
                let seqs: Vec<&[u8]> = batch.iter().map(|f| f.chars()).collect::<Result<_, _>>()?;
                let (grid, lens, time) = pad_batch(&seqs, a.min_input_len());
                let emb = g.embedding(b.var("embedding")?, &grid, seqs.len(), time)?;
                let mut pooled = Vec::with_capacity(a.filter_widths.len());
                for &w in &a.filter_widths {
                    let mut h = emb;
                    for layer in 0..a.conv_stack_depth {
                        let name = conv_name(w, layer);
                        h = g.conv1d(h, b.var(&format!("{name}.weight"))?, b.var(&format!("{name}.bias"))?)?;
                        h = g.relu(h)?;
                    }
                    let span = a.conv_stack_depth * (w - 1);
                    let t_out = time - span;
                    let mask: Vec<bool> = lens
                        .iter()
                        .flat_map(|&len| (0..t_out).map(move |t| t + span < len))
                        .collect();
                    pooled.push(g.masked_sum(h, &mask)?);
                }
                let mut x = g.concat(&pooled)?;
                for i in 0..a.dense_sizes.len() {
                    x = g.dense(
                        x,
                        b.var(&format!("dense{i}.weight"))?,
                        b.var(&format!("dense{i}.bias"))?,
                    )?;
                    let prefix = format!("bn{i}");
                    let mut stats = store.take_running(&prefix)?;
                    let normed = g.batch_norm(
                        x,
                        b.var(&format!("{prefix}.gamma"))?,
                        b.var(&format!("{prefix}.beta"))?,
                        &mut stats,
                        mode,
                    );
                    store.put_running(&prefix, stats)?;
                    x = g.relu(normed?)?;
                }
                g.dense(x, b.var("output.weight")?, b.var("output.bias")?)?
            }
            Architecture::EmbedLr(_) => {
                let seqs: Vec<&[u8]> = batch.iter().map(|f| f.chars()).collect::<Result<_, _>>()?;
                let (grid, lens, time) = pad_batch(&seqs, 1);
                let emb = g.embedding(b.var("embedding")?, &grid, seqs.len(), time)?;
                let mask: Vec<bool> = lens.iter().flat_map(|&len| (0..time).map(move |t| t < len)).collect();
                let pooled = g.masked_mean(emb, &mask)?;
                g.dense(pooled, b.var("output.weight")?, b.var("output.bias")?)?
            }
            Architecture::NgramLr(_) => {
                let rows = batch
                    .iter()
                    .map(|f| {
                        f.counts()
                            .map(|c| c.iter().map(|&(i, v)| (i, F::from_f64_lossy(v as f64))).collect())
                    })
                    .collect::<Result<Vec<Vec<(u32, F)>>, _>>()?;
                g.sparse_dense(rows, b.var("output.weight")?, b.var("output.bias")?)?
            }
        };
        g.sigmoid(logits)
    }

    /// Tape-free inference for one document with frozen parameters.
    ///
    /// The CNN path processes long inputs in chunks of output positions, so
    /// memory stays bounded by the chunk size rather than the document length.
    pub fn infer(&self, store: &ParamStore<f32>, features: &Features) -> Result<Vec<f32>, NnError> {
        let eps = graph_prob_eps();
        let logits = match self {
            Architecture::Cnn(a) => infer_cnn(a, store, features.chars()?)?,
            Architecture::EmbedLr(c) => {
                let seq = features.chars()?;
                let table = store.get("embedding")?;
                let mut counts = [0usize; EMBEDDING_ROWS];
                for &i in seq {
                    counts[i as usize] += 1;
                }
                let len = seq.len();
                if len == 0 {
                    counts[UNKNOWN_INDEX as usize] = 1;
                }
                let n = len.max(1) as f32;
                let mut pooled = vec![0f32; c.embed_dim];
                for (row, &cnt) in counts.iter().enumerate() {
                    if cnt > 0 {
                        let r = &table.data()[row * c.embed_dim..(row + 1) * c.embed_dim];
                        for (p, v) in pooled.iter_mut().zip(r) {
                            *p += cnt as f32 * v;
                        }
                    }
                }
                pooled.iter_mut().for_each(|p| *p /= n);
                dense_vec(&pooled, store, "output")?
            }
            Architecture::NgramLr(c) => {
                let w = store.get("output.weight")?;
                let mut out = store.get("output.bias")?.data().to_vec();
                let q = c.output_dim;
                for &(col, v) in features.counts()? {
                    let col = col as usize;
                    if col >= w.dim(0) {
                        return Err(NnError::IndexOutOfRange {
                            index: col,
                            rows: w.dim(0),
                        });
                    }
                    for (o, wv) in out.iter_mut().zip(&w.data()[col * q..(col + 1) * q]) {
                        *o += v * wv;
                    }
                }
                out
            }
        };
        Ok(logits.into_iter().map(|z| kernels::sigmoid(z, eps)).collect())
    }
}

fn graph_prob_eps() -> f32 {
    crate::nn::graph::PROB_EPS as f32
}

fn dense_vec(x: &[f32], store: &ParamStore<f32>, prefix: &str) -> Result<Vec<f32>, NnError> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let b = store.get(&format!("{prefix}.bias"))?;
    if w.dim(0) != x.len() {
        return Err(NnError::Shape(format!(
            "{prefix}: input {} vs weight {:?}",
            x.len(),
            w.shape()
        )));
    }
    Ok(kernels::dense_forward(x, 1, x.len(), w.data(), w.dim(1), b.data()))
}

/// Output positions per chunk in the CNN inference path.
const INFER_CHUNK: usize = 2048;

fn infer_cnn(a: &ArchConfig, store: &ParamStore<f32>, seq: &[u8]) -> Result<Vec<f32>, NnError> {
    let min_len = a.min_input_len();
    let mut padded;
    let seq = if seq.len() < min_len {
        padded = seq.to_vec();
        padded.resize(min_len, UNKNOWN_INDEX);
        &padded[..]
    } else {
        seq
    };
    let table = store.get("embedding")?;
    let d = a.embed_dim;
    let f = a.filters_per_width;
    let mut pooled = Vec::with_capacity(a.pooled_dim());
    for &w in &a.filter_widths {
        let span = a.conv_stack_depth * (w - 1);
        let valid = seq.len() - span;
        let layers: Vec<(&Tensor<f32>, &Tensor<f32>)> = (0..a.conv_stack_depth)
            .map(|l| {
                let name = conv_name(w, l);
                Ok((
                    store.get(&format!("{name}.weight"))?,
                    store.get(&format!("{name}.bias"))?,
                ))
            })
            .collect::<Result<_, NnError>>()?;
        let mut sum = vec![0f32; f];
        let mut start = 0;
        while start < valid {
            let end = (start + INFER_CHUNK).min(valid);
            let window = &seq[start..end + span];
            let mut x = Vec::with_capacity(window.len() * d);
            for &i in window {
                x.extend_from_slice(&table.data()[i as usize * d..(i as usize + 1) * d]);
            }
            let mut time = window.len();
            let mut c_in = d;
            for (wt, bt) in &layers {
                let t_out = time + 1 - w;
                let mut y = vec![0f32; t_out * f];
                kernels::conv1d_sequence(&x, time, c_in, wt.data(), w, f, bt.data(), &mut y);
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                x = y;
                time = t_out;
                c_in = f;
            }
            let mask = vec![true; time];
            let mut part = vec![0f32; f];
            kernels::masked_column_sum(&x, f, &mask, &mut part);
            for (s, p) in sum.iter_mut().zip(&part) {
                *s += p;
            }
            start = end;
        }
        pooled.extend(sum);
    }
    let mut x = pooled;
    for i in 0..a.dense_sizes.len() {
        let h = dense_vec(&x, store, &format!("dense{i}"))?;
        let gamma = store.get(&format!("bn{i}.gamma"))?.data();
        let beta = store.get(&format!("bn{i}.beta"))?.data();
        let mean = store.get(&format!("bn{i}.running_mean"))?.data();
        let var = store.get(&format!("bn{i}.running_var"))?.data();
        x = h
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let inv = 1.0 / (var[j] + BN_EPS as f32).sqrt();
                (gamma[j] * ((v - mean[j]) * inv) + beta[j]).max(0.0)
            })
            .collect();
    }
    dense_vec(&x, store, "output")
}

/// A trained (or freshly initialized) model with everything needed to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub architecture: Architecture,
    pub params: ParamStore<f32>,
    pub vocab: TagVocabulary,
    pub codec_version: u32,
    pub meta: TrainingMeta,
}

impl ModelBundle {
    pub fn new(architecture: Architecture, vocab: TagVocabulary, seed: u64) -> Result<Self, NnError> {
        architecture.validate()?;
        if architecture.output_dim() != vocab.len() {
            return Err(NnError::Shape(format!(
                "{} outputs for {} tags",
                architecture.output_dim(),
                vocab.len()
            )));
        }
        Ok(Self {
            params: architecture.init_params(seed),
            architecture,
            vocab,
            codec_version: crate::nn::CODEC_VERSION,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.architecture.kind()
    }

    /// Probabilities in vocabulary order.
    pub fn predict_raw(&self, text: &str) -> Result<Vec<f32>, NnError> {
        self.architecture
            .infer(&self.params, &self.architecture.featurize(text))
    }

    /// `(tag, probability)` for every tag, highest first; ties keep vocabulary order.
    pub fn predict_probs(&self, text: &str) -> Result<Vec<(String, f32)>, NnError> {
        Ok(self.rank(&self.predict_raw(text)?))
    }

    pub fn rank(&self, probs: &[f32]) -> Vec<(String, f32)> {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .map(|i| (self.vocab.tag(i).to_string(), probs[i]))
            .collect()
    }

    /// Parallel over documents; each prediction is independent of the others.
    pub fn predict_many<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<Vec<f32>>, NnError> {
        texts.par_iter().map(|t| self.predict_raw(t.as_ref())).collect()
    }
}

/// Initializes a CNN bundle for `vocab`.
pub fn build_cnn(arch: ArchConfig, vocab: TagVocabulary, seed: u64) -> Result<ModelBundle, NnError> {
    let arch = ArchConfig {
        output_dim: vocab.len(),
        ..arch
    };
    ModelBundle::new(Architecture::Cnn(arch), vocab, seed)
}

/// Finite-difference check of the whole model in 64-bit precision: mean BCE
/// of a training-mode forward pass over `texts` against `targets: [n, q]`.
pub fn network_gradcheck(
    arch: &Architecture,
    texts: &[&str],
    targets: &Tensor<f64>,
    seed: u64,
    samples: usize,
) -> Result<crate::nn::gradcheck::GradCheckReport, NnError> {
    let store: ParamStore<f64> = arch.init_params(seed);
    let feats: Vec<Features> = texts.iter().map(|t| arch.featurize(t)).collect();
    let refs: Vec<&Features> = feats.iter().collect();
    crate::nn::gradcheck::check_gradients(&store, samples, seed, crate::nn::gradcheck::CHECK_EPS, |g, b, s| {
        let p = arch.forward(g, b, s, &refs, Mode::Train)?;
        g.bce(p, targets)
    })
}
