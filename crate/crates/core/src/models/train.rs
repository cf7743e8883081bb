//! Mini-batch training with length bucketing and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ngram::{NgramVocab, DEFAULT_MAX_FEATURES, DEFAULT_MAX_N};
use super::{Architecture, EmbedLrConfig, Features, ModelBundle, NgramLrConfig, EMBED_LR_DIM};
use crate::correction::TagVocabulary;
use crate::ingest::TaggedDocument;
use crate::nn::graph::{bce_value, Mode};
use crate::nn::{Adam, AdamConfig, Graph, NnError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Run every kernel on the calling thread.
    pub single_threaded: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            learning_rate: 1e-3,
            seed: 0,
            single_threaded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Epoch whose parameters were kept (1-based; 0 if untrained).
    pub best_epoch: usize,
    pub loss_curve: Vec<EpochLoss>,
}

struct Example {
    features: Features,
    target: Vec<f32>,
}

fn examples(arch: &Architecture, vocab: &TagVocabulary, docs: &[TaggedDocument]) -> Vec<Example> {
    let q = vocab.len();
    docs.par_iter()
        .map(|d| {
            let mut target = vec![0f32; q];
            for t in &d.tags {
                if let Some(i) = vocab.index_of(t) {
                    target[i] = 1.0;
                }
            }
            Example {
                features: arch.featurize(&d.text),
                target,
            }
        })
        .collect()
}

/// Groups indices into batches of similar length. Shuffles first so equal
/// lengths land in random batches, then shuffles the batch order. A trailing
/// batch of one is merged into its neighbour, since batch norm needs two.
fn bucket(data: &[Example], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| data[i].features.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches.shuffle(rng);
    batches
}

fn target_tensor(data: &[Example], batch: &[usize], q: usize) -> Tensor<f32> {
    let flat = batch.iter().flat_map(|&i| data[i].target.iter().copied()).collect();
    Tensor::new(vec![batch.len(), q], flat).expect("target shape")
}

/// Mean BCE over `data` with batch norm in inference mode.
fn eval_loss(bundle: &mut ModelBundle, data: &[Example], batch_size: usize) -> Result<f64, NnError> {
    let q = bundle.architecture.output_dim();
    let mut total = 0f64;
    let mut n = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for batch in idx.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let b = bundle.params.bind(&mut g);
        let feats: Vec<&Features> = batch.iter().map(|&i| &data[i].features).collect();
        let p = bundle
            .architecture
            .forward(&mut g, &b, &mut bundle.params, &feats, Mode::Infer)?;
        let y = target_tensor(data, batch, q);
        total += bce_value(g.value(p).data(), y.data()) as f64 * batch.len() as f64;
        n += batch.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Minimizes mean BCE on `train`. When `val` is non-empty, stops after
/// `patience` epochs without improvement and keeps the best parameters;
/// otherwise runs all `max_epochs`.
pub fn train(
    bundle: ModelBundle,
    train: &[TaggedDocument],
    val: &[TaggedDocument],
    schedule: &Schedule,
) -> Result<ModelBundle, TrainError> {
    if schedule.single_threaded {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| TrainError::ThreadPool(e.to_string()))?;
        pool.install(|| train_inner(bundle, train, val, schedule))
    } else {
        train_inner(bundle, train, val, schedule)
    }
}

fn train_inner(
    mut bundle: ModelBundle,
    train: &[TaggedDocument],
    val: &[TaggedDocument],
    schedule: &Schedule,
) -> Result<ModelBundle, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if bundle.architecture.uses_batch_norm() && train.len() < 2 {
        return Err(NnError::BatchTooSmall.into());
    }
    let q = bundle.architecture.output_dim();
    let train_set = examples(&bundle.architecture, &bundle.vocab, train);
    let val_set = examples(&bundle.architecture, &bundle.vocab, val);
    let mut adam = Adam::new(AdamConfig {
        learning_rate: schedule.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, crate::nn::ParamStore<f32>)> = None;
    let mut since_best = 0;

    for epoch in 1..=schedule.max_epochs {
        let mut total = 0f64;
        for batch in bucket(&train_set, schedule.batch_size, &mut rng) {
            let mut g = Graph::new();
            let b = bundle.params.bind(&mut g);
            let feats: Vec<&Features> = batch.iter().map(|&i| &train_set[i].features).collect();
            let p = bundle
                .architecture
                .forward(&mut g, &b, &mut bundle.params, &feats, Mode::Train)?;
            let loss = g.bce(p, &target_tensor(&train_set, &batch, q))?;
            total += g.value(loss).data()[0] as f64 * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads = b.gradients(&mut grads);
            adam.step(&mut bundle.params, &grads)?;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(eval_loss(&mut bundle, &val_set, schedule.batch_size)?)
        };
        curve.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, bundle.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= schedule.patience {
                    break;
                }
            }
        }
    }

    let epochs = curve.len();
    let best_epoch = match best {
        Some((_, e, params)) => {
            bundle.params = params;
            e
        }
        None => epochs,
    };
    bundle.meta = TrainingMeta {
        seed: schedule.seed,
        epochs,
        best_epoch,
        loss_curve: curve,
    };
    Ok(bundle)
}

/// Character-embedding logistic regression: 8-dim embedding, mean over time, q outputs.
pub fn train_embed_lr(
    train_docs: &[TaggedDocument],
    val: &[TaggedDocument],
    vocab: TagVocabulary,
    schedule: &Schedule,
) -> Result<ModelBundle, TrainError> {
    let arch = Architecture::EmbedLr(EmbedLrConfig {
        embed_dim: EMBED_LR_DIM,
        output_dim: vocab.len(),
    });
    let bundle = ModelBundle::new(arch, vocab, schedule.seed)?;
    train(bundle, train_docs, val, schedule)
}

/// Bag-of-n-grams logistic regression. The n-gram vocabulary is built from
/// `train_docs` only.
pub fn train_ngram_lr(
    train_docs: &[TaggedDocument],
    val: &[TaggedDocument],
    vocab: TagVocabulary,
    max_features: Option<usize>,
    schedule: &Schedule,
) -> Result<ModelBundle, TrainError> {
    if train_docs.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let grams = NgramVocab::build(
        train_docs.iter().map(|d| d.text.as_str()),
        max_features.unwrap_or(DEFAULT_MAX_FEATURES),
        DEFAULT_MAX_N,
    );
    let arch = Architecture::NgramLr(NgramLrConfig {
        vocab: grams,
        output_dim: vocab.len(),
    });
    let bundle = ModelBundle::new(arch, vocab, schedule.seed)?;
    train(bundle, train_docs, val, schedule)
}
