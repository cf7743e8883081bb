use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use codetag::correction::{filter_corpus, FilterConfig, StatsAccumulator, TagVocabulary};
use codetag::eval::{embedding_projection_2d, evaluate_model, throughput_bench};
use codetag::ingest::{ingest, TaggedDocument};
use codetag::io::{read_jsonl, write_jsonl, write_jsonl_record};
use codetag::models::{
    build_cnn, load_bundle, save_bundle, train, train_embed_lr, train_ngram_lr, ArchConfig, ModelBundle, Schedule,
};
use codetag::sampling::{sample_files, ManifestEntry};
use codetag::stratify::{
    build_label_matrix, iterative_stratify, labelset_stratify, random_split, read_partition, strat_report,
    two_stage_split, write_partition, Subset,
};
use codetag::validation::{create_session, RatingStore, ValidationSession};
use codetag_serve::AppState;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::{Command, Format, Kind, Method, ServeArgs};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Failure::Usage(msg.into()))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn read_docs(path: &Path) -> anyhow::Result<Vec<TaggedDocument>> {
    read_jsonl(open(path)?).with_context(|| format!("invalid documents in {}", path.display()))
}

fn read_vocab(path: &Path) -> anyhow::Result<TagVocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    TagVocabulary::from_tsv(&text).map_err(|e| anyhow!("invalid vocabulary {}: {e}", path.display()))
}

fn read_model(path: &Path) -> anyhow::Result<ModelBundle> {
    load_bundle(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn filter_config(path: Option<&PathBuf>) -> anyhow::Result<FilterConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => FilterConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_split(path: &Path) -> anyhow::Result<HashMap<u64, Subset>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    read_partition(&text).with_context(|| format!("invalid partition {}", path.display()))
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { dump, out, config } => {
            let cfg = filter_config(config.as_ref())?;
            let mut w = create(&out)?;
            let report = ingest(
                || File::open(&dump).map(BufReader::new),
                &cfg,
                |_| {},
                |d| write_jsonl_record(&mut w, &d),
            )
            .with_context(|| format!("ingesting {}", dump.display()))?;
            w.flush().context("flushing output")?;
            eprintln!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
        }
        Command::Stats {
            dump,
            input,
            out,
            config,
        } => {
            let mut acc = StatsAccumulator::default();
            if let Some(dump) = dump {
                let cfg = filter_config(config.as_ref())?;
                let mut docs = Vec::new();
                let mut snippets = StatsAccumulator::default();
                ingest(
                    || File::open(&dump).map(BufReader::new),
                    &cfg,
                    |s| snippets.add_snippet(s),
                    |d| {
                        docs.push(d);
                        Ok(())
                    },
                )
                .with_context(|| format!("ingesting {}", dump.display()))?;
                acc.merge(snippets);
                for d in docs.iter().filter(|d| codetag::correction::filter_score(d, &cfg)) {
                    acc.add_document(d);
                }
            } else if let Some(input) = input {
                for d in read_docs(&input)? {
                    acc.add_document(&d);
                }
            }
            write_text(&out, &acc.finish().to_tsv())?;
        }
        Command::Filter {
            input,
            out,
            vocab_out,
            config,
        } => {
            let cfg = filter_config(config.as_ref())?;
            let outcome = filter_corpus(read_docs(&input)?, &cfg).context("filtering")?;
            write_jsonl(create(&out)?, &outcome.documents).context("writing documents")?;
            write_text(&vocab_out, &outcome.vocab.to_tsv())?;
            eprintln!(
                "kept {} documents, {} tags; dropped {} by score, {} by tag frequency",
                outcome.documents.len(),
                outcome.vocab.len(),
                outcome.dropped_by_score,
                outcome.dropped_by_tags
            );
        }
        Command::Stratify {
            input,
            vocab,
            out,
            seed,
            method,
            ratios,
            report_out,
        } => {
            let ratios = match ratios {
                Some(r) => {
                    let v: std::result::Result<Vec<f64>, _> = r.split(',').map(|x| x.trim().parse::<f64>()).collect();
                    match v {
                        Ok(v) if v.len() == 3 && v.iter().all(|x| *x > 0.0) => Some(v),
                        _ => return usage(format!("--ratios expects three positive numbers, got {r:?}")),
                    }
                }
                None => None,
            };
            let docs = read_docs(&input)?;
            let vocab = read_vocab(&vocab)?;
            let y = build_label_matrix(&docs, &vocab).context("building label matrix")?;
            let partition = match (method, &ratios) {
                (Method::Iterative, None) => two_stage_split(&y, seed),
                (Method::Iterative, Some(r)) => iterative_stratify(&y, r, seed),
                (Method::Labelset, r) => labelset_stratify(&y, r.as_deref().unwrap_or(&[0.9801, 0.0099, 0.01]), seed),
                (Method::Random, r) => random_split(y.samples(), r.as_deref().unwrap_or(&[0.9801, 0.0099, 0.01]), seed),
            }
            .context("stratifying")?;
            write_text(&out, &write_partition(y.sample_ids(), &partition))?;
            let report = strat_report(&y, &partition);
            if let Some(path) = report_out {
                write_text(&path, &report.to_tsv(Some(&vocab), &["train", "val", "test"]))?;
            }
            eprintln!(
                "sizes {:?}; mean label deviation {:.6}, max {:.6}",
                partition.sizes(),
                report.mean_deviation,
                report.max_deviation
            );
        }
        Command::Train {
            input,
            vocab,
            partition,
            kind,
            out,
            seed,
            config,
            epochs,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.schedule.seed = s;
            }
            if let Some(e) = epochs {
                cfg.schedule.max_epochs = e;
            }
            let docs = read_docs(&input)?;
            let vocab = read_vocab(&vocab)?;
            let split = read_split(&partition)?;
            let pick = |s: Subset| -> Vec<TaggedDocument> {
                docs.iter().filter(|d| split.get(&d.id) == Some(&s)).cloned().collect()
            };
            let (tr, va) = (pick(Subset::Train), pick(Subset::Val));
            if tr.is_empty() {
                return Err(anyhow!("no training documents in {}", partition.display()).into());
            }
            let model = match kind {
                Kind::Cnn => {
                    let m = build_cnn(cfg.arch.clone(), vocab, cfg.schedule.seed).context("building model")?;
                    train(m, &tr, &va, &cfg.schedule)
                }
                Kind::EmbedLr => train_embed_lr(&tr, &va, vocab, &cfg.schedule),
                Kind::NgramLr => train_ngram_lr(&tr, &va, vocab, cfg.max_features, &cfg.schedule),
            }
            .context("training")?;
            for e in &model.meta.loss_curve {
                match e.val {
                    Some(v) => eprintln!("epoch {}\ttrain {:.6}\tval {:.6}", e.epoch, e.train, v),
                    None => eprintln!("epoch {}\ttrain {:.6}", e.epoch, e.train),
                }
            }
            eprintln!("kept parameters from epoch {}", model.meta.best_epoch);
            save_bundle(&model, &out).with_context(|| format!("saving {}", out.display()))?;
        }
        Command::Eval {
            model,
            input,
            partition,
            split,
            out,
            histogram_out,
        } => {
            let bundle = read_model(&model)?;
            let docs = read_docs(&input)?;
            let (docs, split) = match partition {
                Some(p) => {
                    let Ok(subset) = split.parse::<Subset>() else {
                        return usage(format!("unknown split {split:?}"));
                    };
                    let map = read_split(&p)?;
                    let d: Vec<TaggedDocument> = docs.into_iter().filter(|d| map.get(&d.id) == Some(&subset)).collect();
                    (d, subset.to_string())
                }
                None => (docs, "all".to_string()),
            };
            let report = evaluate_model(&bundle, &docs, &split).context("evaluating")?;
            match out {
                Some(p) => write_text(&p, &report.to_text())?,
                None => print!("{}", report.to_text()),
            }
            if let Some(p) = histogram_out {
                write_text(&p, &report.histogram_tsv())?;
            }
        }
        Command::Predict {
            model,
            top_k,
            threshold,
            format,
            paths,
        } => {
            if top_k == 0 {
                return usage("--top-k must be at least 1");
            }
            let bundle = read_model(&model)?;
            predict(&bundle, &paths, top_k, threshold, format)?;
        }
        Command::Bench {
            model,
            input,
            repetitions,
            limit,
            out,
        } => {
            if repetitions < 3 {
                return usage("--repetitions must be at least 3");
            }
            let bundle = read_model(&model)?;
            let mut texts: Vec<String> = read_docs(&input)?.into_iter().map(|d| d.text).collect();
            if let Some(l) = limit {
                texts.truncate(l);
            }
            let report = throughput_bench(&bundle, &texts, repetitions).context("benchmark")?;
            match out {
                Some(p) => write_text(&p, &report.to_text())?,
                None => print!("{}", report.to_text()),
            }
        }
        Command::ExportEmbedding { model, out } => {
            let bundle = read_model(&model)?;
            let p = embedding_projection_2d(&bundle).context("projecting embedding")?;
            if p.degenerate {
                eprintln!("warning: embedding rows have no variance; axes are arbitrary");
            }
            write_text(&out, &p.to_tsv())?;
        }
        Command::Sample {
            root,
            extensions,
            per_ext,
            seed,
            out,
        } => {
            if per_ext == 0 {
                return usage("--per-ext must be at least 1");
            }
            let s = sample_files(&root, &extensions, per_ext, seed)
                .with_context(|| format!("walking {}", root.display()))?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            write_jsonl(create(&out)?, &s.entries).context("writing manifest")?;
            eprintln!("sampled {} files", s.entries.len());
        }
        Command::ServeValidation(args) => serve(args)?,
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    arch: ArchConfig,
    schedule: Schedule,
    max_features: Option<usize>,
}

#[derive(Serialize)]
struct PredictRecord<'a> {
    path: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<Vec<TagCertainty<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct TagCertainty<'a> {
    tag: &'a str,
    certainty: f32,
}

/// Character count and shown predictions, or the reason the file was skipped.
type FileOutcome = std::result::Result<(usize, Vec<(String, f32)>), String>;

fn collect_files(paths: &[PathBuf]) -> Vec<std::result::Result<PathBuf, (PathBuf, String)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for e in WalkDir::new(p).follow_links(false).sort_by_file_name() {
                match e {
                    Ok(e) if e.file_type().is_file() => out.push(Ok(e.into_path())),
                    Ok(_) => {}
                    Err(err) => out.push(Err((err.path().unwrap_or(p).to_path_buf(), err.to_string()))),
                }
            }
        } else {
            out.push(Ok(p.clone()));
        }
    }
    out
}

fn predict(
    bundle: &ModelBundle,
    paths: &[PathBuf],
    top_k: usize,
    threshold: Option<f32>,
    format: Format,
) -> anyhow::Result<()> {
    let files = collect_files(paths);
    let results: Vec<(PathBuf, FileOutcome)> = files
        .into_par_iter()
        .map(|f| match f {
            Err((path, e)) => (path, Err(e)),
            Ok(path) => {
                // Only the bytes are used; the file name never reaches the model.
                let r = fs::read(&path).map_err(|e| e.to_string()).and_then(|bytes| {
                    let text = String::from_utf8_lossy(&bytes);
                    let ranked = bundle.predict_probs(&text).map_err(|e| e.to_string())?;
                    let shown = match threshold {
                        Some(t) => ranked.into_iter().filter(|(_, p)| *p >= t).collect(),
                        None => ranked.into_iter().take(top_k).collect(),
                    };
                    Ok((text.chars().count(), shown))
                });
                (path, r)
            }
        })
        .collect();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (path, r) in &results {
        match format {
            Format::Records => {
                let rec = match r {
                    Ok((len, preds)) => PredictRecord {
                        path,
                        length: Some(*len),
                        predictions: Some(
                            preds
                                .iter()
                                .map(|(t, c)| TagCertainty { tag: t, certainty: *c })
                                .collect(),
                        ),
                        error: None,
                    },
                    Err(e) => PredictRecord {
                        path,
                        length: None,
                        predictions: None,
                        error: Some(e.clone()),
                    },
                };
                write_jsonl_record(&mut out, &rec)?;
            }
            Format::Text => match r {
                Ok((len, preds)) => {
                    let mut block = format!("{} ({len} chars)\n", path.display());
                    for (t, c) in preds {
                        block.push_str(&format!("  {t}\t{c:.4}\n"));
                    }
                    out.write_all(block.as_bytes())?;
                }
                Err(e) => writeln!(out, "{}: error: {e}", path.display())?,
            },
        }
    }
    out.flush()?;
    Ok(())
}

fn read_manifest(path: &Path) -> anyhow::Result<Vec<ManifestEntry>> {
    let r: Box<dyn BufRead> = Box::new(open(path)?);
    read_jsonl(r).with_context(|| format!("invalid manifest {}", path.display()))
}

fn serve(args: ServeArgs) -> Result<()> {
    if args.top_k == 0 {
        return usage("--top-k must be at least 1");
    }
    let session = if args.session.exists() {
        ValidationSession::load(&args.session).with_context(|| format!("loading {}", args.session.display()))?
    } else {
        let (Some(model), Some(manifest)) = (&args.model, &args.manifest) else {
            return usage("a new session needs --model and --manifest");
        };
        let bundle = read_model(model)?;
        let s = create_session(&read_manifest(manifest)?, &bundle, args.top_k, args.reviewers.clone())
            .context("creating session")?;
        for w in &s.warnings {
            eprintln!("warning: {w}");
        }
        s.save(&args.session)
            .with_context(|| format!("saving {}", args.session.display()))?;
        s
    };
    let store = RatingStore::open(&args.ratings).with_context(|| format!("opening {}", args.ratings.display()))?;
    let state = Arc::new(AppState::new(session, store));
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async {
        let (addr, server) = codetag_serve::bind(args.addr, state).await?;
        eprintln!("listening on http://{addr}");
        server.await
    })
    .context("serving")?;
    Ok(())
}
