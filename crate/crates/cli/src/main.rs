mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "codetag",
    version,
    about = "Character-level multilabel tagging of source code"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a post dump into length-filtered documents (one JSON object per line).
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON filter config: min_snippet_length, min_score, min_tag_count.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Corpus statistics as tab-separated tables.
    Stats {
        /// Post dump; enables the snippet-level tables.
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        dump: Option<PathBuf>,
        /// Documents from `ingest` or `filter`; document-level tables only.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Apply the score and tag-frequency filters and write the tag vocabulary.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split documents into train/val/test.
    Stratify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Iterative)]
        method: Method,
        /// Comma-separated train,val,test fractions; default is the two-stage 99/1 split.
        #[arg(long)]
        ratios: Option<String>,
        /// Per-label proportion table.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Train a model on the train split, early-stopping on the val split.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Cnn)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON with optional `arch`, `schedule` and `max_features` objects.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-tag AUC and top-1 accuracy on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Without a partition every document is evaluated.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        histogram_out: Option<PathBuf>,
    },
    /// Predict tags for files; directories are searched recursively.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Print every tag at or above this certainty instead of the top k.
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Prediction throughput in characters and source lines per second.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Documents whose text forms the benchmark corpus.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D principal-component projection of the character embedding.
    ExportEmbedding {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample files per extension from a directory for human validation.
    Sample {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = codetag::sampling::DEFAULT_EXTENSIONS.map(String::from))]
        extensions: Vec<String>,
        #[arg(long, default_value_t = codetag::sampling::DEFAULT_PER_EXTENSION)]
        per_ext: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a validation session over HTTP.
    ServeValidation(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Session file; created from the manifest and model when missing.
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = codetag::validation::DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["r1".to_string(), "r2".to_string(), "r3".to_string()])]
    reviewers: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Iterative,
    Labelset,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Cnn,
    EmbedLr,
    NgramLr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
