//! Command-line surface. Every tunable is optional here so that values from
//! `--config` can fill what the command line leaves out.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "zsl", version, about = "Zero-shot retrieval embeddings: ingest, train, retrieve, evaluate")]
pub struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of option values; keys mirror the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a corpus directory from item text and consumption data.
    Ingest(IngestFlags),
    /// Train a model and write its directory.
    Train(TrainFlags),
    /// Answer queries with a trained model.
    Retrieve(RetrieveFlags),
    /// Compute recall metrics for a model.
    Eval(EvalFlags),
    /// Recall@K of the interleaved ensemble of two models.
    EnsembleEval(EnsembleFlags),
    /// Extend a model to a newer corpus and run a few sweeps.
    Refresh(RefreshFlags),
    /// Compare the efficient loss against exhaustive enumeration.
    LossAudit(AuditFlags),
}

#[derive(Args, Debug, Serialize)]
pub struct IngestFlags {
    /// items.jsonl: {"id": ..., "words": [...]} per line.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// sequences.tsv: user TAB comma-separated item ids.
    #[arg(long)]
    pub sequences: Option<PathBuf>,
    /// graph.tsv: seed TAB neighbor TAB count, instead of sequences.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_item_count: Option<u64>,
    #[arg(long)]
    pub min_word_count: Option<usize>,
    #[arg(long)]
    pub max_neighbors: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub symmetrize: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// stl, zsl_me, zsl_te or smc.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub use_weights: Option<bool>,
    #[arg(long)]
    pub weight_negatives: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclude_self_negative: bool,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// per_word or encoded.
    #[arg(long)]
    pub task1_mode: Option<String>,
    /// max_raw or one.
    #[arg(long)]
    pub empty_weight: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub parallel: bool,
    /// SMC only: pairs.tsv of query TAB item id.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// uniform or log_uniform.
    #[arg(long)]
    pub sampler: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct RetrieveFlags {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// dot or cosine; defaults to the model's own mode.
    #[arg(long)]
    pub score: Option<String>,
    /// A single query.
    #[arg(long)]
    pub query: Option<String>,
    /// One query per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Give each item the norm of the same item in this model, then score by
    /// dot product.
    #[arg(long)]
    pub rescale_norms_from: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalFlags {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus directory; needed for reconstruction and context CE.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma list of: reconstruction, pooled, recall_at_k, ce.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Comma list of cutoffs for recall_at_k.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub score: Option<String>,
    /// Keep the seed item among its own reconstruction candidates.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub include_seed: bool,
    #[arg(long)]
    pub rescale_norms_from: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EnsembleFlags {
    /// Model whose head is kept (e.g. SMC).
    #[arg(long)]
    pub primary: Option<PathBuf>,
    /// Model interleaved after the head (e.g. ZSL_TE).
    #[arg(long)]
    pub secondary: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<String>,
    /// Head length; defaults to half of each K.
    #[arg(long)]
    pub head_len: Option<usize>,
    #[arg(long)]
    pub primary_score: Option<String>,
    #[arg(long)]
    pub secondary_score: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RefreshFlags {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// The newer corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Allow ids missing from the new corpus to be dropped.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub prune: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct AuditFlags {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Parameters to evaluate; a fresh initialization when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the built-in two-item fixture instead of a corpus.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub fixture: bool,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub use_weights: Option<bool>,
    #[arg(long)]
    pub weight_negatives: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclude_self_negative: bool,
    #[arg(long)]
    pub task1_mode: Option<String>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}
