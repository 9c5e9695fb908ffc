//! The subcommands. Each resolves its options (flags over config file over
//! defaults), does its work, and writes artifacts atomically.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use zsl::binfmt::{write_atomic, AtomicDir};
use zsl::corpus::{
    build_corpus, build_correlation_graph, consumption_counts, graph_from_edges, load_corpus, resolve_sequences,
    save_corpus_with, CorrelationGraph, EmptyWeightRule, GraphOptions, IdIndex,
};
use zsl::encoder::{encode_bow, rescale_item_norms};
use zsl::eval::{
    context_pairs, interleave_lists, pooled_recall, query_lists, recall_of_lists, reconstruction_recall, LabeledSet,
    RecallAtK,
};
use zsl::formats::{parse_graph_tsv, parse_items_jsonl, parse_labeled_jsonl, parse_pairs_tsv, parse_sequences_tsv, tokenize};
use zsl::retrieval::retrieve_topk;
use zsl::sl::{continue_training, loss_bruteforce, train_sl_model, DenseParams, LossTrace, Objective};
use zsl::smc::{ce_loss_context, ce_loss_exact, train_smc, QueryItemPairs, Sampler, SmcConfig};
use zsl::store::{init_model_state, load_model, load_model_ids, save_model_with, warm_start_extend, Task1Mode};
use zsl::{Corpus, Matrix, ModelKind, ModelState, ScoreMode, TrainConfig};

use crate::manifest::{build as build_manifest, merge_options};
use crate::Failure;

const ENUM_KEYS: &[&str] = &[
    "model",
    "kind",
    "task1_mode",
    "empty_weight",
    "sampler",
    "score",
    "primary_score",
    "secondary_score",
];

pub fn resolve<T: DeserializeOwned>(flags: &impl Serialize, file: Option<&Value>) -> Result<T, Failure> {
    let mut merged = merge_options(serde_json::to_value(flags).expect("flags serialize"), file)?;
    // enum spellings: `zsl-te`, `ZSL_TE` and `zsl_te` all work
    if let Value::Object(map) = &mut merged {
        for key in ENUM_KEYS {
            if let Some(Value::String(s)) = map.get_mut(*key) {
                *s = s.replace('-', "_").to_lowercase();
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| Failure::Usage(format!("invalid options: {e}")))
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    v.as_deref().ok_or_else(|| Failure::Usage(format!("missing required --{flag}")))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

fn parse_k_list(s: &str) -> Result<Vec<usize>, Failure> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("bad K list `{s}`")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::Usage("K values must be >= 1".into()));
    }
    Ok(ks)
}

fn to_json(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

// ---- ingest ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestJob {
    pub items: Option<PathBuf>,
    pub sequences: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub min_item_count: u64,
    pub min_word_count: usize,
    pub max_neighbors: usize,
    pub window: usize,
    pub symmetrize: bool,
}

impl Default for IngestJob {
    fn default() -> Self {
        let g = GraphOptions::default();
        IngestJob {
            items: None,
            sequences: None,
            graph: None,
            out: None,
            min_item_count: 0,
            min_word_count: 1,
            max_neighbors: g.max_neighbors,
            window: g.window,
            symmetrize: g.symmetrize,
        }
    }
}

pub fn ingest(job: IngestJob) -> Result<(), Failure> {
    let items_path = required(&job.items, "items")?;
    let out = required(&job.out, "out")?;
    if job.sequences.is_some() && job.graph.is_some() {
        return Err(Failure::Usage("give --sequences or --graph, not both".into()));
    }
    let records = parse_items_jsonl(open(items_path)?, &source_name(items_path))?;
    let sequences = match &job.sequences {
        Some(p) => Some(parse_sequences_tsv(open(p)?, &source_name(p))?),
        None => None,
    };
    let counts = sequences.as_deref().map(consumption_counts);
    let (corpus, stats) = build_corpus(&records, counts.as_ref(), job.min_item_count, job.min_word_count)?;
    let n = corpus.n_items();
    let graph = if let Some(seqs) = &sequences {
        let resolved = resolve_sequences(seqs, &records, &corpus)?;
        let opts = GraphOptions {
            max_neighbors: job.max_neighbors,
            window: job.window,
            symmetrize: job.symmetrize,
        };
        build_correlation_graph(&resolved, n, &opts)?
    } else if let Some(p) = &job.graph {
        let edges = parse_graph_tsv(open(p)?, &source_name(p))?;
        graph_from_edges(&edges, &corpus, job.max_neighbors)?
    } else {
        log::warn!("no --sequences or --graph: the corpus has no edges");
        CorrelationGraph::empty(n, job.max_neighbors.max(1))
    };
    let corpus = corpus.with_graph(graph)?;

    let mut inputs: Vec<&Path> = vec![items_path];
    inputs.extend(job.sequences.as_deref());
    inputs.extend(job.graph.as_deref());
    let manifest = build_manifest("ingest", &job, &inputs)?;
    let stats_json = to_json(&stats);
    save_corpus_with(
        &corpus,
        out,
        &[("manifest.json", &manifest), ("ingest_stats.json", &stats_json)],
    )?;
    println!(
        "items {} (of {}), words {}, edges {}, items without words {}",
        corpus.n_items(),
        stats.items_in,
        corpus.n_words(),
        corpus.graph.nnz(),
        stats.empty_items.len()
    );
    Ok(())
}

// ---- train ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainJob {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelKind,
    pub dim: usize,
    pub omega0: f64,
    pub lambda: f64,
    pub sweeps: usize,
    pub use_weights: bool,
    pub weight_negatives: bool,
    pub exclude_self_negative: bool,
    pub init_std: f64,
    pub seed: u64,
    pub task1_mode: Task1Mode,
    pub empty_weight: EmptyWeightRule,
    pub parallel: bool,
    pub pairs: Option<PathBuf>,
    pub negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub sampler: Sampler,
}

impl Default for TrainJob {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SmcConfig::default();
        TrainJob {
            corpus: None,
            out: None,
            model: t.kind,
            dim: t.dim,
            omega0: t.omega0,
            lambda: t.lambda,
            sweeps: t.sweeps,
            use_weights: t.use_weights,
            weight_negatives: t.weight_negatives,
            exclude_self_negative: t.exclude_self_negative,
            init_std: t.init_std,
            seed: t.seed,
            task1_mode: t.task1_mode,
            empty_weight: t.empty_weight,
            parallel: t.parallel,
            pairs: None,
            negatives: s.negatives,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            steps: s.steps,
            sampler: s.sampler,
        }
    }
}

impl TrainJob {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.model,
            dim: self.dim,
            omega0: self.omega0,
            lambda: self.lambda,
            sweeps: self.sweeps,
            use_weights: self.use_weights,
            weight_negatives: self.weight_negatives,
            exclude_self_negative: self.exclude_self_negative,
            init_std: self.init_std,
            seed: self.seed,
            task1_mode: self.task1_mode,
            empty_weight: self.empty_weight,
            parallel: self.parallel,
        }
    }

    fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            dim: self.dim,
            negatives: self.negatives,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
            init_std: self.init_std,
            sampler: self.sampler,
        }
    }
}

fn load_pairs(path: &Path, corpus: &Corpus) -> Result<(QueryItemPairs, usize), Failure> {
    let raw = parse_pairs_tsv(open(path)?, &source_name(path))?;
    Ok(QueryItemPairs::from_raw(&raw, corpus)?)
}

pub fn train(job: TrainJob) -> Result<(), Failure> {
    let corpus_dir = required(&job.corpus, "corpus")?;
    let out = required(&job.out, "out")?;
    let corpus = load_corpus(corpus_dir)?;
    let mut inputs = vec![corpus_dir];
    if job.model == ModelKind::Smc {
        let pairs_path = required(&job.pairs, "pairs")?;
        inputs.push(pairs_path);
        let (pairs, dropped) = load_pairs(pairs_path, &corpus)?;
        if dropped > 0 {
            log::warn!("{dropped} pairs have no in-vocabulary query term and were dropped");
        }
        let state = train_smc(&pairs, &corpus, &job.smc_config())?;
        let manifest = build_manifest("train", &job, &inputs)?;
        save_model_with(&state, &corpus, out, &[("manifest.json", &manifest)])?;
        let ce = if corpus.n_items() <= zsl::smc::EXACT_CE_MAX_ITEMS {
            format!("{:.6}", ce_loss_exact(&state, &pairs)?)
        } else {
            "n/a".into()
        };
        println!("smc: {} steps over {} pairs, training cross-entropy {ce}", job.steps, pairs.len());
    } else {
        if job.pairs.is_some() {
            log::warn!("--pairs is ignored for square-loss models");
        }
        let config = job.train_config();
        let (state, trace) = train_sl_model(&corpus, &config)?;
        let manifest = build_manifest("train", &job, &inputs)?;
        let csv = trace.to_csv();
        save_model_with(
            &state,
            &corpus,
            out,
            &[("manifest.json", &manifest), ("loss_trace.csv", csv.as_bytes())],
        )?;
        let totals = trace.totals();
        println!(
            "{}: {} sweeps, loss {:.6} -> {:.6}",
            job.model,
            config.sweeps,
            totals[0],
            totals[totals.len() - 1]
        );
    }
    Ok(())
}

// ---- retrieve ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveJob {
    pub model: Option<PathBuf>,
    pub k: Option<usize>,
    pub score: Option<ScoreMode>,
    pub query: Option<String>,
    pub queries: Option<PathBuf>,
    pub rescale_norms_from: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Default list length for `retrieve`.
pub const DEFAULT_K: usize = 100;

/// Loads a model with its ids, applying norm rescaling when requested.
/// Returns the state (items possibly rescaled), the ids, and the score mode
/// to use.
fn load_serving_model(
    dir: &Path,
    rescale_from: Option<&Path>,
    score: Option<ScoreMode>,
) -> Result<(ModelState, Corpus, ScoreMode), Failure> {
    let mut state = load_model(dir)?;
    let ids = load_model_ids(dir)?;
    let mut mode = state.score_mode;
    if let Some(src) = rescale_from {
        let other = load_model(src)?;
        let other_ids = load_model_ids(src)?;
        if other_ids.items.ids() != ids.items.ids() {
            return Err(Failure::Data(format!(
                "{} and {} do not index the same items",
                dir.display(),
                src.display()
            )));
        }
        let r = rescale_item_norms(&state.items, &other.items)?;
        if !r.skipped.is_empty() {
            log::warn!("{} zero-norm items kept as they were", r.skipped.len());
        }
        state.items = r.items;
        mode = ScoreMode::Dot;
    }
    Ok((state, ids, score.unwrap_or(mode)))
}

pub fn retrieve(job: RetrieveJob) -> Result<(), Failure> {
    let dir = required(&job.model, "model")?;
    let k = job.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let (batch, queries): (bool, Vec<String>) = match (&job.query, &job.queries) {
        (Some(q), None) => (false, vec![q.clone()]),
        (None, Some(p)) => {
            let lines: Vec<String> = open(p)?
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::io(p, e))?;
            (true, lines.into_iter().filter(|l| !l.trim().is_empty()).collect())
        }
        _ => return Err(Failure::Usage("give exactly one of --query or --queries".into())),
    };
    let (state, ids, mode) = load_serving_model(dir, job.rescale_norms_from.as_deref(), job.score)?;

    let mut text = String::new();
    let mut unanswered: Option<String> = None;
    for q in &queries {
        if batch {
            text.push_str(&format!("# query: {q}\n"));
        }
        let (words, oov) = ids.encode_tokens(&tokenize(q));
        if oov > 0 {
            log::debug!("{oov} unknown terms in `{q}`");
        }
        let list = match encode_bow(&words, &state.words) {
            Ok(v) => match retrieve_topk(&v.values, &state.items, k, mode, None) {
                Ok(l) => Ok(l),
                Err(zsl::Error::ZeroNorm) => Err("encodes to a zero vector; try --score dot"),
                Err(e) => return Err(e.into()),
            },
            Err(zsl::Error::EmptyQuery) => Err("has no known terms"),
            Err(e) => return Err(e.into()),
        };
        match list {
            Ok(l) => {
                for (rank, e) in l.entries.iter().enumerate() {
                    text.push_str(&format!("{}\t{}\t{:.6}\n", rank + 1, ids.items.id(e.item), e.score));
                }
            }
            Err(why) => {
                log::warn!("query `{q}` {why}");
                unanswered = Some(format!("query `{q}` {why}"));
            }
        }
    }
    if let (Some(msg), false) = (unanswered, batch) {
        return Err(Failure::Data(msg));
    }
    match &job.out {
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            let mut inputs = vec![dir];
            inputs.extend(job.rescale_norms_from.as_deref());
            inputs.extend(job.queries.as_deref());
            let manifest = build_manifest("retrieve", &job, &inputs)?;
            let mut mpath = out.as_os_str().to_owned();
            mpath.push(".manifest.json");
            write_atomic(Path::new(&mpath), &manifest)?;
        }
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

// ---- eval ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalJob {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub metrics: Option<String>,
    pub pairs: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub k: Option<String>,
    pub score: Option<ScoreMode>,
    pub include_seed: bool,
    pub rescale_norms_from: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

const DEFAULT_KS: &str = "10,100";

fn recall_json(r: &RecallAtK) -> Value {
    json!({
        "k": r.k,
        "recall": r.recall,
        "hits": r.hits,
        "total": r.total,
        "excluded": r.excluded,
        "by_length": r.by_length.iter().map(|b| json!({
            "length": b.label, "hits": b.hits, "total": b.total, "recall": b.recall(),
        })).collect::<Vec<_>>(),
    })
}

fn recall_csv(csv: &mut String, metric: &str, r: &RecallAtK) {
    csv.push_str(&format!("{metric}@{},all,{}\n", r.k, r.recall));
    for b in &r.by_length {
        csv.push_str(&format!("{metric}@{},len={},{}\n", r.k, b.label, b.recall()));
    }
}

fn same_items(a: &IdIndex, b: &IdIndex, what: &str) -> Result<(), Failure> {
    if a.ids() != b.ids() {
        return Err(Failure::Data(format!("{what} do not index the same items")));
    }
    Ok(())
}

fn write_report(out: Option<&Path>, report: &Value, csv: &str, manifest: Vec<u8>) -> Result<(), Failure> {
    match out {
        Some(out) => {
            let dir = AtomicDir::create(out)?;
            dir.write("report.json", &to_json(report))?;
            dir.write("report.csv", csv.as_bytes())?;
            dir.write("manifest.json", &manifest)?;
            dir.commit()?;
        }
        None => println!("{}", serde_json::to_string_pretty(report).expect("report serializes")),
    }
    Ok(())
}

pub fn eval(job: EvalJob) -> Result<(), Failure> {
    let dir = required(&job.model, "model")?;
    let (state, ids, mode) = load_serving_model(dir, job.rescale_norms_from.as_deref(), job.score)?;
    let metrics: Vec<String> = match &job.metrics {
        Some(m) => m.split(',').map(|s| s.trim().to_owned()).collect(),
        None => {
            let mut m = Vec::new();
            if job.corpus.is_some() {
                m.push("reconstruction".to_owned());
            }
            if job.labeled.is_some() {
                m.push("pooled".to_owned());
            }
            if job.pairs.is_some() {
                m.push("recall_at_k".to_owned());
            }
            m
        }
    };
    if metrics.is_empty() {
        return Err(Failure::Usage("nothing to evaluate: give --corpus, --labeled or --pairs".into()));
    }
    let ks = parse_k_list(job.k.as_deref().unwrap_or(DEFAULT_KS))?;
    let corpus = match &job.corpus {
        Some(p) => {
            let c = load_corpus(p)?;
            same_items(&c.items, &ids.items, "model and corpus")?;
            Some(c)
        }
        None => None,
    };
    let pairs = match &job.pairs {
        Some(p) => Some(QueryItemPairs::resolve_all(&parse_pairs_tsv(open(p)?, &source_name(p))?, &ids)?),
        None => None,
    };

    let mut report = serde_json::Map::new();
    report.insert("model".into(), json!(state.kind));
    report.insert("score".into(), json!(mode));
    let mut csv = String::from("metric,split,value\n");
    for metric in &metrics {
        match metric.as_str() {
            "reconstruction" => {
                let c = corpus
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("reconstruction needs --corpus".into()))?;
                let r = reconstruction_recall(&state, &c.graph, mode, !job.include_seed)?;
                csv.push_str(&format!("reconstruction,all,{}\n", r.mean));
                report.insert(
                    "reconstruction".into(),
                    json!({"mean": r.mean, "scored": r.per_entry.len(), "skipped": r.skipped}),
                );
            }
            "pooled" => {
                let p = job
                    .labeled
                    .as_deref()
                    .ok_or_else(|| Failure::Usage("pooled needs --labeled".into()))?;
                let raw = parse_labeled_jsonl(open(p)?, &source_name(p))?;
                let mut sets = Vec::new();
                for set in LabeledSet::from_raw(&raw, &ids)? {
                    let r = pooled_recall(&state, &set, mode)?;
                    csv.push_str(&format!("pooled,{},{}\n", set.name, r.mean));
                    sets.push(json!({
                        "set": set.name,
                        "queries": set.queries.len(),
                        "scored": r.per_entry.len(),
                        "skipped": r.skipped,
                        "pool": set.pool().len(),
                        "overlap_ratio": set.overlap_ratio(),
                        "mean": r.mean,
                    }));
                }
                report.insert("pooled".into(), Value::Array(sets));
            }
            "recall_at_k" => {
                let pairs = pairs
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("recall_at_k needs --pairs".into()))?;
                let kmax = *ks.iter().max().unwrap();
                let lists = query_lists(&state.words, &state.items, pairs, kmax, mode)?;
                let mut rows = Vec::new();
                for &k in &ks {
                    let r = recall_of_lists(&lists, pairs, k)?;
                    recall_csv(&mut csv, "recall_at_k", &r);
                    rows.push(recall_json(&r));
                }
                report.insert("recall_at_k".into(), Value::Array(rows));
            }
            "ce" => {
                let mut ce = serde_json::Map::new();
                if let Some(pairs) = &pairs {
                    let usable = QueryItemPairs {
                        records: pairs.records.iter().filter(|r| !r.words.is_empty()).cloned().collect(),
                    };
                    let v = ce_loss_exact(&state, &usable)?;
                    csv.push_str(&format!("ce,query,{v}\n"));
                    ce.insert("query".into(), json!(v));
                }
                if let (Some(c), true) = (&corpus, matches!(state.kind, ModelKind::ZslMe | ModelKind::ZslTe)) {
                    let v = ce_loss_context(&state, c, &context_pairs(&c.graph))?;
                    csv.push_str(&format!("ce,context,{v}\n"));
                    ce.insert("context".into(), json!(v));
                }
                if ce.is_empty() {
                    return Err(Failure::Usage("ce needs --pairs, or --corpus with a zero-shot model".into()));
                }
                report.insert("ce".into(), Value::Object(ce));
            }
            other => return Err(Failure::Usage(format!("unknown metric `{other}`"))),
        }
    }
    let mut inputs = vec![dir];
    inputs.extend(job.corpus.as_deref());
    inputs.extend(job.pairs.as_deref());
    inputs.extend(job.labeled.as_deref());
    inputs.extend(job.rescale_norms_from.as_deref());
    let manifest = build_manifest("eval", &job, &inputs)?;
    write_report(job.out.as_deref(), &Value::Object(report), &csv, manifest)
}

// ---- ensemble-eval ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleJob {
    pub primary: Option<PathBuf>,
    pub secondary: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub k: Option<String>,
    pub head_len: Option<usize>,
    pub primary_score: Option<ScoreMode>,
    pub secondary_score: Option<ScoreMode>,
    pub out: Option<PathBuf>,
}

pub fn ensemble_eval(job: EnsembleJob) -> Result<(), Failure> {
    let pdir = required(&job.primary, "primary")?;
    let sdir = required(&job.secondary, "secondary")?;
    let pairs_path = required(&job.pairs, "pairs")?;
    let (a, a_ids, a_mode) = load_serving_model(pdir, None, job.primary_score)?;
    let (b, b_ids, b_mode) = load_serving_model(sdir, None, job.secondary_score)?;
    same_items(&a_ids.items, &b_ids.items, "the two models")?;
    let raw = parse_pairs_tsv(open(pairs_path)?, &source_name(pairs_path))?;
    let a_pairs = QueryItemPairs::resolve_all(&raw, &a_ids)?;
    let b_pairs = QueryItemPairs::resolve_all(&raw, &b_ids)?;
    let ks = parse_k_list(job.k.as_deref().unwrap_or(DEFAULT_KS))?;
    let kmax = *ks.iter().max().unwrap();
    let a_lists = query_lists(&a.words, &a.items, &a_pairs, kmax, a_mode)?;
    let b_lists = query_lists(&b.words, &b.items, &b_pairs, kmax, b_mode)?;

    let mut rows = Vec::new();
    let mut csv = String::from("metric,split,value\n");
    for &k in &ks {
        let head = job.head_len.unwrap_or(k / 2);
        let merged = interleave_lists(&a_lists, &b_lists, head, k);
        let ra = recall_of_lists(&a_lists, &a_pairs, k)?;
        let rb = recall_of_lists(&b_lists, &b_pairs, k)?;
        let re = recall_of_lists(&merged, &a_pairs, k)?;
        recall_csv(&mut csv, "primary", &ra);
        recall_csv(&mut csv, "secondary", &rb);
        recall_csv(&mut csv, "ensemble", &re);
        rows.push(json!({
            "k": k,
            "head_len": head,
            "primary": recall_json(&ra),
            "secondary": recall_json(&rb),
            "ensemble": recall_json(&re),
        }));
    }
    let report = json!({
        "primary": {"model": a.kind, "score": a_mode},
        "secondary": {"model": b.kind, "score": b_mode},
        "results": rows,
    });
    let manifest = build_manifest("ensemble-eval", &job, &[pdir, sdir, pairs_path])?;
    write_report(job.out.as_deref(), &report, &csv, manifest)
}

// ---- refresh ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefreshJob {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sweeps: usize,
    pub prune: bool,
}

impl Default for RefreshJob {
    fn default() -> Self {
        RefreshJob {
            model: None,
            corpus: None,
            out: None,
            sweeps: 2,
            prune: false,
        }
    }
}

pub fn refresh(job: RefreshJob) -> Result<(), Failure> {
    let dir = required(&job.model, "model")?;
    let corpus_dir = required(&job.corpus, "corpus")?;
    let out = required(&job.out, "out")?;
    let state = load_model(dir)?;
    let config = match (&state.train_config, state.kind) {
        (Some(c), k) if k != ModelKind::Smc => c.clone(),
        _ => {
            return Err(Failure::Usage(
                "refresh applies to square-loss models with a stored training config".into(),
            ))
        }
    };
    let old = load_model_ids(dir)?;
    let corpus = load_corpus(corpus_dir)?;
    let mut ext = warm_start_extend(&state, &old, &corpus, job.prune)?;
    let mut trace = LossTrace::default();
    continue_training(&mut ext, &corpus, &config, job.sweeps, &mut trace)?;
    let manifest = build_manifest("refresh", &job, &[dir, corpus_dir])?;
    let csv = trace.to_csv();
    save_model_with(
        &ext,
        &corpus,
        out,
        &[("manifest.json", &manifest), ("loss_trace.csv", csv.as_bytes())],
    )?;
    let totals = trace.totals();
    println!(
        "refreshed {} -> {} items, {} -> {} words; loss {:.6} -> {:.6}",
        old.n_items(),
        corpus.n_items(),
        old.n_words(),
        corpus.n_words(),
        totals[0],
        totals[totals.len() - 1]
    );
    Ok(())
}

// ---- loss-audit ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditJob {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub fixture: bool,
    pub kind: ModelKind,
    pub dim: usize,
    pub omega0: f64,
    pub lambda: f64,
    pub use_weights: bool,
    pub weight_negatives: bool,
    pub exclude_self_negative: bool,
    pub task1_mode: Task1Mode,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for AuditJob {
    fn default() -> Self {
        let t = TrainConfig::default();
        AuditJob {
            corpus: None,
            model: None,
            fixture: false,
            kind: t.kind,
            dim: 8,
            omega0: t.omega0,
            lambda: t.lambda,
            use_weights: t.use_weights,
            weight_negatives: t.weight_negatives,
            exclude_self_negative: t.exclude_self_negative,
            task1_mode: t.task1_mode,
            init_std: t.init_std,
            seed: t.seed,
        }
    }
}

/// Relative gap above which `loss-audit` reports a numeric failure.
const AUDIT_TOLERANCE: f64 = 1e-8;

/// Two items, one edge, d = 1: `v = (1, 2)`, `u = (3, 4)`, omega0 = 0.1,
/// no regularization or weights. Its loss is 19.9.
fn audit_fixture() -> Result<(Corpus, TrainConfig, DenseParams), Failure> {
    let items: IdIndex = ["a", "b"].iter().collect();
    let graph = CorrelationGraph::from_counted_edges(2, vec![(0, 1, 1)], 250)?;
    let corpus = Corpus::from_parts(items, IdIndex::new(), vec![vec![], vec![]], graph)?;
    let config = TrainConfig {
        kind: ModelKind::ZslMe,
        dim: 1,
        omega0: 0.1,
        lambda: 0.0,
        use_weights: false,
        ..TrainConfig::default()
    };
    let params = DenseParams {
        words: Matrix::zeros(0, 1),
        items: Matrix::from_vec(2, 1, vec![1.0, 2.0]),
        context: Some(Matrix::from_vec(2, 1, vec![3.0, 4.0])),
    };
    Ok((corpus, config, params))
}

pub fn loss_audit(job: AuditJob) -> Result<(), Failure> {
    let (corpus, config, params) = if job.fixture {
        audit_fixture()?
    } else {
        let corpus = load_corpus(required(&job.corpus, "corpus")?)?;
        let mut config = TrainConfig {
            kind: job.kind,
            dim: job.dim,
            omega0: job.omega0,
            lambda: job.lambda,
            use_weights: job.use_weights,
            weight_negatives: job.weight_negatives,
            exclude_self_negative: job.exclude_self_negative,
            task1_mode: job.task1_mode,
            init_std: job.init_std,
            seed: job.seed,
            ..TrainConfig::default()
        };
        let state = match &job.model {
            Some(dir) => {
                let s = load_model(dir)?;
                same_items(&load_model_ids(dir)?.items, &corpus.items, "model and corpus")?;
                config.kind = s.kind;
                config.dim = s.dim;
                s
            }
            None => init_model_state(&config, &corpus)?,
        };
        (corpus, config, DenseParams::from_state(&state))
    };
    let brute = loss_bruteforce(&corpus, &config, &params)?.total();
    let fast = Objective::new(&corpus, &config)?.loss(&params)?.total();
    let gap = (brute - fast).abs();
    let rel = gap / brute.abs().max(1.0);
    println!("bruteforce\t{brute}");
    println!("efficient\t{fast}");
    println!("abs_diff\t{gap:e}");
    println!("rel_diff\t{rel:e}");
    if rel > AUDIT_TOLERANCE {
        return Err(Failure::Numeric(format!(
            "losses differ by {rel:e} relative (tolerance {AUDIT_TOLERANCE:e})"
        )));
    }
    Ok(())
}

pub fn read_config(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}
