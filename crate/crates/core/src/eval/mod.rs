//! Offline recall metrics and the synthetic transfer corpus.

mod synthetic;

pub use synthetic::{make_synthetic_transfer_corpus, SyntheticCorpus, SyntheticSpec};

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CorrelationGraph, Corpus};
use crate::encoder::{encode_bow, ScoreMode};
use crate::error::{Error, Result};
use crate::formats::{tokenize, RawLabeled};
use crate::matrix::Matrix;
use crate::retrieval::{ensemble_interleave, retrieve_among, retrieve_topk, RankedList};
use crate::smc::QueryItemPairs;
use crate::store::ModelState;

/// Per-entry recalls and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    /// `(item or query index, recall)` for every scored entry.
    pub per_entry: Vec<(u32, f64)>,
    pub mean: f64,
    /// Entries left out: items without neighbors, or queries with no
    /// in-vocabulary term.
    pub skipped: usize,
}

impl RecallReport {
    fn from_parts(per_entry: Vec<(u32, f64)>, skipped: usize) -> Self {
        let mean = if per_entry.is_empty() {
            0.0
        } else {
            per_entry.iter().map(|e| e.1).sum::<f64>() / per_entry.len() as f64
        };
        RecallReport {
            per_entry,
            mean,
            skipped,
        }
    }
}

fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&x| x as f64).collect()
}

/// For each item with neighbors, retrieves the top-`k_i` items by
/// `score(v_i, v_l)` and reports the fraction of `Ne(i)` recovered. The seed
/// item is left out of its own candidates when `exclude_seed` is set. A seed
/// whose vector has no direction under cosine scores 0.
pub fn reconstruction_recall(
    state: &ModelState,
    graph: &CorrelationGraph,
    mode: ScoreMode,
    exclude_seed: bool,
) -> Result<RecallReport> {
    let n = state.n_items();
    if graph.n_items() != n {
        return Err(Error::Shape(format!("graph over {} items, model over {n}", graph.n_items())));
    }
    let scored: Vec<Option<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let truth = graph.neighbors(i);
            if truth.is_empty() {
                return Ok(None);
            }
            let q = to_f64(state.items.row(i));
            let cands = (0..n as u32).filter(|&l| !(exclude_seed && l as usize == i));
            let hits = match retrieve_among(&q, &state.items, cands, truth.len(), mode) {
                Ok(list) => list.items().filter(|l| truth.binary_search(l).is_ok()).count(),
                Err(Error::ZeroNorm) => 0,
                Err(e) => return Err(e),
            };
            Ok(Some((i as u32, hits as f64 / truth.len() as f64)))
        })
        .collect::<Result<_>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    Ok(RecallReport::from_parts(scored.into_iter().flatten().collect(), skipped))
}

/// One labeled query.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    /// Encoded terms; empty when nothing survived the OOV drop.
    pub words: Vec<u32>,
    /// Relevant items, sorted and distinct.
    pub relevant: Vec<u32>,
}

/// A named group of labeled queries; its pool is the union of their
/// relevant sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub name: String,
    pub queries: Vec<LabeledQuery>,
}

impl LabeledSet {
    pub fn pool(&self) -> Vec<u32> {
        let s: BTreeSet<u32> = self.queries.iter().flat_map(|q| q.relevant.iter().copied()).collect();
        s.into_iter().collect()
    }

    /// `sum |S_i| / |S|`; above 1 when relevant sets overlap.
    pub fn overlap_ratio(&self) -> f64 {
        let pool = self.pool().len();
        if pool == 0 {
            return 0.0;
        }
        self.queries.iter().map(|q| q.relevant.len()).sum::<usize>() as f64 / pool as f64
    }

    /// Groups raw lines by set name, in order of first appearance.
    pub fn from_raw(raw: &[RawLabeled], corpus: &Corpus) -> Result<Vec<LabeledSet>> {
        let mut sets: Vec<LabeledSet> = Vec::new();
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for r in raw {
            let mut relevant = Vec::with_capacity(r.relevant.len());
            for id in &r.relevant {
                relevant.push(corpus.items.get(id).ok_or_else(|| Error::UnknownItem {
                    id: id.clone(),
                    line: r.line,
                })?);
            }
            relevant.sort_unstable();
            relevant.dedup();
            if relevant.is_empty() {
                return Err(Error::Ingest {
                    source_name: "labeled sets".into(),
                    line: r.line,
                    message: "empty relevant list".into(),
                });
            }
            let tokens: Vec<String> = r.query.iter().flat_map(|t| tokenize(t)).collect();
            let (words, _) = corpus.encode_tokens(&tokens);
            let idx = *by_name.entry(r.set.as_str()).or_insert_with(|| {
                sets.push(LabeledSet {
                    name: r.set.clone(),
                    queries: Vec::new(),
                });
                sets.len() - 1
            });
            sets[idx].queries.push(LabeledQuery { words, relevant });
        }
        Ok(sets)
    }
}

/// For each query, retrieves its `|S_i|` best items from the pool only and
/// reports `|S_i ∩ Z_i| / |S_i|`. Queries without terms are skipped.
pub fn pooled_recall(state: &ModelState, set: &LabeledSet, mode: ScoreMode) -> Result<RecallReport> {
    let pool = set.pool();
    let scored: Vec<Option<(u32, f64)>> = set
        .queries
        .par_iter()
        .enumerate()
        .map(|(qi, query)| {
            if query.words.is_empty() {
                return Ok(None);
            }
            let q = encode_bow(&query.words, &state.words)?;
            let k = query.relevant.len();
            let hits = match retrieve_among(&q.values, &state.items, pool.iter().copied(), k, mode) {
                Ok(list) => list.items().filter(|l| query.relevant.binary_search(l).is_ok()).count(),
                Err(Error::ZeroNorm) => 0,
                Err(e) => return Err(e),
            };
            Ok(Some((qi as u32, hits as f64 / k as f64)))
        })
        .collect::<Result<_>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    Ok(RecallReport::from_parts(scored.into_iter().flatten().collect(), skipped))
}

/// Hits and totals for one query-length bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucket {
    pub label: String,
    pub hits: usize,
    pub total: usize,
}

impl LengthBucket {
    pub fn recall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallAtK {
    pub k: usize,
    pub hits: usize,
    /// Pairs scored.
    pub total: usize,
    /// Pairs whose query could not be encoded or scored.
    pub excluded: usize,
    pub recall: f64,
    /// Unigram query lengths 1, 2, 3, 4 and 5+.
    pub by_length: Vec<LengthBucket>,
}

pub const LENGTH_BUCKETS: [&str; 5] = ["1", "2", "3", "4", "5+"];

fn bucket_of(len: usize) -> usize {
    len.clamp(1, 5) - 1
}

/// Top-`k` list for every pair's query, `None` where the query cannot be
/// scored.
pub fn query_lists(
    words: &Matrix<f32>,
    items: &Matrix<f32>,
    pairs: &QueryItemPairs,
    k: usize,
    mode: ScoreMode,
) -> Result<Vec<Option<RankedList>>> {
    pairs
        .records
        .par_iter()
        .map(|r| {
            let q = match encode_bow(&r.words, words) {
                Ok(q) => q,
                Err(Error::EmptyQuery) => return Ok(None),
                Err(e) => return Err(e),
            };
            match retrieve_topk(&q.values, items, k, mode, None) {
                Ok(l) => Ok(Some(l)),
                Err(Error::ZeroNorm) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Recall@`k` of precomputed lists (one per pair, in pair order); only the
/// first `k` entries of each list count.
pub fn recall_of_lists(lists: &[Option<RankedList>], pairs: &QueryItemPairs, k: usize) -> Result<RecallAtK> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if lists.len() != pairs.len() {
        return Err(Error::Shape(format!("{} lists for {} pairs", lists.len(), pairs.len())));
    }
    let mut by_length: Vec<LengthBucket> = LENGTH_BUCKETS
        .iter()
        .map(|l| LengthBucket {
            label: (*l).into(),
            hits: 0,
            total: 0,
        })
        .collect();
    let (mut hits, mut total, mut excluded) = (0, 0, 0);
    for (list, r) in lists.iter().zip(&pairs.records) {
        let Some(list) = list else {
            excluded += 1;
            continue;
        };
        let hit = list.entries.iter().take(k).any(|e| e.item == r.target);
        let b = &mut by_length[bucket_of(r.unigram_len)];
        b.total += 1;
        total += 1;
        if hit {
            b.hits += 1;
            hits += 1;
        }
    }
    Ok(RecallAtK {
        k,
        hits,
        total,
        excluded,
        recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        by_length,
    })
}

/// Fraction of pairs whose target is among the top `k` items for the query.
pub fn recall_at_k(state: &ModelState, pairs: &QueryItemPairs, k: usize, mode: ScoreMode) -> Result<RecallAtK> {
    recall_at_k_items(&state.words, &state.items, pairs, k, mode)
}

/// [`recall_at_k`] with an explicit item matrix, e.g. rescaled item vectors.
pub fn recall_at_k_items(
    words: &Matrix<f32>,
    items: &Matrix<f32>,
    pairs: &QueryItemPairs,
    k: usize,
    mode: ScoreMode,
) -> Result<RecallAtK> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let lists = query_lists(words, items, pairs, k, mode)?;
    recall_of_lists(&lists, pairs, k)
}

/// Recall@`k` of the interleaved ensemble: `head_len` entries from
/// `primary`, then alternation starting with `secondary`.
pub fn ensemble_recall_at_k(
    primary: (&ModelState, ScoreMode),
    secondary: (&ModelState, ScoreMode),
    pairs: &QueryItemPairs,
    k: usize,
    head_len: usize,
) -> Result<RecallAtK> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let a = query_lists(&primary.0.words, &primary.0.items, pairs, k, primary.1)?;
    let b = query_lists(&secondary.0.words, &secondary.0.items, pairs, k, secondary.1)?;
    recall_of_lists(&interleave_lists(&a, &b, head_len, k), pairs, k)
}

/// Pairwise [`ensemble_interleave`] of two aligned list sets, each result cut
/// to `k`. Where only one side has a list, that list is used alone.
pub fn interleave_lists(
    primary: &[Option<RankedList>],
    secondary: &[Option<RankedList>],
    head_len: usize,
    k: usize,
) -> Vec<Option<RankedList>> {
    primary
        .iter()
        .zip(secondary)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(ensemble_interleave(a, b, head_len, None).truncated(k)),
            (Some(x), None) | (None, Some(x)) => Some(x.truncated(k)),
            (None, None) => None,
        })
        .collect()
}

/// Pairs `(j, i)` for every edge `i -> j`: context item first, target second.
pub fn context_pairs(graph: &CorrelationGraph) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(graph.nnz());
    for i in 0..graph.n_items() {
        out.extend(graph.neighbors(i).iter().map(|&j| (j, i as u32)));
    }
    out
}

