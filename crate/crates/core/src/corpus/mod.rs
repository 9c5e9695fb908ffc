//! Item and vocabulary indexing, per-item text features, the item-to-item
//! correlation graph and the training weights derived from it.

mod graph;
mod persist;
mod weights;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::encoder::expand_tokens;
use crate::error::{Error, Result};

pub use graph::{build_correlation_graph, CorrelationGraph, GraphOptions};
pub use persist::{load_corpus, load_id_index, save_corpus, save_corpus_with, write_id_index};
pub use weights::{compute_training_weights, EmptyWeightRule, TrainingWeights};

/// Dense `0..len` indexing of string ids, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, inserting it if new.
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: u32) -> &str {
        &self.ids[index as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdIndex {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut idx = IdIndex::new();
        for s in iter {
            idx.intern(s.as_ref());
        }
        idx
    }
}

/// One line of `items.jsonl`: a pre-tokenized item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub words: Vec<String>,
}

/// One line of `sequences.tsv`: a user's ordered consumption list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub line: usize,
    pub user: String,
    pub items: Vec<String>,
}

/// The indexed corpus: items, vocabulary, per-item word lists and the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: IdIndex,
    pub vocab: IdIndex,
    item_words: Vec<Vec<u32>>,
    pub graph: CorrelationGraph,
}

/// Counters reported by [`build_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub items_in: usize,
    pub items_kept: usize,
    pub items_below_count: usize,
    pub words_below_count: usize,
    /// Kept items whose word list is empty after thresholding.
    pub empty_items: Vec<String>,
}

impl Corpus {
    /// Assembles a corpus from parts, checking index bounds.
    pub fn from_parts(
        items: IdIndex,
        vocab: IdIndex,
        item_words: Vec<Vec<u32>>,
        graph: CorrelationGraph,
    ) -> Result<Self> {
        if item_words.len() != items.len() {
            return Err(Error::Shape(format!(
                "{} word lists for {} items",
                item_words.len(),
                items.len()
            )));
        }
        let m = vocab.len() as u32;
        if let Some(bad) = item_words.iter().flatten().find(|&&w| w >= m) {
            return Err(Error::Shape(format!("word index {bad} >= vocabulary size {m}")));
        }
        if graph.n_items() != items.len() {
            return Err(Error::Shape(format!(
                "graph has {} rows for {} items",
                graph.n_items(),
                items.len()
            )));
        }
        Ok(Corpus {
            items,
            vocab,
            item_words,
            graph,
        })
    }

    /// A corpus carrying only ids, with no text or edges. Used where only the
    /// index maps matter, e.g. the old side of a warm start.
    pub fn ids_only(items: IdIndex, vocab: IdIndex) -> Self {
        let n = items.len();
        Corpus {
            items,
            vocab,
            item_words: vec![Vec::new(); n],
            graph: CorrelationGraph::empty(n, 1),
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_words(&self) -> usize {
        self.vocab.len()
    }

    /// Word indices of item `i` in text order, duplicates preserved.
    pub fn words(&self, i: usize) -> &[u32] {
        &self.item_words[i]
    }

    pub fn item_words(&self) -> &[Vec<u32>] {
        &self.item_words
    }

    pub fn with_graph(mut self, graph: CorrelationGraph) -> Result<Self> {
        if graph.n_items() != self.n_items() {
            return Err(Error::Shape(format!(
                "graph has {} rows for {} items",
                graph.n_items(),
                self.n_items()
            )));
        }
        self.graph = graph;
        Ok(self)
    }

    /// Maps query tokens to vocabulary indices: tokens are expanded with
    /// bigrams exactly as item text is, and out-of-vocabulary terms dropped.
    /// Returns the indices and the number of dropped terms.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<u32>, usize) {
        let mut oov = 0;
        let mut out = Vec::new();
        for t in expand_tokens(tokens) {
            match self.vocab.get(&t) {
                Some(i) => out.push(i),
                None => oov += 1,
            }
        }
        (out, oov)
    }
}

/// Per-item consumption counts over all sequences.
pub fn consumption_counts(sequences: &[UserSequence]) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for s in sequences {
        for id in &s.items {
            *counts.entry(id.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Builds items and vocabulary from item text.
///
/// Items whose consumption count is below `min_item_count` are dropped (with
/// `item_counts = None` every item counts as consumed). Each item's word list
/// is its unigrams followed by its adjacent-pair bigrams joined with `_`;
/// words present in fewer than `min_word_count` kept items are removed. The
/// returned corpus has an empty graph; attach one with [`Corpus::with_graph`].
pub fn build_corpus(
    records: &[ItemRecord],
    item_counts: Option<&HashMap<String, u64>>,
    min_item_count: u64,
    min_word_count: usize,
) -> Result<(Corpus, CorpusStats)> {
    let mut stats = CorpusStats {
        items_in: records.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut kept: Vec<(&str, Vec<String>)> = Vec::new();
    for (line, rec) in records.iter().enumerate() {
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::Ingest {
                source_name: "items".into(),
                line: line + 1,
                message: format!("duplicate item id `{}`", rec.id),
            });
        }
        let count = item_counts.map_or(u64::MAX, |c| c.get(&rec.id).copied().unwrap_or(0));
        if count < min_item_count {
            stats.items_below_count += 1;
            continue;
        }
        kept.push((rec.id.as_str(), expand_tokens(&rec.words)));
    }

    // document frequency over kept items
    let mut df: HashMap<&str, usize> = HashMap::new();
    for (_, words) in &kept {
        let distinct: HashSet<&str> = words.iter().map(String::as_str).collect();
        for w in distinct {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    stats.words_below_count = df.values().filter(|&&c| c < min_word_count).count();

    let mut items = IdIndex::new();
    let mut vocab = IdIndex::new();
    let mut item_words = Vec::with_capacity(kept.len());
    for (id, words) in &kept {
        items.intern(id);
        let list: Vec<u32> = words
            .iter()
            .filter(|w| df[w.as_str()] >= min_word_count)
            .map(|w| vocab.intern(w))
            .collect();
        if list.is_empty() {
            stats.empty_items.push((*id).to_owned());
        }
        item_words.push(list);
    }
    stats.items_kept = items.len();
    let n = items.len();
    let corpus = Corpus::from_parts(items, vocab, item_words, CorrelationGraph::empty(n, 1))?;
    Ok((corpus, stats))
}

/// Resolves sequences against the corpus. Ids absent from `records` are an
/// error; ids present in `records` but dropped from the corpus split the
/// sequence, so no adjacency is recorded across them.
pub fn resolve_sequences(
    sequences: &[UserSequence],
    records: &[ItemRecord],
    corpus: &Corpus,
) -> Result<Vec<Vec<u32>>> {
    let known: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut segments = Vec::new();
    for seq in sequences {
        let mut current = Vec::new();
        for id in &seq.items {
            match corpus.items.get(id) {
                Some(i) => current.push(i),
                None if known.contains(id.as_str()) => {
                    if current.len() > 1 {
                        segments.push(std::mem::take(&mut current));
                    }
                    current.clear();
                }
                None => {
                    return Err(Error::UnknownItem {
                        id: id.clone(),
                        line: seq.line,
                    })
                }
            }
        }
        if current.len() > 1 {
            segments.push(current);
        }
    }
    Ok(segments)
}

/// One line of `graph.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdge {
    pub line: usize,
    pub seed: String,
    pub neighbor: String,
    pub count: u32,
}

/// Builds the graph directly from counted edges, keeping the top
/// `max_neighbors` per seed. Edges naming ids outside the corpus are errors.
pub fn graph_from_edges(
    edges: &[RawEdge],
    corpus: &Corpus,
    max_neighbors: usize,
) -> Result<CorrelationGraph> {
    let mut triples = Vec::with_capacity(edges.len());
    for e in edges {
        let lookup = |id: &str| {
            corpus.items.get(id).ok_or_else(|| Error::UnknownItem {
                id: id.to_owned(),
                line: e.line,
            })
        };
        triples.push((lookup(&e.seed)?, lookup(&e.neighbor)?, e.count));
    }
    CorrelationGraph::from_counted_edges(corpus.n_items(), triples, max_neighbors)
}
