//! Corpus directory: `vocab.tsv`, `items.tsv` (token/id TAB index),
//! `item_words.bin` (ZSLI CSR), `graph.bin` (ZSLC CSR), `corpus.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorrelationGraph, IdIndex};
use crate::binfmt::{self, AtomicDir, Csr};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    version: u32,
    n_items: usize,
    n_words: usize,
    nnz: usize,
    max_neighbors: usize,
}

pub fn write_id_index(index: &IdIndex) -> String {
    let mut s = String::new();
    for (i, id) in index.ids().iter().enumerate() {
        s.push_str(id);
        s.push('\t');
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}

/// Reads a `token TAB index` file; indices must be dense and in order.
pub fn load_id_index(path: &Path) -> Result<IdIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut index = IdIndex::new();
    for (ln, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Ingest {
            source_name: path.display().to_string(),
            line: ln + 1,
            message,
        };
        let (id, idx) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("expected `id<TAB>index`".into()))?;
        let idx: usize = idx.parse().map_err(|_| bad(format!("bad index `{idx}`")))?;
        if idx != index.len() {
            return Err(bad(format!("index {idx} out of order")));
        }
        if index.get(id).is_some() {
            return Err(bad(format!("duplicate id `{id}`")));
        }
        index.intern(id);
    }
    Ok(index)
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    save_corpus_with(corpus, dir, &[])
}

/// [`save_corpus`], also writing `extra` `(file name, contents)` pairs into
/// the same directory before it is committed.
pub fn save_corpus_with(corpus: &Corpus, dir: &Path, extra: &[(&str, &[u8])]) -> Result<()> {
    let out = AtomicDir::create(dir)?;
    for (name, bytes) in extra {
        out.write(name, bytes)?;
    }
    out.write("vocab.tsv", write_id_index(&corpus.vocab).as_bytes())?;
    out.write("items.tsv", write_id_index(&corpus.items).as_bytes())?;

    let mut offsets = vec![0];
    let mut indices = Vec::new();
    for w in corpus.item_words() {
        indices.extend_from_slice(w);
        offsets.push(indices.len());
    }
    let words = Csr {
        offsets,
        indices,
        values: None,
    };
    out.write("item_words.bin", &binfmt::encode_csr(&words)?)?;

    let g = &corpus.graph;
    let graph = Csr {
        offsets: g.offsets().to_vec(),
        indices: g.neighbor_array().to_vec(),
        values: Some(g.count_array().to_vec()),
    };
    out.write("graph.bin", &binfmt::encode_csr(&graph)?)?;

    let meta = CorpusMeta {
        version: CORPUS_FORMAT_VERSION,
        n_items: corpus.n_items(),
        n_words: corpus.n_words(),
        nnz: g.nnz(),
        max_neighbors: g.max_neighbors(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    out.write("corpus.json", json.as_bytes())?;
    out.commit()
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let meta_path = dir.join("corpus.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CorpusMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    if meta.version != CORPUS_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: meta_path,
            found: meta.version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    let vocab = load_id_index(&dir.join("vocab.tsv"))?;
    let items = load_id_index(&dir.join("items.tsv"))?;

    let words = binfmt::read_csr(&dir.join("item_words.bin"))?;
    if words.offsets.len() != items.len() + 1 {
        return Err(Error::Shape("item_words.bin row count differs from items.tsv".into()));
    }
    let item_words = words
        .offsets
        .windows(2)
        .map(|w| {
            words
                .indices
                .get(w[0]..w[1])
                .map(<[u32]>::to_vec)
                .ok_or_else(|| Error::Shape("item_words.bin offsets out of range".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let g = binfmt::read_csr(&dir.join("graph.bin"))?;
    let counts = g
        .values
        .ok_or_else(|| Error::Shape("graph.bin lacks counts".into()))?;
    let graph = CorrelationGraph::from_csr(g.offsets, g.indices, counts, meta.max_neighbors)?;
    Corpus::from_parts(items, vocab, item_words, graph)
}
