//! Line-oriented input formats: `items.jsonl`, `sequences.tsv`, `graph.tsv`,
//! `pairs.tsv` and `labeled_sets.jsonl`.

use std::io::BufRead;

use serde::Deserialize;

use crate::corpus::{ItemRecord, RawEdge, UserSequence};
use crate::error::{Error, Result};

fn lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::Ingest {
            source_name: source.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })),
    })
}

fn ingest_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Ingest {
        source_name: source.to_owned(),
        line,
        message: message.into(),
    }
}

/// Whitespace tokenization used for free-text queries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

pub fn parse_items_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Vec<ItemRecord>> {
    lines(reader, source)
        .map(|r| {
            let (ln, line) = r?;
            serde_json::from_str::<ItemRecord>(&line).map_err(|e| ingest_err(source, ln, e.to_string()))
        })
        .collect()
}

/// `user_id TAB id1,id2,...`
pub fn parse_sequences_tsv<R: BufRead>(reader: R, source: &str) -> Result<Vec<UserSequence>> {
    lines(reader, source)
        .map(|r| {
            let (ln, line) = r?;
            let (user, items) = line
                .split_once('\t')
                .ok_or_else(|| ingest_err(source, ln, "expected `user_id<TAB>item,item,...`"))?;
            let items: Vec<String> = items
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
            Ok(UserSequence {
                line: ln,
                user: user.to_owned(),
                items,
            })
        })
        .collect()
}

/// `seed_id TAB neighbor_id TAB count`
pub fn parse_graph_tsv<R: BufRead>(reader: R, source: &str) -> Result<Vec<RawEdge>> {
    lines(reader, source)
        .map(|r| {
            let (ln, line) = r?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(ingest_err(source, ln, "expected `seed<TAB>neighbor<TAB>count`"));
            }
            let count: u32 = f[2]
                .trim()
                .parse()
                .map_err(|_| ingest_err(source, ln, format!("bad count `{}`", f[2])))?;
            if count == 0 {
                return Err(ingest_err(source, ln, "count must be at least 1"));
            }
            Ok(RawEdge {
                line: ln,
                seed: f[0].to_owned(),
                neighbor: f[1].to_owned(),
                count,
            })
        })
        .collect()
}

/// One line of `pairs.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub line: usize,
    pub query: String,
    pub item: String,
}

/// `query text TAB item_id`
pub fn parse_pairs_tsv<R: BufRead>(reader: R, source: &str) -> Result<Vec<RawPair>> {
    lines(reader, source)
        .map(|r| {
            let (ln, line) = r?;
            let (query, item) = line
                .rsplit_once('\t')
                .ok_or_else(|| ingest_err(source, ln, "expected `query<TAB>item_id`"))?;
            Ok(RawPair {
                line: ln,
                query: query.to_owned(),
                item: item.trim().to_owned(),
            })
        })
        .collect()
}

/// One line of `labeled_sets.jsonl`. Lines without a `set` field belong to
/// the set named `default`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawLabeled {
    #[serde(skip)]
    pub line: usize,
    #[serde(default = "default_set")]
    pub set: String,
    pub query: Vec<String>,
    pub relevant: Vec<String>,
}

fn default_set() -> String {
    "default".into()
}

pub fn parse_labeled_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Vec<RawLabeled>> {
    lines(reader, source)
        .map(|r| {
            let (ln, line) = r?;
            let mut rec: RawLabeled =
                serde_json::from_str(&line).map_err(|e| ingest_err(source, ln, e.to_string()))?;
            rec.line = ln;
            Ok(rec)
        })
        .collect()
}
