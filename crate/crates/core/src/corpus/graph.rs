use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Options for deriving the graph from consumption sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Per-seed cap on kept neighbors.
    pub max_neighbors: usize,
    /// How many following positions count as "right after". 1 means only the
    /// next item.
    pub window: usize,
    /// Also record the reverse direction of every observed pair.
    pub symmetrize: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            max_neighbors: 250,
            window: 1,
            symmetrize: false,
        }
    }
}

/// Sparse item-to-item neighbor lists in CSR layout.
///
/// Row `i` holds the kept neighbors of seed item `i` in ascending index order
/// together with their co-occurrence counts. Self edges are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationGraph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    counts: Vec<u32>,
    max_neighbors: usize,
}

impl CorrelationGraph {
    pub fn empty(n_items: usize, max_neighbors: usize) -> Self {
        CorrelationGraph {
            offsets: vec![0; n_items + 1],
            neighbors: Vec::new(),
            counts: Vec::new(),
            max_neighbors,
        }
    }

    /// Aggregates `(seed, neighbor, count)` triples, summing duplicates and
    /// dropping self edges, then keeps the `max_neighbors` highest-count
    /// neighbors per seed (ties to the lower index).
    pub fn from_counted_edges(
        n_items: usize,
        mut edges: Vec<(u32, u32, u32)>,
        max_neighbors: usize,
    ) -> Result<Self> {
        if max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be at least 1".into()));
        }
        if let Some(&(s, t, _)) = edges
            .iter()
            .find(|&&(s, t, _)| s as usize >= n_items || t as usize >= n_items)
        {
            return Err(Error::Shape(format!(
                "edge ({s}, {t}) out of range for {n_items} items"
            )));
        }
        edges.retain(|&(s, t, c)| s != t && c > 0);
        edges.sort_unstable_by_key(|&(s, t, _)| (s, t));

        let mut offsets = Vec::with_capacity(n_items + 1);
        let mut neighbors = Vec::new();
        let mut counts = Vec::new();
        offsets.push(0);
        let mut row: Vec<(u32, u32)> = Vec::new();
        let mut cursor = 0;
        for seed in 0..n_items as u32 {
            row.clear();
            while cursor < edges.len() && edges[cursor].0 == seed {
                let (_, t, c) = edges[cursor];
                match row.last_mut() {
                    Some(last) if last.0 == t => last.1 = last.1.saturating_add(c),
                    _ => row.push((t, c)),
                }
                cursor += 1;
            }
            if row.len() > max_neighbors {
                row.sort_by_key(|&(t, c)| (Reverse(c), t));
                row.truncate(max_neighbors);
                row.sort_unstable_by_key(|&(t, _)| t);
            }
            for &(t, c) in &row {
                neighbors.push(t);
                counts.push(c);
            }
            offsets.push(neighbors.len());
        }
        Ok(CorrelationGraph {
            offsets,
            neighbors,
            counts,
            max_neighbors,
        })
    }

    /// Rebuilds from raw CSR arrays, validating every invariant.
    pub fn from_csr(
        offsets: Vec<usize>,
        neighbors: Vec<u32>,
        counts: Vec<u32>,
        max_neighbors: usize,
    ) -> Result<Self> {
        let n = offsets.len().saturating_sub(1);
        let bad = |m: String| Err(Error::Shape(format!("invalid graph: {m}")));
        if offsets.first() != Some(&0) || offsets.last() != Some(&neighbors.len()) {
            return bad("offsets do not span the neighbor array".into());
        }
        if counts.len() != neighbors.len() {
            return bad("counts and neighbors differ in length".into());
        }
        for i in 0..n {
            let (a, b) = (offsets[i], offsets[i + 1]);
            if a > b {
                return bad(format!("offsets decrease at row {i}"));
            }
            if b - a > max_neighbors {
                return bad(format!("row {i} exceeds max_neighbors"));
            }
            let row = &neighbors[a..b];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {i} not strictly ascending"));
            }
            if row.iter().any(|&t| t as usize >= n || t as usize == i) {
                return bad(format!("row {i} has an out-of-range or self neighbor"));
            }
            if counts[a..b].contains(&0) {
                return bad(format!("row {i} has a zero count"));
            }
        }
        Ok(CorrelationGraph {
            offsets,
            neighbors,
            counts,
            max_neighbors,
        })
    }

    pub fn n_items(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }

    pub fn max_neighbors(&self) -> usize {
        self.max_neighbors
    }

    /// Neighbors of seed `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn counts(&self, i: usize) -> &[u32] {
        &self.counts[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn contains(&self, i: usize, j: u32) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Number of seeds listing each item as a neighbor.
    pub fn column_nnz(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items()];
        for &t in &self.neighbors {
            c[t as usize] += 1;
        }
        c
    }

    /// For every item, the seeds that list it as a neighbor (ascending).
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols = vec![Vec::new(); self.n_items()];
        for i in 0..self.n_items() {
            for &t in self.neighbors(i) {
                cols[t as usize].push(i as u32);
            }
        }
        cols
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn count_array(&self) -> &[u32] {
        &self.counts
    }

    pub fn mean_row_len(&self) -> f64 {
        if self.n_items() == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.n_items() as f64
        }
    }
}

/// Counts `(seed, next)` adjacencies over item-index sequences and keeps the
/// top `max_neighbors` per seed by count, ties broken by ascending index.
pub fn build_correlation_graph(
    sequences: &[Vec<u32>],
    n_items: usize,
    opts: &GraphOptions,
) -> Result<CorrelationGraph> {
    if opts.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let mut edges = Vec::new();
    for seq in sequences {
        for (p, &seed) in seq.iter().enumerate() {
            for &next in seq.iter().skip(p + 1).take(opts.window) {
                edges.push((seed, next, 1));
                if opts.symmetrize {
                    edges.push((next, seed, 1));
                }
            }
        }
    }
    CorrelationGraph::from_counted_edges(n_items, edges, opts.max_neighbors)
}
