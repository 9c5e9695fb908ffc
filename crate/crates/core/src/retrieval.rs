//! Exact top-K retrieval by full scan, and the two-list interleaved ensemble.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use crate::encoder::ScoreMode;
use crate::error::{Error, Result};
use crate::matrix::{dot_mixed, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub item: u32,
    pub score: f64,
}

/// An ordered result list. Lists produced by [`retrieve_topk`] have
/// non-increasing scores; ensembles carry each entry's original score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    /// Requested length.
    pub k: usize,
    pub mode: ScoreMode,
    /// Fewer than `k` candidates were available.
    pub short: bool,
}

impl RankedList {
    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.item)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` entries.
    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList {
            entries: self.entries.iter().take(k).copied().collect(),
            k,
            mode: self.mode,
            short: self.entries.len() < k,
        }
    }
}

/// Higher score first, then lower index.
#[derive(PartialEq)]
struct Ranked(RankedEntry);

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .score
            .total_cmp(&other.0.score)
            .then_with(|| other.0.item.cmp(&self.0.item))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Scores `candidates` against `query` and keeps the best `k`.
///
/// Under cosine, candidates with a zero norm are skipped; a zero query is an
/// error.
pub fn retrieve_among<I>(
    query: &[f64],
    items: &Matrix<f32>,
    candidates: I,
    k: usize,
    mode: ScoreMode,
) -> Result<RankedList>
where
    I: IntoIterator<Item = u32>,
{
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if query.len() != items.cols() {
        return Err(Error::Shape(format!(
            "query dim {} vs item dim {}",
            query.len(),
            items.cols()
        )));
    }
    let qn = norm(query);
    if mode == ScoreMode::Cosine && qn == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for item in candidates {
        let row = items.row(item as usize);
        let mut score = dot_mixed(query, row);
        if mode == ScoreMode::Cosine {
            let vn = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if vn == 0.0 {
                continue;
            }
            score /= qn * vn;
        }
        let cand = Ranked(RankedEntry { item, score });
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if let Some(mut worst) = heap.peek_mut() {
            if cand > worst.0 {
                *worst = Reverse(cand);
            }
        }
    }
    let mut entries: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    entries.sort_by(|a, b| b.cmp(a));
    let short = entries.len() < k;
    Ok(RankedList {
        entries: entries.into_iter().map(|r| r.0).collect(),
        k,
        mode,
        short,
    })
}

/// Full-scan top-`k` over all rows of `items`, skipping `exclude`.
pub fn retrieve_topk(
    query: &[f64],
    items: &Matrix<f32>,
    k: usize,
    mode: ScoreMode,
    exclude: Option<&HashSet<u32>>,
) -> Result<RankedList> {
    if items.rows() == 0 {
        return Err(Error::Shape("no items to retrieve from".into()));
    }
    let all = 0..items.rows() as u32;
    match exclude {
        Some(ex) => retrieve_among(query, items, all.filter(|i| !ex.contains(i)), k, mode),
        None => retrieve_among(query, items, all, k, mode),
    }
}

fn next_unseen<'a, I>(it: &mut I, seen: &mut HashSet<u32>) -> Option<RankedEntry>
where
    I: Iterator<Item = &'a RankedEntry>,
{
    it.find(|e| seen.insert(e.item)).copied()
}

/// Merges two ranked lists: the first `head_len` entries of `primary`, then
/// one entry from `secondary` and one from the rest of `primary` in turn,
/// secondary first. An entry whose item was already emitted is skipped and
/// its list's next entry is taken in the same turn. `secondary_cap` bounds
/// how many entries `secondary` may contribute. When either list runs out the
/// other continues alone.
pub fn ensemble_interleave(
    primary: &RankedList,
    secondary: &RankedList,
    head_len: usize,
    secondary_cap: Option<usize>,
) -> RankedList {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(primary.len() + secondary.len());
    let mut p = primary.entries.iter().peekable();
    for e in p.by_ref().take(head_len) {
        if seen.insert(e.item) {
            out.push(*e);
        }
    }
    let cap = secondary_cap.unwrap_or(usize::MAX);
    let mut s_taken = 0;
    let mut s = secondary.entries.iter();
    let mut s_done = cap == 0;
    let mut p_done = false;
    while !(s_done && p_done) {
        if !s_done {
            match next_unseen(&mut s, &mut seen) {
                Some(e) => {
                    out.push(e);
                    s_taken += 1;
                    s_done = s_taken >= cap;
                }
                None => s_done = true,
            }
        }
        if !p_done {
            match next_unseen(&mut p, &mut seen) {
                Some(e) => out.push(e),
                None => p_done = true,
            }
        }
    }
    let k = out.len();
    RankedList {
        entries: out,
        k,
        mode: primary.mode,
        short: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(items: &[u32]) -> RankedList {
        RankedList {
            entries: items
                .iter()
                .enumerate()
                .map(|(r, &item)| RankedEntry {
                    item,
                    score: -(r as f64),
                })
                .collect(),
            k: items.len(),
            mode: ScoreMode::Dot,
            short: false,
        }
    }

    #[test]
    fn ties_break_by_index() {
        // scores 0.9, 0.1, 0.9 via 1-d items against q = [1]
        let v = Matrix::from_vec(3, 1, vec![0.9f32, 0.1, 0.9]);
        let r = retrieve_topk(&[1.0], &v, 2, ScoreMode::Dot, None).unwrap();
        assert_eq!(r.items().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn exclusion_and_short_lists() {
        let v = Matrix::from_vec(3, 1, vec![3.0f32, 2.0, 1.0]);
        let ex: HashSet<u32> = [0].into();
        let r = retrieve_topk(&[1.0], &v, 5, ScoreMode::Dot, Some(&ex)).unwrap();
        assert_eq!(r.items().collect::<Vec<_>>(), vec![1, 2]);
        assert!(r.short);
    }

    #[test]
    fn cosine_skips_zero_rows() {
        let v = Matrix::from_vec(2, 1, vec![0.0f32, -1.0]);
        let r = retrieve_topk(&[1.0], &v, 2, ScoreMode::Cosine, None).unwrap();
        assert_eq!(r.items().collect::<Vec<_>>(), vec![1]);
        assert!(retrieve_topk(&[0.0], &v, 1, ScoreMode::Cosine, None).is_err());
    }

    #[test]
    fn interleave_example() {
        // A..F = 0..5
        let p = list(&[0, 1, 2, 3]);
        let s = list(&[4, 0, 5]);
        let e = ensemble_interleave(&p, &s, 2, Some(2));
        assert_eq!(e.items().collect::<Vec<_>>(), vec![0, 1, 4, 2, 5, 3]);
        let e = ensemble_interleave(&p, &s, 2, None);
        assert_eq!(e.items().collect::<Vec<_>>(), vec![0, 1, 4, 2, 5, 3]);
    }

    #[test]
    fn interleave_boundaries() {
        let p = list(&[0, 1, 2]);
        assert_eq!(ensemble_interleave(&p, &list(&[]), 1, None).items().collect::<Vec<_>>(), vec![0, 1, 2]);
        let e = ensemble_interleave(&p, &list(&[7, 8]), 0, None);
        assert_eq!(e.items().collect::<Vec<_>>(), vec![7, 0, 8, 1, 2]);
        let e = ensemble_interleave(&p, &list(&[7, 8]), 0, Some(0));
        assert_eq!(e.items().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn topk_matches_sort_oracle(
            data in prop::collection::vec(-3i8..3, 2..40),
            k in 1usize..8,
            cosine in any::<bool>(),
        ) {
            let n = data.len() / 2;
            prop_assume!(n >= 1);
            let v = Matrix::from_vec(n, 2, data[..2 * n].iter().map(|&x| x as f32).collect());
            let q = [0.7, -0.3];
            let mode = if cosine { ScoreMode::Cosine } else { ScoreMode::Dot };
            let got = retrieve_topk(&q, &v, k, mode, None).unwrap();
            // oracle: score everything, sort, cut
            let mut all: Vec<(f64, u32)> = (0..n)
                .filter_map(|i| {
                    let r = v.row(i);
                    let d = q[0] * r[0] as f64 + q[1] * r[1] as f64;
                    let vn = ((r[0] as f64).powi(2) + (r[1] as f64).powi(2)).sqrt();
                    match mode {
                        ScoreMode::Dot => Some((d, i as u32)),
                        ScoreMode::Cosine if vn > 0.0 => Some((d / (vn * (0.58f64).sqrt()), i as u32)),
                        ScoreMode::Cosine => None,
                    }
                })
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = all.iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(got.items().collect::<Vec<_>>(), want);
        }

        #[test]
        fn interleave_dedups_and_keeps_order(
            a in prop::collection::vec(0u32..15, 0..12),
            b in prop::collection::vec(0u32..15, 0..12),
            head in 0usize..6,
        ) {
            let dedup = |v: Vec<u32>| {
                let mut s = HashSet::new();
                v.into_iter().filter(|x| s.insert(*x)).collect::<Vec<_>>()
            };
            let (a, b) = (dedup(a), dedup(b));
            // secondary scores are offset so each entry's source is known
            let mut lb = list(&b);
            lb.entries.iter_mut().for_each(|e| e.score += 1000.0);
            let e = ensemble_interleave(&list(&a), &lb, head, None);
            let out: Vec<u32> = e.items().collect();
            let uniq: HashSet<u32> = out.iter().copied().collect();
            prop_assert_eq!(uniq.len(), out.len());
            for (src, from_b) in [(&a, false), (&b, true)] {
                let emitted: Vec<u32> = e
                    .entries
                    .iter()
                    .filter(|x| (x.score >= 500.0) == from_b)
                    .map(|x| x.item)
                    .collect();
                let order: Vec<usize> = emitted
                    .iter()
                    .map(|x| src.iter().position(|y| y == x).unwrap())
                    .collect();
                prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
            }
            // every item of either list appears
            let all: HashSet<u32> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(all, uniq);
        }
    }
}
