//! Bag-of-words encoding and pair scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot_mixed, norm, Matrix};

/// Unigrams in order, followed by bigrams of adjacent tokens joined by `_`.
pub fn expand_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
    out.extend(
        tokens
            .windows(2)
            .map(|w| format!("{}_{}", w[0].as_ref(), w[1].as_ref())),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Dot,
    #[default]
    Cosine,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ScoreMode::Dot),
            "cosine" => Ok(ScoreMode::Cosine),
            _ => Err(Error::Config(format!("unknown score mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Dot => "dot",
            ScoreMode::Cosine => "cosine",
        })
    }
}

/// An encoded query: the mean of its word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub values: Vec<f64>,
    /// Number of word vectors averaged.
    pub source_len: usize,
}

/// Mean of the selected rows of `words`, counting repeated indices with
/// multiplicity.
pub fn encode_bow(word_indices: &[u32], words: &Matrix<f32>) -> Result<QueryVector> {
    if word_indices.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut acc = vec![0.0f64; words.cols()];
    for &w in word_indices {
        let w = w as usize;
        if w >= words.rows() {
            return Err(Error::Shape(format!(
                "word index {w} >= {} word rows",
                words.rows()
            )));
        }
        for (a, &x) in acc.iter_mut().zip(words.row(w)) {
            *a += x as f64;
        }
    }
    let k = word_indices.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(QueryVector {
        values: acc,
        source_len: word_indices.len(),
    })
}

/// Dot product or cosine similarity of `q` against an item row.
pub fn score_pair(q: &[f64], v: &[f32], mode: ScoreMode) -> Result<f64> {
    if q.len() != v.len() {
        return Err(Error::Shape(format!("{} vs {}", q.len(), v.len())));
    }
    let d = dot_mixed(q, v);
    match mode {
        ScoreMode::Dot => Ok(d),
        ScoreMode::Cosine => {
            let nq = norm(q);
            let nv = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if nq == 0.0 || nv == 0.0 {
                Err(Error::ZeroNorm)
            } else {
                Ok(d / (nq * nv))
            }
        }
    }
}

/// Result of [`rescale_item_norms`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub items: Matrix<f32>,
    /// Rows of the target left unchanged because their norm is zero.
    pub skipped: Vec<usize>,
}

/// Gives each row of `target` the norm of the matching row of `source`,
/// keeping its direction.
pub fn rescale_item_norms(target: &Matrix<f32>, source: &Matrix<f32>) -> Result<Rescaled> {
    if target.rows() != source.rows() || target.cols() != source.cols() {
        return Err(Error::Shape(format!(
            "target {}x{} vs source {}x{}",
            target.rows(),
            target.cols(),
            source.rows(),
            source.cols()
        )));
    }
    let row_norm = |r: &[f32]| r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut out = target.clone();
    let mut skipped = Vec::new();
    for i in 0..target.rows() {
        let nt = row_norm(target.row(i));
        if nt == 0.0 {
            skipped.push(i);
            continue;
        }
        let scale = row_norm(source.row(i)) / nt;
        for x in out.row_mut(i) {
            *x = (*x as f64 * scale) as f32;
        }
    }
    Ok(Rescaled {
        items: out,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_rows() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(encode_bow(&[0, 1], &w).unwrap().values, vec![0.5, 0.5]);
        assert_eq!(encode_bow(&[1], &w).unwrap().values, vec![0.0, 1.0]);
    }

    #[test]
    fn multiplicity_counts() {
        let w = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 3.0]);
        let q = encode_bow(&[0, 0, 1], &w).unwrap();
        assert_eq!(q.values, vec![2.0, 1.0]);
        assert_eq!(q.source_len, 3);
    }

    #[test]
    fn empty_query_errors() {
        let w = Matrix::<f32>::zeros(2, 2);
        assert!(matches!(encode_bow(&[], &w), Err(Error::EmptyQuery)));
    }

    #[test]
    fn scores() {
        assert_eq!(score_pair(&[1.0, 2.0], &[3.0, 4.0], ScoreMode::Dot).unwrap(), 11.0);
        let c = score_pair(&[0.3, 0.4], &[0.3, 0.4], ScoreMode::Cosine).unwrap();
        assert!((c - 1.0).abs() < 1e-7);
        for mode in [ScoreMode::Dot, ScoreMode::Cosine] {
            assert_eq!(score_pair(&[1.0, 0.0], &[0.0, 2.0], mode).unwrap(), 0.0);
        }
        assert!(matches!(
            score_pair(&[0.0, 0.0], &[1.0, 0.0], ScoreMode::Cosine),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn rescale_rows() {
        let t = Matrix::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let s = Matrix::from_vec(2, 2, vec![6.0, 8.0, 1.0, 1.0]);
        let r = rescale_item_norms(&t, &s).unwrap();
        assert_eq!(r.items.row(0), &[6.0, 8.0]);
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(rescale_item_norms(&t, &t).unwrap().items, t);
        assert!(rescale_item_norms(&t, &Matrix::zeros(3, 2)).is_err());
    }

    proptest! {
        #[test]
        fn bow_is_permutation_invariant(mut idx in prop::collection::vec(0u32..6, 1..10), seed in any::<u64>()) {
            let data: Vec<f32> = (0..12).map(|k| ((seed >> (k % 60)) & 0xff) as f32 / 37.0 - 3.0).collect();
            let w = Matrix::from_vec(6, 2, data);
            let a = encode_bow(&idx, &w).unwrap();
            idx.reverse();
            let b = encode_bow(&idx, &w).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            q in prop::collection::vec(-5.0f64..5.0, 3),
            v in prop::collection::vec(-5.0f32..5.0, 3),
            alpha in 0.01f64..100.0,
            beta in 0.01f32..100.0,
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let a = score_pair(&q, &v, ScoreMode::Cosine).unwrap();
            let qs: Vec<f64> = q.iter().map(|x| x * alpha).collect();
            let vs: Vec<f32> = v.iter().map(|x| x * beta).collect();
            let b = score_pair(&qs, &vs, ScoreMode::Cosine).unwrap();
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
