use serde::{Deserialize, Serialize};

use super::CorrelationGraph;

/// Raw weight given to rows/columns with no nonzeros, before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyWeightRule {
    /// The largest raw weight among nonempty rows (resp. columns).
    #[default]
    MaxRaw,
    /// A raw weight of 1.0.
    One,
}

/// Per-item row and column weights, each with arithmetic mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWeights {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

impl TrainingWeights {
    pub fn uniform(n: usize) -> Self {
        TrainingWeights {
            row: vec![1.0; n],
            col: vec![1.0; n],
        }
    }
}

/// Row weights proportional to `1/sqrt(row nnz)` and column weights to
/// `1/sqrt(column nnz)`, each rescaled to mean 1.
pub fn compute_training_weights(graph: &CorrelationGraph, rule: EmptyWeightRule) -> TrainingWeights {
    let n = graph.n_items();
    let rows: Vec<usize> = (0..n).map(|i| graph.row_len(i)).collect();
    TrainingWeights {
        row: inverse_sqrt_weights(&rows, rule),
        col: inverse_sqrt_weights(&graph.column_nnz(), rule),
    }
}

fn inverse_sqrt_weights(nnz: &[usize], rule: EmptyWeightRule) -> Vec<f64> {
    let raw: Vec<Option<f64>> = nnz
        .iter()
        .map(|&k| (k > 0).then(|| 1.0 / (k as f64).sqrt()))
        .collect();
    let max_raw = raw.iter().flatten().copied().fold(f64::NAN, f64::max);
    if max_raw.is_nan() {
        return vec![1.0; nnz.len()];
    }
    let fill = match rule {
        EmptyWeightRule::MaxRaw => max_raw,
        EmptyWeightRule::One => 1.0,
    };
    let raw: Vec<f64> = raw.into_iter().map(|w| w.unwrap_or(fill)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}
