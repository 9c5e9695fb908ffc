//! Direct evaluation of the square loss by enumerating every
//! (item, column) pair. Shares no code with the Gramian evaluator and is
//! meant for small instances only.

use crate::corpus::{compute_training_weights, Corpus, TrainingWeights};
use crate::error::{Error, Result};
use crate::store::{ModelKind, Task1Mode, TrainConfig};

use super::objective::{DenseParams, LossBreakdown};

/// Refuse instances with more pair terms than this.
pub const BRUTE_FORCE_MAX_TERMS: usize = 1 << 14;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bow_mean(words: &[u32], w: &crate::matrix::Matrix<f64>) -> Vec<f64> {
    let mut q = vec![0.0; w.cols()];
    for &e in words {
        for (qq, x) in q.iter_mut().zip(w.row(e as usize)) {
            *qq += x;
        }
    }
    if !words.is_empty() {
        q.iter_mut().for_each(|x| *x /= words.len() as f64);
    }
    q
}

pub fn loss_bruteforce(corpus: &Corpus, config: &TrainConfig, p: &DenseParams) -> Result<LossBreakdown> {
    let n = corpus.n_items();
    let m = corpus.n_words();
    let kind = config.kind;
    let task1 = matches!(kind, ModelKind::Stl | ModelKind::ZslMe);
    let task2 = matches!(kind, ModelKind::ZslMe | ModelKind::ZslTe);
    if kind == ModelKind::Smc {
        return Err(Error::Config("SMC is not a square-loss model".into()));
    }
    let task1_cols = if config.task1_mode == Task1Mode::PerWord { m } else { n };
    let terms = task1 as usize * n * task1_cols + task2 as usize * n * n;
    if terms > BRUTE_FORCE_MAX_TERMS {
        return Err(Error::TooLarge(format!(
            "{terms} pair terms exceed the brute-force limit {BRUTE_FORCE_MAX_TERMS}"
        )));
    }
    let w0 = config.omega0;
    let encoded: Vec<Vec<f64>> = (0..n).map(|i| bow_mean(corpus.words(i), &p.words)).collect();
    let mut out = LossBreakdown::default();

    if task1 {
        for i in 0..n {
            let v = p.items.row(i);
            let words = corpus.words(i);
            match config.task1_mode {
                Task1Mode::PerWord => {
                    for e in 0..m {
                        let s = dot(v, p.words.row(e));
                        if words.contains(&(e as u32)) {
                            out.task1 += (1.0 - s) * (1.0 - s);
                        } else {
                            out.task1 += w0 * s * s;
                        }
                    }
                }
                Task1Mode::Encoded => {
                    for l in 0..n {
                        let s = dot(v, &encoded[l]);
                        if l == i && !words.is_empty() {
                            out.task1 += (1.0 - s) * (1.0 - s);
                        } else {
                            out.task1 += w0 * s * s;
                        }
                    }
                }
            }
        }
    }

    if task2 {
        let weights = if config.use_weights {
            compute_training_weights(&corpus.graph, config.empty_weight)
        } else {
            TrainingWeights::uniform(n)
        };
        let neg_weights = config.use_weights && config.weight_negatives;
        for i in 0..n {
            let v = p.items.row(i);
            for l in 0..n {
                let x: &[f64] = if kind == ModelKind::ZslMe {
                    p.context.as_ref().expect("context block").row(l)
                } else {
                    &encoded[l]
                };
                let s = dot(v, x);
                if corpus.graph.neighbors(i).contains(&(l as u32)) {
                    let wpos = weights.row[i] * weights.col[l];
                    out.task2 += wpos * (1.0 - s) * (1.0 - s);
                } else if !(l == i && config.exclude_self_negative) {
                    let wneg = if neg_weights { weights.row[i] * weights.col[l] } else { 1.0 };
                    out.task2 += w0 * wneg * s * s;
                }
            }
        }
    }

    let sq = |m: &crate::matrix::Matrix<f64>| m.as_slice().iter().map(|x| x * x).sum::<f64>();
    out.reg = config.lambda * (sq(&p.words) + sq(&p.items) + p.context.as_ref().map_or(0.0, sq));
    Ok(out)
}
