//! Supervised multiclass baseline: BOW query encoder and item vectors
//! trained with sampled softmax and plain SGD on (query, item) pairs.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::formats::{tokenize, RawPair};
use crate::matrix::Matrix;
use crate::store::{init_blocks, ModelKind, ModelState};

/// Distribution negatives are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Uniform,
    /// `P(k) ∝ log((k + 2) / (k + 1))` over item index, which approximates
    /// popularity when items are indexed by decreasing frequency.
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub dim: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    pub init_std: f64,
    pub sampler: Sampler,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            dim: 200,
            negatives: 100,
            batch_size: 128,
            learning_rate: 0.06,
            steps: 1000,
            seed: 0,
            init_std: 0.1,
            sampler: Sampler::Uniform,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config("dim, batch_size and negatives must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::Config("init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// One training or evaluation query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    /// Vocabulary indices after bigram expansion and OOV drop.
    pub words: Vec<u32>,
    pub target: u32,
    /// Number of whitespace tokens in the original query.
    pub unigram_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryItemPairs {
    pub records: Vec<QueryRecord>,
}

impl QueryItemPairs {
    /// Resolves raw pairs against a corpus. Queries with no in-vocabulary
    /// term are dropped and counted; unknown item ids are an error.
    pub fn from_raw(raw: &[RawPair], corpus: &Corpus) -> Result<(Self, usize)> {
        let mut all = Self::resolve_all(raw, corpus)?;
        let before = all.len();
        all.records.retain(|r| !r.words.is_empty());
        let dropped = before - all.len();
        Ok((all, dropped))
    }

    /// Like [`from_raw`](Self::from_raw) but keeps queries with no
    /// in-vocabulary term (as empty word lists), so records stay aligned with
    /// the input lines. Evaluation treats such queries as unscorable.
    pub fn resolve_all(raw: &[RawPair], corpus: &Corpus) -> Result<Self> {
        let mut records = Vec::with_capacity(raw.len());
        for p in raw {
            let target = corpus.items.get(&p.item).ok_or_else(|| Error::UnknownItem {
                id: p.item.clone(),
                line: p.line,
            })?;
            let tokens = tokenize(&p.query);
            let (words, _) = corpus.encode_tokens(&tokens);
            records.push(QueryRecord {
                words,
                target,
                unigram_len: tokens.len(),
            });
        }
        Ok(QueryItemPairs { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Mean of the word rows, with multiplicity.
fn encode(words: &[u32], w: &Matrix<f32>) -> Vec<f64> {
    let mut q = vec![0.0; w.cols()];
    for &e in words {
        for (qq, &x) in q.iter_mut().zip(w.row(e as usize)) {
            *qq += x as f64;
        }
    }
    let len = words.len() as f64;
    q.iter_mut().for_each(|x| *x /= len);
    q
}

fn dot_f32(q: &[f64], v: &[f32]) -> f64 {
    q.iter().zip(v).map(|(a, &b)| a * b as f64).sum()
}

/// `-log softmax(logits)[target]`, stable.
fn neg_log_softmax(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Largest item count the exact evaluators accept.
pub const EXACT_CE_MAX_ITEMS: usize = 1 << 17;

fn guard(n: usize) -> Result<()> {
    if n > EXACT_CE_MAX_ITEMS {
        return Err(Error::TooLarge(format!(
            "exact softmax over {n} items exceeds the limit {EXACT_CE_MAX_ITEMS}"
        )));
    }
    Ok(())
}

/// Mean exact cross-entropy of the targets under a full softmax over all
/// items, with logits `v_l . encode(query)`.
pub fn ce_loss_exact(state: &ModelState, pairs: &QueryItemPairs) -> Result<f64> {
    let n = state.n_items();
    guard(n)?;
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to evaluate".into()));
    }
    let mut total = 0.0;
    let mut logits = vec![0.0; n];
    for r in &pairs.records {
        let q = encode(&r.words, &state.words);
        for (z, v) in logits.iter_mut().zip(state.items.iter_rows()) {
            *z = dot_f32(&q, v);
        }
        total += neg_log_softmax(&logits, r.target as usize);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean exact cross-entropy of item-given-item predictions: for a pair
/// `(j, i)`, logits are `v_l . c_j` where `c_j` is the free context vector
/// (ZSL_ME) or the BOW encoding of item `j`'s text (ZSL_TE), and the target
/// is `i`.
pub fn ce_loss_context(state: &ModelState, corpus: &Corpus, pairs: &[(u32, u32)]) -> Result<f64> {
    let n = state.n_items();
    guard(n)?;
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to evaluate".into()));
    }
    let mut total = 0.0;
    let mut logits = vec![0.0; n];
    for &(j, i) in pairs {
        let c: Vec<f64> = match (&state.context, state.kind) {
            (Some(u), _) => u.row(j as usize).iter().map(|&x| x as f64).collect(),
            (None, ModelKind::ZslTe) if !corpus.words(j as usize).is_empty() => {
                encode(corpus.words(j as usize), &state.words)
            }
            (None, ModelKind::ZslTe) => vec![0.0; state.dim],
            _ => {
                return Err(Error::Config(format!(
                    "{} models have no context representation",
                    state.kind
                )))
            }
        };
        for (z, v) in logits.iter_mut().zip(state.items.iter_rows()) {
            *z = dot_f32(&c, v);
        }
        total += neg_log_softmax(&logits, i as usize);
    }
    Ok(total / pairs.len() as f64)
}

/// Sparse gradient of a batch's mean loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub words: BTreeMap<u32, Vec<f64>>,
    pub items: BTreeMap<u32, Vec<f64>>,
}

fn accumulate(map: &mut BTreeMap<u32, Vec<f64>>, key: u32, coef: f64, x: &[f64]) {
    let row = map.entry(key).or_insert_with(|| vec![0.0; x.len()]);
    for (r, v) in row.iter_mut().zip(x) {
        *r += coef * v;
    }
}

/// Candidate list for one example: `(item, logit correction)` with the
/// target first.
type Candidates = Vec<(u32, f64)>;

pub struct SmcTrainer<'a> {
    config: SmcConfig,
    pairs: &'a QueryItemPairs,
    state: ModelState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
    log_uniform_norm: f64,
}

impl<'a> SmcTrainer<'a> {
    pub fn new(pairs: &'a QueryItemPairs, corpus: &Corpus, config: &SmcConfig) -> Result<Self> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::Config("SMC training needs at least one pair".into()));
        }
        let n = corpus.n_items();
        if let Some(r) = pairs.records.iter().find(|r| r.target as usize >= n || r.words.is_empty()) {
            return Err(Error::Shape(format!("invalid pair targeting item {}", r.target)));
        }
        let mut state = init_blocks(
            ModelKind::Smc,
            config.dim,
            corpus.n_words(),
            n,
            config.seed,
            config.init_std,
        )?;
        state.smc_config = Some(config.clone());
        let mut t = SmcTrainer {
            config: config.clone(),
            pairs,
            state,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: (0..pairs.len()).collect(),
            cursor: 0,
            step: 0,
            log_uniform_norm: ((n + 1) as f64).ln(),
        };
        t.reshuffle();
        Ok(t)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.reshuffle();
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    fn log_uniform_p(&self, k: u32) -> f64 {
        ((k as f64 + 2.0) / (k as f64 + 1.0)).ln() / self.log_uniform_norm
    }

    /// Target plus `negatives` distinct non-target items. Negative logits
    /// get the usual `-log(S * P(item))` correction; with every non-target
    /// drawn, corrections vanish and the softmax is exact.
    fn sample_candidates(&mut self, target: u32) -> Candidates {
        let n = self.state.n_items();
        let s = self.config.negatives;
        let mut out = vec![(target, 0.0)];
        if s >= n - 1 {
            out.extend((0..n as u32).filter(|&c| c != target).map(|c| (c, 0.0)));
            return out;
        }
        match self.config.sampler {
            Sampler::Uniform => {
                // draw from the n - 1 non-targets, shifting past the target
                let corr = -(s as f64 / (n - 1) as f64).ln();
                for k in index::sample(&mut self.rng, n - 1, s) {
                    let c = if k >= target as usize { k + 1 } else { k } as u32;
                    out.push((c, corr));
                }
            }
            Sampler::LogUniform => {
                let mut seen = std::collections::HashSet::from([target]);
                while out.len() < s + 1 {
                    let u: f64 = self.rng.gen();
                    let k = ((u * self.log_uniform_norm).exp() - 1.0).floor() as u32;
                    let k = k.min(n as u32 - 1);
                    if seen.insert(k) {
                        let p = self.log_uniform_p(k);
                        out.push((k, -(s as f64 * p).ln()));
                    }
                }
            }
        }
        out
    }

    /// Gradient of the mean sampled-softmax loss over `batch` (indices into
    /// the pairs), drawing fresh negatives.
    pub fn sampled_batch_gradient(&mut self, batch: &[usize]) -> BatchGradient {
        let mut grad = BatchGradient::default();
        let scale = 1.0 / batch.len() as f64;
        for &b in batch {
            let rec = &self.pairs.records[b];
            let cands = self.sample_candidates(rec.target);
            let q = encode(&rec.words, &self.state.words);
            let logits: Vec<f64> = cands
                .iter()
                .map(|&(c, corr)| dot_f32(&q, self.state.items.row(c as usize)) + corr)
                .collect();
            grad.loss += scale * neg_log_softmax(&logits, 0);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut grad_q = vec![0.0; q.len()];
            for (k, &(c, _)) in cands.iter().enumerate() {
                let delta = exps[k] / sum - if k == 0 { 1.0 } else { 0.0 };
                accumulate(&mut grad.items, c, scale * delta, &q);
                for (g, &v) in grad_q.iter_mut().zip(self.state.items.row(c as usize)) {
                    *g += delta * v as f64;
                }
            }
            let per_word = scale / rec.words.len() as f64;
            for &e in &rec.words {
                accumulate(&mut grad.words, e, per_word, &grad_q);
            }
        }
        grad
    }

    fn apply(&mut self, grad: &BatchGradient) -> Result<()> {
        let lr = self.config.learning_rate;
        let step = self.step;
        let write = |m: &mut Matrix<f32>, rows: &BTreeMap<u32, Vec<f64>>| -> Result<()> {
            for (&r, g) in rows {
                for (x, gv) in m.row_mut(r as usize).iter_mut().zip(g) {
                    *x = (*x as f64 - lr * gv) as f32;
                    if !x.is_finite() {
                        return Err(Error::Diverged { step });
                    }
                }
            }
            Ok(())
        };
        write(&mut self.state.items, &grad.items)?;
        write(&mut self.state.words, &grad.words)
    }

    /// Runs `steps` SGD steps; returns the mean sampled loss of each step.
    pub fn run(&mut self, steps: u64) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let batch = self.next_batch();
            let grad = self.sampled_batch_gradient(&batch);
            if !grad.loss.is_finite() {
                return Err(Error::Diverged { step: self.step });
            }
            self.apply(&grad)?;
            self.step += 1;
            losses.push(grad.loss);
            if self.step % 100 == 0 {
                log::debug!("step {}: sampled loss {:.5}", self.step, grad.loss);
            }
        }
        Ok(losses)
    }
}

/// Initializes and trains an SMC model for `config.steps` steps.
pub fn train_smc(pairs: &QueryItemPairs, corpus: &Corpus, config: &SmcConfig) -> Result<ModelState> {
    let mut t = SmcTrainer::new(pairs, corpus, config)?;
    t.run(config.steps)?;
    Ok(t.into_state())
}
