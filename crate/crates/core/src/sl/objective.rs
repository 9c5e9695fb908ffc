//! The weighted square loss, written as a sum of bilinear tasks between the
//! item block V and a column block (word vectors, free context vectors, or
//! BOW encodings of item text).
//!
//! Each task contributes
//!
//! ```text
//! omega0 * tr(G_rows * G_cols)
//!   + sum over stored pairs (i, l) of [quad * s^2 - 2 * lin * s] + constant,
//! s = v_i . x_l,  G_rows = sum_i rho_i v_i v_i^T,  G_cols = sum_l gamma_l x_l x_l^T
//! ```
//!
//! The trace term counts every (row, column) pair as an implicit negative;
//! stored pairs then correct positives (and excluded self pairs) to their
//! true weights. This keeps both the loss and every row's normal equations at
//! `O((n + m) d^2 + nnz d^2)` instead of `O(n^2 d)`.

use rayon::prelude::*;

use crate::corpus::{compute_training_weights, Corpus, TrainingWeights};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SymMatrix};
use crate::matrix::{dot, Matrix};
use crate::store::{Block, ModelKind, ModelState, Task1Mode, TrainConfig};

/// The two prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// An item's text features predict the item.
    TextToItem,
    /// An item's neighbors predict the item.
    NeighborToItem,
}

pub fn active_tasks(kind: ModelKind) -> &'static [Task] {
    match kind {
        ModelKind::Stl => &[Task::TextToItem],
        ModelKind::ZslMe => &[Task::TextToItem, Task::NeighborToItem],
        ModelKind::ZslTe => &[Task::NeighborToItem],
        ModelKind::Smc => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Columns {
    Words,
    Context,
    Encoded,
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    other: u32,
    quad: f64,
    lin: f64,
}

struct BilinearTask {
    task: Task,
    columns: Columns,
    row_weight: Vec<f64>,
    col_weight: Vec<f64>,
    by_row: Vec<Vec<PairTerm>>,
    by_col: Vec<Vec<PairTerm>>,
    constant: f64,
}

/// Loss split by component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub task1: f64,
    pub task2: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.task1 + self.task2 + self.reg
    }
}

/// `f64` copies of the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub words: Matrix<f64>,
    pub items: Matrix<f64>,
    pub context: Option<Matrix<f64>>,
}

impl DenseParams {
    pub fn from_state(state: &ModelState) -> Self {
        DenseParams {
            words: state.words.to_f64(),
            items: state.items.to_f64(),
            context: state.context.as_ref().map(Matrix::to_f64),
        }
    }

    pub fn block(&self, block: Block) -> &Matrix<f64> {
        match block {
            Block::Words => &self.words,
            Block::Items => &self.items,
            Block::Context => self.context.as_ref().expect("no context block"),
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut Matrix<f64> {
        match block {
            Block::Words => &mut self.words,
            Block::Items => &mut self.items,
            Block::Context => self.context.as_mut().expect("no context block"),
        }
    }
}

/// Second-moment matrices of the current blocks under the implicit-pair
/// weights: `words = sum_e w_e w_e^T`, `items = sum_i r_i v_i v_i^T`,
/// `context = sum_l c_l u_l u_l^T` (free or encoded context).
#[derive(Debug, Clone, PartialEq)]
pub struct Gramians {
    pub words: SymMatrix,
    pub items: SymMatrix,
    pub context: Option<SymMatrix>,
}

/// Per-sweep counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub rows_solved: usize,
    /// Rows whose system needed diagonal jitter to factor.
    pub jittered: usize,
}

/// Precomputed structure of the loss for one corpus and configuration.
pub struct Objective<'a> {
    corpus: &'a Corpus,
    config: TrainConfig,
    weights: TrainingWeights,
    tasks: Vec<BilinearTask>,
    /// For each item, its distinct words with coefficient count / k.
    item_bow: Vec<Vec<(u32, f64)>>,
    /// Transpose of `item_bow`.
    word_items: Vec<Vec<(u32, f64)>>,
}

/// Pass-start copies of the blocks and the Gramians each solve needs.
struct Snapshot {
    p: DenseParams,
    encoded: Option<Matrix<f64>>,
    row_grams: Vec<SymMatrix>,
    col_grams: Vec<SymMatrix>,
}

// Above this many f64 entries, per-item column Hessians are formed on the fly.
const HESSIAN_CACHE_LIMIT: usize = 1 << 24;

fn weighted_gram(m: &Matrix<f64>, w: &[f64]) -> SymMatrix {
    SymMatrix::gram(m.cols(), w.iter().copied().zip(m.iter_rows()))
}

impl<'a> Objective<'a> {
    /// Accepts `omega0` anywhere in `[0, 1]`; `0` is a limiting case used
    /// for analysis and is rejected only by [`TrainConfig::validate`].
    pub fn new(corpus: &'a Corpus, config: &TrainConfig) -> Result<Self> {
        if config.kind == ModelKind::Smc {
            return Err(Error::Config("SMC is not a square-loss model".into()));
        }
        if !(0.0..=1.0).contains(&config.omega0) || !(config.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "omega0 {} / lambda {} out of range",
                config.omega0, config.lambda
            )));
        }
        let n = corpus.n_items();
        let m = corpus.n_words();
        let weights = if config.use_weights {
            compute_training_weights(&corpus.graph, config.empty_weight)
        } else {
            TrainingWeights::uniform(n)
        };

        let mut item_bow = Vec::with_capacity(n);
        let mut word_items = vec![Vec::new(); m];
        for i in 0..n {
            let words = corpus.words(i);
            let mut distinct: Vec<u32> = words.to_vec();
            distinct.sort_unstable();
            let mut bow = Vec::new();
            for run in distinct.chunk_by(|a, b| a == b) {
                let a = run.len() as f64 / words.len() as f64;
                bow.push((run[0], a));
                word_items[run[0] as usize].push((i as u32, a));
            }
            item_bow.push(bow);
        }

        let omega0 = config.omega0;
        let mut tasks = Vec::new();
        for &task in active_tasks(config.kind) {
            tasks.push(match task {
                Task::TextToItem => {
                    let mode = config.task1_mode;
                    let (columns, n_cols) = match mode {
                        Task1Mode::PerWord => (Columns::Words, m),
                        Task1Mode::Encoded => (Columns::Encoded, n),
                    };
                    let mut by_row = vec![Vec::new(); n];
                    let mut constant = 0.0;
                    for (i, bow) in item_bow.iter().enumerate() {
                        let positives: Vec<u32> = match mode {
                            Task1Mode::PerWord => bow.iter().map(|&(e, _)| e).collect(),
                            Task1Mode::Encoded if bow.is_empty() => vec![],
                            Task1Mode::Encoded => vec![i as u32],
                        };
                        for other in positives {
                            by_row[i].push(PairTerm {
                                other,
                                quad: 1.0 - omega0,
                                lin: 1.0,
                            });
                            constant += 1.0;
                        }
                    }
                    let by_col = transpose(&by_row, n_cols);
                    BilinearTask {
                        task,
                        columns,
                        row_weight: vec![1.0; n],
                        col_weight: vec![1.0; n_cols],
                        by_row,
                        by_col,
                        constant,
                    }
                }
                Task::NeighborToItem => {
                    let columns = if config.kind == ModelKind::ZslTe {
                        Columns::Encoded
                    } else {
                        Columns::Context
                    };
                    let weigh_neg = config.use_weights && config.weight_negatives;
                    let (row_weight, col_weight) = if weigh_neg {
                        (weights.row.clone(), weights.col.clone())
                    } else {
                        (vec![1.0; n], vec![1.0; n])
                    };
                    let mut by_row = vec![Vec::new(); n];
                    let mut constant = 0.0;
                    for (i, terms) in by_row.iter_mut().enumerate() {
                        let nbrs = corpus.graph.neighbors(i);
                        let self_pos = nbrs.partition_point(|&j| (j as usize) < i);
                        let mut push = |j: u32, positive: bool| {
                            let neg = omega0 * row_weight[i] * col_weight[j as usize];
                            let pos = if positive {
                                weights.row[i] * weights.col[j as usize]
                            } else {
                                0.0
                            };
                            terms.push(PairTerm {
                                other: j,
                                quad: pos - neg,
                                lin: pos,
                            });
                            pos
                        };
                        for (k, &j) in nbrs.iter().enumerate() {
                            if k == self_pos && config.exclude_self_negative {
                                push(i as u32, false);
                            }
                            constant += push(j, true);
                        }
                        if self_pos == nbrs.len() && config.exclude_self_negative {
                            push(i as u32, false);
                        }
                    }
                    let by_col = transpose(&by_row, n);
                    BilinearTask {
                        task,
                        columns,
                        row_weight,
                        col_weight,
                        by_row,
                        by_col,
                        constant,
                    }
                }
            });
        }
        Ok(Objective {
            corpus,
            config: config.clone(),
            weights,
            tasks,
            item_bow,
            word_items,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn weights(&self) -> &TrainingWeights {
        &self.weights
    }

    fn needs_encoding(&self) -> bool {
        self.tasks.iter().any(|t| t.columns == Columns::Encoded)
    }

    /// BOW encodings of every item (zero for items without words).
    pub fn encode_items(&self, words: &Matrix<f64>) -> Matrix<f64> {
        let d = words.cols();
        let mut q = Matrix::zeros(self.corpus.n_items(), d);
        for (i, bow) in self.item_bow.iter().enumerate() {
            let row = q.row_mut(i);
            for &(e, a) in bow {
                for (dst, &x) in row.iter_mut().zip(words.row(e as usize)) {
                    *dst += a * x;
                }
            }
        }
        q
    }

    fn check_shapes(&self, p: &DenseParams) -> Result<()> {
        let (n, m) = (self.corpus.n_items(), self.corpus.n_words());
        let d = p.items.cols();
        let ok = p.items.rows() == n
            && p.words.rows() == m
            && p.words.cols() == d
            && match (&p.context, self.config.kind.has_context_block()) {
                (Some(u), true) => u.rows() == n && u.cols() == d,
                (None, false) => true,
                _ => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameters do not match a {} model over {m} words and {n} items",
                self.config.kind
            )))
        }
    }

    fn columns<'p>(
        &self,
        task: &BilinearTask,
        p: &'p DenseParams,
        encoded: Option<&'p Matrix<f64>>,
    ) -> &'p Matrix<f64> {
        match task.columns {
            Columns::Words => &p.words,
            Columns::Context => p.context.as_ref().expect("context block"),
            Columns::Encoded => encoded.expect("encoded items"),
        }
    }

    /// Loss via Gramian traces plus sparse corrections.
    pub fn loss(&self, p: &DenseParams) -> Result<LossBreakdown> {
        self.check_shapes(p)?;
        let encoded = self.needs_encoding().then(|| self.encode_items(&p.words));
        let mut out = LossBreakdown::default();
        for t in &self.tasks {
            let cols = self.columns(t, p, encoded.as_ref());
            let ga = weighted_gram(&p.items, &t.row_weight);
            let gb = weighted_gram(cols, &t.col_weight);
            let mut val = self.config.omega0 * ga.trace_product(&gb) + t.constant;
            for (i, terms) in t.by_row.iter().enumerate() {
                let v = p.items.row(i);
                for term in terms {
                    let s = dot(v, cols.row(term.other as usize));
                    val += term.quad * s * s - 2.0 * term.lin * s;
                }
            }
            match t.task {
                Task::TextToItem => out.task1 += val,
                Task::NeighborToItem => out.task2 += val,
            }
        }
        let mut reg = p.words.frobenius_sq() + p.items.frobenius_sq();
        if let Some(u) = &p.context {
            reg += u.frobenius_sq();
        }
        out.reg = self.config.lambda * reg;
        Ok(out)
    }

    pub fn gramians(&self, p: &DenseParams) -> Result<Gramians> {
        self.check_shapes(p)?;
        let (row_w, col_w) = self
            .tasks
            .iter()
            .find(|t| t.task == Task::NeighborToItem)
            .map(|t| (t.row_weight.clone(), t.col_weight.clone()))
            .unwrap_or_else(|| (vec![1.0; p.items.rows()], vec![1.0; p.items.rows()]));
        let context = match self.config.kind {
            ModelKind::ZslMe => Some(weighted_gram(p.context.as_ref().unwrap(), &col_w)),
            ModelKind::ZslTe => Some(weighted_gram(&self.encode_items(&p.words), &col_w)),
            _ => None,
        };
        Ok(Gramians {
            words: weighted_gram(&p.words, &vec![1.0; p.words.rows()]),
            items: weighted_gram(&p.items, &row_w),
            context,
        })
    }

    fn snapshot(&self, state: &ModelState) -> Result<Snapshot> {
        let p = DenseParams::from_state(state);
        self.check_shapes(&p)?;
        let encoded = self.needs_encoding().then(|| self.encode_items(&p.words));
        let row_grams = self
            .tasks
            .iter()
            .map(|t| weighted_gram(&p.items, &t.row_weight))
            .collect();
        let col_grams = self
            .tasks
            .iter()
            .map(|t| weighted_gram(self.columns(t, &p, encoded.as_ref()), &t.col_weight))
            .collect();
        Ok(Snapshot {
            p,
            encoded,
            row_grams,
            col_grams,
        })
    }

    fn system_for_item(&self, snap: &Snapshot, i: usize) -> (SymMatrix, Vec<f64>) {
        let d = snap.p.items.cols();
        let mut a = SymMatrix::scaled_identity(d, self.config.lambda);
        let mut b = vec![0.0; d];
        for (k, t) in self.tasks.iter().enumerate() {
            let cols = self.columns(t, &snap.p, snap.encoded.as_ref());
            a.add_scaled(self.config.omega0 * t.row_weight[i], &snap.col_grams[k]);
            for term in &t.by_row[i] {
                let x = cols.row(term.other as usize);
                a.add_outer(term.quad, x);
                axpy(term.lin, x, &mut b);
            }
        }
        (a, b)
    }

    /// Quadratic form of task `k`'s loss in column `l`'s vector:
    /// `x^T H x - 2 g^T x + const`.
    fn column_quadratic(&self, snap: &Snapshot, k: usize, l: usize) -> (SymMatrix, Vec<f64>) {
        let t = &self.tasks[k];
        let d = snap.p.items.cols();
        let mut h = SymMatrix::zeros(d);
        h.add_scaled(self.config.omega0 * t.col_weight[l], &snap.row_grams[k]);
        let mut g = vec![0.0; d];
        for term in &t.by_col[l] {
            let v = snap.p.items.row(term.other as usize);
            h.add_outer(term.quad, v);
            axpy(term.lin, v, &mut g);
        }
        (h, g)
    }

    fn system_for_context(&self, snap: &Snapshot, l: usize) -> (SymMatrix, Vec<f64>) {
        let d = snap.p.items.cols();
        let mut a = SymMatrix::scaled_identity(d, self.config.lambda);
        let mut b = vec![0.0; d];
        for (k, t) in self.tasks.iter().enumerate() {
            if t.columns == Columns::Context {
                let (h, g) = self.column_quadratic(snap, k, l);
                a.add_scaled(1.0, &h);
                axpy(1.0, &g, &mut b);
            }
        }
        (a, b)
    }

    fn system_for_word(
        &self,
        snap: &Snapshot,
        hessians: &[Option<Vec<(SymMatrix, Vec<f64>)>>],
        e: usize,
    ) -> (SymMatrix, Vec<f64>) {
        let d = snap.p.items.cols();
        let mut a = SymMatrix::scaled_identity(d, self.config.lambda);
        let mut b = vec![0.0; d];
        let w_e = snap.p.words.row(e);
        for (k, t) in self.tasks.iter().enumerate() {
            match t.columns {
                Columns::Words => {
                    let (h, g) = self.column_quadratic(snap, k, e);
                    a.add_scaled(1.0, &h);
                    axpy(1.0, &g, &mut b);
                }
                Columns::Encoded => {
                    let q = snap.encoded.as_ref().expect("encoded items");
                    for &(l, coef) in &self.word_items[e] {
                        let l = l as usize;
                        let owned;
                        let (h, g) = match &hessians[k] {
                            Some(cache) => (&cache[l].0, &cache[l].1),
                            None => {
                                owned = self.column_quadratic(snap, k, l);
                                (&owned.0, &owned.1)
                            }
                        };
                        // rest of item l's encoding without word e
                        let rest: Vec<f64> =
                            q.row(l).iter().zip(w_e).map(|(ql, w)| ql - coef * w).collect();
                        let h_rest = h.mul_vec(&rest);
                        a.add_scaled(coef * coef, h);
                        for ((bb, gg), hr) in b.iter_mut().zip(g).zip(&h_rest) {
                            *bb += coef * (gg - hr);
                        }
                    }
                }
                Columns::Context => {}
            }
        }
        (a, b)
    }

    fn column_hessians(&self, snap: &Snapshot) -> Vec<Option<Vec<(SymMatrix, Vec<f64>)>>> {
        let d = snap.p.items.cols();
        let n = self.corpus.n_items();
        self.tasks
            .iter()
            .enumerate()
            .map(|(k, t)| {
                (t.columns == Columns::Encoded && n * d * d <= HESSIAN_CACHE_LIMIT).then(|| {
                    (0..n)
                        .into_par_iter()
                        .map(|l| self.column_quadratic(snap, k, l))
                        .collect()
                })
            })
            .collect()
    }

    fn has_block(&self, block: Block) -> bool {
        match block {
            Block::Context => self.config.kind.has_context_block(),
            _ => true,
        }
    }

    fn block_rows(&self, block: Block) -> usize {
        match block {
            Block::Words => self.corpus.n_words(),
            _ => self.corpus.n_items(),
        }
    }

    /// Sets one row to the exact minimizer of the loss with every other
    /// parameter held fixed, returning the unrounded `f64` solution. The
    /// stored `f32` row is that solution rounded.
    pub fn update_row(&self, state: &mut ModelState, block: Block, row: usize) -> Result<Vec<f64>> {
        if !self.has_block(block) || row >= self.block_rows(block) {
            return Err(Error::Shape(format!("no row {row} in block {}", block.name())));
        }
        let snap = self.snapshot(state)?;
        let (a, b) = match block {
            Block::Items => self.system_for_item(&snap, row),
            Block::Context => self.system_for_context(&snap, row),
            Block::Words => self.system_for_word(&snap, &vec![None; self.tasks.len()], row),
        };
        let solved = solve_spd(&a, &b);
        if solved.jittered {
            log::warn!("row {row} of {}: singular system, added jitter", block.name());
        }
        commit_row(state, block, row, &a, &b, &solved.x)?;
        Ok(solved.x)
    }

    /// One pass over V, then U (ZSL_ME), then W.
    pub fn sweep(&self, state: &mut ModelState) -> Result<SweepStats> {
        let mut stats = SweepStats::default();
        for block in [Block::Items, Block::Context, Block::Words] {
            if self.has_block(block) {
                self.block_pass(state, block, &mut stats)?;
            }
        }
        if stats.jittered > 0 {
            log::warn!("{} row systems needed jitter this sweep", stats.jittered);
        }
        state.sweep_count += 1;
        Ok(stats)
    }

    fn block_pass(&self, state: &mut ModelState, block: Block, stats: &mut SweepStats) -> Result<()> {
        let mut snap = self.snapshot(state)?;
        let rows = self.block_rows(block);
        let coupled = block == Block::Words && self.needs_encoding();
        let hessians = if block == Block::Words {
            self.column_hessians(&snap)
        } else {
            vec![None; self.tasks.len()]
        };
        let system = |snap: &Snapshot, r: usize| match block {
            Block::Items => self.system_for_item(snap, r),
            Block::Context => self.system_for_context(snap, r),
            Block::Words => self.system_for_word(snap, &hessians, r),
        };

        if coupled && !self.config.parallel {
            // Gauss-Seidel: later words see earlier words' new values
            for e in 0..rows {
                let (a, b) = system(&snap, e);
                let solved = solve_spd(&a, &b);
                stats.jittered += solved.jittered as usize;
                stats.rows_solved += 1;
                let stored = commit_row(state, block, e, &a, &b, &solved.x)?;
                let old: Vec<f64> = snap.p.words.row(e).to_vec();
                snap.p.words.row_mut(e).copy_from_slice(&stored);
                if let Some(q) = snap.encoded.as_mut() {
                    for &(l, coef) in &self.word_items[e] {
                        for ((ql, new), old) in q.row_mut(l as usize).iter_mut().zip(&stored).zip(&old) {
                            *ql += coef * (new - old);
                        }
                    }
                }
            }
            return Ok(());
        }

        // rows of this block are independent given the snapshot (or, for a
        // coupled block in parallel mode, solved against pass-start values)
        let solve = |r: usize| {
            let (a, b) = system(&snap, r);
            let s = solve_spd(&a, &b);
            (a, b, s)
        };
        let solutions: Vec<_> = if self.config.parallel {
            (0..rows).into_par_iter().map(solve).collect()
        } else {
            (0..rows).map(solve).collect()
        };
        for (r, (a, b, s)) in solutions.into_iter().enumerate() {
            stats.jittered += s.jittered as usize;
            stats.rows_solved += 1;
            commit_row(state, block, r, &a, &b, &s.x)?;
        }
        Ok(())
    }
}

fn transpose(by_row: &[Vec<PairTerm>], n_cols: usize) -> Vec<Vec<PairTerm>> {
    let mut by_col = vec![Vec::new(); n_cols];
    for (i, terms) in by_row.iter().enumerate() {
        for t in terms {
            by_col[t.other as usize].push(PairTerm {
                other: i as u32,
                quad: t.quad,
                lin: t.lin,
            });
        }
    }
    by_col
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += a * xx;
    }
}

/// Stores the `f32` rounding of the minimizer `x` of `y^T A y - 2 b^T y`,
/// unless rounding makes it worse than the row already stored, which can
/// happen once a row has converged. Returns the stored values as `f64`.
fn commit_row(
    state: &mut ModelState,
    block: Block,
    row: usize,
    a: &SymMatrix,
    b: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            block: block.name(),
            row,
        });
    }
    let dst = match block {
        Block::Words => state.words.row_mut(row),
        Block::Items => state.items.row_mut(row),
        Block::Context => state.context.as_mut().expect("context block").row_mut(row),
    };
    let old: Vec<f64> = dst.iter().map(|&v| v as f64).collect();
    let new: Vec<f64> = x.iter().map(|&v| v as f32 as f64).collect();
    // f(new) - f(old) = (new - old)^T (A (new + old) - 2 b)
    let diff: Vec<f64> = new.iter().zip(&old).map(|(n, o)| n - o).collect();
    let sum: Vec<f64> = new.iter().zip(&old).map(|(n, o)| n + o).collect();
    let change: f64 = a
        .mul_vec(&sum)
        .iter()
        .zip(b)
        .zip(&diff)
        .map(|((ax, bb), d)| d * (ax - 2.0 * bb))
        .sum();
    if change > 0.0 {
        return Ok(old);
    }
    for (d, &v) in dst.iter_mut().zip(&new) {
        *d = v as f32;
    }
    Ok(new)
}
