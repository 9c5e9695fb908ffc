//! End-to-end acceptance checks, one line of output per criterion.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use rand::Rng;
use zsl::corpus::{CorrelationGraph, IdIndex};
use zsl::encoder::rescale_item_norms;
use zsl::eval::*;
use zsl::retrieval::retrieve_topk;
use zsl::sl::{continue_training, loss_bruteforce, train_sl_model, DenseParams, LossTrace, Objective};
use zsl::smc::{ce_loss_exact, train_smc, QueryItemPairs, QueryRecord, SmcConfig, SmcTrainer};
use zsl::store::{init_blocks, load_model, save_model, warm_start_extend, Block};
use zsl::{Corpus, Matrix, ModelKind, ScoreMode, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// 1. Gramian loss equals the brute-force enumeration.
fn loss_oracle_equivalence() -> Outcome {
    // hand fixture: n=2, d=1, v=(1,2), u=(3,4), Ne(0)={1}
    let items: IdIndex = ["a", "b"].iter().collect();
    let graph = CorrelationGraph::from_counted_edges(2, vec![(0, 1, 1)], 250).unwrap();
    let fixture = Corpus::from_parts(items, IdIndex::new(), vec![vec![], vec![]], graph).unwrap();
    let cfg = TrainConfig {
        kind: ModelKind::ZslMe,
        dim: 1,
        omega0: 0.1,
        lambda: 0.0,
        use_weights: false,
        ..TrainConfig::default()
    };
    let p = DenseParams {
        words: Matrix::zeros(0, 1),
        items: Matrix::from_vec(2, 1, vec![1.0, 2.0]),
        context: Some(Matrix::from_vec(2, 1, vec![3.0, 4.0])),
    };
    let brute = loss_bruteforce(&fixture, &cfg, &p).unwrap().total();
    let fast = Objective::new(&fixture, &cfg).unwrap().loss(&p).unwrap().total();
    ensure!((brute - 19.9).abs() <= 1e-12 && (fast - 19.9).abs() <= 1e-12, "fixture: {brute} / {fast}");

    let mut rng = rng(1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..80 {
        for kind in KINDS {
            let corpus = random_corpus(&mut rng, 40, 40);
            let cfg = random_config(&mut rng, kind, 8);
            let state = random_state(&mut rng, &corpus, &cfg);
            let p = DenseParams::from_state(&state);
            let brute = loss_bruteforce(&corpus, &cfg, &p).unwrap().total();
            let fast = Objective::new(&corpus, &cfg).unwrap().loss(&p).unwrap().total();
            worst = worst.max(rel_gap(fast, brute));
            count += 1;
        }
    }
    ensure!(worst <= 1e-8, "worst relative gap {worst:e}");
    Ok(format!("{count} instances + fixture, worst relative gap {worst:.1e}"))
}

// 2. Sequential sweeps never increase the loss.
fn cd_monotonicity() -> Outcome {
    let mut rng = rng(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        for kind in KINDS {
            let corpus = random_corpus(&mut rng, 30, 30);
            let cfg = random_config(&mut rng, kind, 6);
            let mut state = random_state(&mut rng, &corpus, &cfg);
            let obj = Objective::new(&corpus, &cfg).unwrap();
            let mut prev = loss_bruteforce(&corpus, &cfg, &DenseParams::from_state(&state))
                .unwrap()
                .total();
            for _ in 0..10 {
                obj.sweep(&mut state).unwrap();
                let now = loss_bruteforce(&corpus, &cfg, &DenseParams::from_state(&state))
                    .unwrap()
                    .total();
                let rise = (now - prev) / prev.abs().max(1.0);
                worst = worst.max(rise);
                ensure!(rise <= 1e-9, "{kind}: loss rose {prev} -> {now}");
                prev = now;
            }
        }
    }
    Ok(format!("60 runs x 10 sweeps, largest relative change {worst:.1e}"))
}

// 3. Each row update is the exact restricted minimizer.
fn row_update_optimality() -> Outcome {
    let mut rng = rng(3);
    let (mut max_grad, mut max_drop): (f64, f64) = (0.0, 0.0);
    let mut updates = 0;
    for _ in 0..15 {
        for kind in KINDS {
            let corpus = random_corpus(&mut rng, 12, 12);
            let cfg = random_config(&mut rng, kind, 4);
            let mut state = random_state(&mut rng, &corpus, &cfg);
            let obj = Objective::new(&corpus, &cfg).unwrap();
            // move off the initialization first
            obj.sweep(&mut state).unwrap();
            let mut blocks = vec![(Block::Items, corpus.n_items()), (Block::Words, corpus.n_words())];
            if kind == ModelKind::ZslMe {
                blocks.push((Block::Context, corpus.n_items()));
            }
            for (block, rows) in blocks {
                let row = rng.gen_range(0..rows);
                let x = obj.update_row(&mut state, block, row).unwrap();
                updates += 1;
                let mut p = DenseParams::from_state(&state);
                p.block_mut(block).row_mut(row).copy_from_slice(&x);
                let loss = |p: &DenseParams| loss_bruteforce(&corpus, &cfg, p).unwrap().total();
                let base = loss(&p);
                let h = 1e-5;
                for c in 0..x.len() {
                    let mut plus = p.clone();
                    plus.block_mut(block).row_mut(row)[c] += h;
                    let mut minus = p.clone();
                    minus.block_mut(block).row_mut(row)[c] -= h;
                    let g = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    max_grad = max_grad.max(g.abs());
                }
                for _ in 0..20 {
                    let mut q = p.clone();
                    for v in q.block_mut(block).row_mut(row) {
                        *v += if rng.gen_bool(0.5) { 1e-3 } else { -1e-3 };
                    }
                    max_drop = max_drop.max(base - loss(&q));
                }
            }
        }
    }
    ensure!(max_grad <= 1e-5, "gradient max-norm {max_grad:e}");
    ensure!(max_drop <= 1e-10, "a probe reduced the loss by {max_drop:e}");
    Ok(format!(
        "{updates} updates, gradient max-norm {max_grad:.1e}, largest probe drop {max_drop:.1e}"
    ))
}

fn synthetic_config(kind: ModelKind, dim: usize, lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        kind,
        dim,
        lambda,
        seed,
        ..TrainConfig::default()
    }
}

// Smallest held-out recall@10 advantage of ZSL_TE over STL accepted on the
// 40-item fixture. Calibration run (seed 1, d=8, defaults otherwise):
// ZSL_TE 1.000, STL 0.100.
const TRANSFER_MARGIN: f64 = 0.45;

// 4. ZSL_TE > ZSL_ME > STL on reconstruction; ZSL_TE transfers to held-out
// cross-cluster queries.
fn semantic_transfer() -> Outcome {
    let s = make_synthetic_transfer_corpus(1, 40, &SyntheticSpec::default()).unwrap();
    let mut rec = BTreeMap::new();
    let mut held = BTreeMap::new();
    for kind in KINDS {
        let (state, _) = train_sl_model(&s.corpus, &synthetic_config(kind, 8, 4.0, 1)).unwrap();
        rec.insert(kind.name(), reconstruction_recall(&state, &s.corpus.graph, ScoreMode::Cosine, true).unwrap().mean);
        held.insert(kind.name(), recall_at_k(&state, &s.held_out, 10, ScoreMode::Cosine).unwrap().recall);
    }
    let (stl, me, te) = (rec["stl"], rec["zsl_me"], rec["zsl_te"]);
    let gap = held["zsl_te"] - held["stl"];
    let detail = format!(
        "reconstruction STL {stl:.3} < ZSL_ME {me:.3} < ZSL_TE {te:.3}; held-out R@10 gap {gap:.3} (margin {TRANSFER_MARGIN})"
    );
    ensure!(te > me && me > stl, "ordering violated: {detail}");
    ensure!(gap >= TRANSFER_MARGIN, "transfer gap too small: {detail}");
    Ok(detail)
}

fn large_synthetic() -> SyntheticCorpus {
    let spec = SyntheticSpec {
        topics: 200,
        ..SyntheticSpec::default()
    };
    make_synthetic_transfer_corpus(5, 10_000, &spec).unwrap()
}

// 5. Random embeddings sit near k/n; trained ZSL_TE is far above it.
fn random_baseline() -> Outcome {
    let s = large_synthetic();
    let g = &s.corpus.graph;
    let n = s.corpus.n_items();
    let scored: Vec<usize> = (0..n).filter(|&i| g.row_len(i) > 0).collect();
    let expected =
        scored.iter().map(|&i| g.row_len(i) as f64 / (n - 1) as f64).sum::<f64>() / scored.len() as f64;
    let random = init_blocks(ModelKind::ZslTe, 32, s.corpus.n_words(), n, 99, 0.1).unwrap();
    let r = reconstruction_recall(&random, g, ScoreMode::Cosine, true).unwrap().mean;
    let (trained, _) = train_sl_model(&s.corpus, &synthetic_config(ModelKind::ZslTe, 32, 0.5, 5)).unwrap();
    let t = reconstruction_recall(&trained, g, ScoreMode::Cosine, true).unwrap().mean;
    let detail = format!("k/n {expected:.2e}, random {r:.2e}, ZSL_TE {t:.2e} ({:.0}x)", t / expected);
    ensure!(r <= 3.0 * expected && r >= expected / 3.0, "random not within 3x: {detail}");
    ensure!(t >= 50.0 * expected, "trained below 50x: {detail}");
    Ok(detail)
}

// 6. Interleaving ZSL_TE into SMC recovers pairs SMC never saw.
fn ensemble_trend() -> Outcome {
    let spec = SyntheticSpec {
        topics: 40,
        ..SyntheticSpec::default()
    };
    let s = make_synthetic_transfer_corpus(6, 400, &spec).unwrap();
    let smc_cfg = SmcConfig {
        dim: 16,
        negatives: 50,
        batch_size: 32,
        steps: 6000,
        seed: 6,
        ..SmcConfig::default()
    };
    let smc = train_smc(&s.in_cluster, &s.corpus, &smc_cfg).unwrap();
    let (zsl, _) = train_sl_model(&s.corpus, &synthetic_config(ModelKind::ZslTe, 16, 0.5, 6)).unwrap();
    let mut eval = s.in_cluster.clone();
    eval.records.extend(s.held_out.records.iter().cloned());
    let k = 20;
    let alone = recall_at_k(&smc, &eval, k, ScoreMode::Dot).unwrap().recall;
    let both = ensemble_recall_at_k((&smc, ScoreMode::Dot), (&zsl, ScoreMode::Cosine), &eval, k, k / 2)
        .unwrap()
        .recall;
    let seen = recall_at_k(&smc, &s.in_cluster, k, ScoreMode::Dot).unwrap().recall;
    let detail = format!(
        "R@{k} over {} pairs: SMC {alone:.3} (on its training pairs {seen:.3}), ensemble {both:.3}",
        eval.len()
    );
    ensure!(both >= alone, "{detail}");
    Ok(detail)
}

// 7. Norm rescaling leaves cosine rankings alone but changes dot rankings.
fn rescaling_properties() -> Outcome {
    let mut rng = rng(7);
    let (n, d) = (60, 6);
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize| {
        Matrix::from_vec(rows, d, (0..rows * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
    };
    let target = gauss(&mut rng, n);
    let mut source = gauss(&mut rng, n);
    for i in 0..n {
        let s = 0.1 + 5.0 * (i % 7) as f32;
        source.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    let rescaled = rescale_item_norms(&target, &source).unwrap().items;
    let queries = 200;
    for _ in 0..queries {
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = retrieve_topk(&q, &target, 10, ScoreMode::Cosine, None).unwrap();
        let b = retrieve_topk(&q, &rescaled, 10, ScoreMode::Cosine, None).unwrap();
        ensure!(
            a.items().eq(b.items()),
            "cosine ranking changed under rescaling"
        );
    }
    // popularity-skewed fixture: item 1 is slightly off the query but popular
    let target = Matrix::from_vec(2, 2, vec![1.0f32, 0.0, 0.9, 0.436]);
    let source = Matrix::from_vec(2, 2, vec![1.0f32, 0.0, 10.0, 0.0]);
    let rescaled = rescale_item_norms(&target, &source).unwrap().items;
    let cos = retrieve_topk(&[1.0, 0.0], &target, 2, ScoreMode::Cosine, None).unwrap();
    let dot = retrieve_topk(&[1.0, 0.0], &rescaled, 2, ScoreMode::Dot, None).unwrap();
    ensure!(cos.items().next() == Some(0) && dot.items().next() == Some(1), "skewed fixture did not reorder");
    Ok(format!("{queries} cosine queries unchanged; skewed fixture reorders under dot"))
}

/// Full-sort ranking: score descending, index ascending.
fn oracle_rank(q: &[f64], items: &Matrix<f32>, cands: &[u32], mode: ScoreMode) -> Vec<u32> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if mode == ScoreMode::Cosine && qn == 0.0 {
        return vec![];
    }
    let mut scored: Vec<(f64, u32)> = Vec::new();
    for &c in cands {
        let v = items.row(c as usize);
        let dot: f64 = q.iter().zip(v).map(|(a, &b)| a * b as f64).sum();
        let score = match mode {
            ScoreMode::Dot => dot,
            ScoreMode::Cosine => {
                let vn = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                if vn == 0.0 {
                    continue;
                }
                dot / (qn * vn)
            }
        };
        scored.push((score, c));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|s| s.1).collect()
}

fn mean_words(words: &[u32], w: &Matrix<f32>) -> Vec<f64> {
    let mut q = vec![0.0; w.cols()];
    for &e in words {
        for (a, &x) in q.iter_mut().zip(w.row(e as usize)) {
            *a += x as f64;
        }
    }
    q.iter().map(|x| x / words.len() as f64).collect()
}

fn small_int_matrix(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f32> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2..=2) as f32).collect())
}

// 8. Metrics agree with set arithmetic over a full sort.
fn metric_correctness() -> Outcome {
    let mut rng = rng(8);
    for inst in 0..100 {
        let n = rng.gen_range(2..9);
        let m = rng.gen_range(1..6);
        let d = rng.gen_range(1..4);
        let mode = if inst % 2 == 0 { ScoreMode::Dot } else { ScoreMode::Cosine };
        let mut state = init_blocks(ModelKind::ZslTe, d, m, n, 0, 0.0).unwrap();
        state.items = small_int_matrix(&mut rng, n, d);
        state.words = small_int_matrix(&mut rng, m, d);

        // reconstruction
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in 0..n as u32 {
                if i != j && rng.gen_bool(0.3) {
                    edges.push((i, j, 1));
                }
            }
        }
        let graph = CorrelationGraph::from_counted_edges(n, edges, 250).unwrap();
        let got = reconstruction_recall(&state, &graph, mode, true).unwrap();
        let mut want = Vec::new();
        for i in 0..n {
            let truth: HashSet<u32> = graph.neighbors(i).iter().copied().collect();
            if truth.is_empty() {
                continue;
            }
            let cands: Vec<u32> = (0..n as u32).filter(|&l| l as usize != i).collect();
            let q: Vec<f64> = state.items.row(i).iter().map(|&x| x as f64).collect();
            let top: Vec<u32> = oracle_rank(&q, &state.items, &cands, mode).into_iter().take(truth.len()).collect();
            let hits = top.iter().filter(|l| truth.contains(l)).count();
            want.push((i as u32, hits as f64 / truth.len() as f64));
        }
        ensure!(got.per_entry == want, "reconstruction mismatch on instance {inst}");

        // pooled
        let queries: Vec<LabeledQuery> = (0..rng.gen_range(1..4))
            .map(|_| {
                let mut relevant: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.4)).collect();
                if relevant.is_empty() {
                    relevant.push(rng.gen_range(0..n as u32));
                }
                LabeledQuery {
                    words: (0..rng.gen_range(1..3)).map(|_| rng.gen_range(0..m as u32)).collect(),
                    relevant,
                }
            })
            .collect();
        let set = LabeledSet {
            name: "s".into(),
            queries,
        };
        let got = pooled_recall(&state, &set, mode).unwrap();
        let pool: Vec<u32> = set.queries.iter().flat_map(|q| q.relevant.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let mut want = Vec::new();
        for (qi, query) in set.queries.iter().enumerate() {
            let q = mean_words(&query.words, &state.words);
            let top: Vec<u32> = oracle_rank(&q, &state.items, &pool, mode).into_iter().take(query.relevant.len()).collect();
            ensure!(top.iter().all(|t| pool.contains(t)), "pool escaped");
            let hits = top.iter().filter(|t| query.relevant.contains(t)).count();
            want.push((qi as u32, hits as f64 / query.relevant.len() as f64));
        }
        ensure!(got.per_entry == want, "pooled mismatch on instance {inst}: {:?} vs {want:?}", got.per_entry);

        // recall@K and monotonicity in K
        let pairs = QueryItemPairs {
            records: (0..6)
                .map(|_| {
                    let words: Vec<u32> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..m as u32)).collect();
                    QueryRecord {
                        unigram_len: words.len(),
                        words,
                        target: rng.gen_range(0..n as u32),
                    }
                })
                .collect(),
        };
        let all: Vec<u32> = (0..n as u32).collect();
        let mut prev = 0.0;
        for k in 1..=n {
            let got = recall_at_k(&state, &pairs, k, mode).unwrap();
            let (mut hits, mut total) = (0, 0);
            for r in &pairs.records {
                let q = mean_words(&r.words, &state.words);
                let ranked = oracle_rank(&q, &state.items, &all, mode);
                if mode == ScoreMode::Cosine && q.iter().all(|&x| x == 0.0) {
                    continue;
                }
                total += 1;
                hits += ranked.iter().take(k).any(|&t| t == r.target) as usize;
            }
            ensure!(got.hits == hits && got.total == total, "recall@{k} mismatch on instance {inst}");
            ensure!(got.recall >= prev, "recall@K decreased at K={k}");
            prev = got.recall;
        }
    }
    Ok("100 random instances match the full-sort oracle; recall@K monotone".into())
}

fn dir_files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

// 9. Determinism, persistence and warm starts.
fn determinism_and_persistence() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let s = make_synthetic_transfer_corpus(9, 40, &SyntheticSpec::default()).unwrap();
    let cfg = synthetic_config(ModelKind::ZslMe, 8, 4.0, 9);
    for kind in KINDS {
        let cfg = TrainConfig { kind, ..cfg.clone() };
        let (a, _) = train_sl_model(&s.corpus, &cfg).unwrap();
        let (b, _) = train_sl_model(&s.corpus, &cfg).unwrap();
        let (da, db) = (tmp.path().join(format!("{kind}-a")), tmp.path().join(format!("{kind}-b")));
        save_model(&a, &s.corpus, &da).unwrap();
        save_model(&b, &s.corpus, &db).unwrap();
        ensure!(dir_files(&da) == dir_files(&db), "{kind}: model directories differ");
        ensure!(load_model(&da).unwrap().bit_eq(&a), "{kind}: roundtrip not bit-exact");
    }

    let (old_state, _) = train_sl_model(&s.corpus, &cfg).unwrap();
    let grown = make_synthetic_transfer_corpus(19, 48, &SyntheticSpec::default()).unwrap();
    let mut ext = warm_start_extend(&old_state, &s.corpus, &grown.corpus, true).unwrap();
    for (i, id) in s.corpus.items.ids().iter().enumerate() {
        let j = grown.corpus.items.get(id).unwrap() as usize;
        ensure!(
            ext.items.row(j).iter().zip(old_state.items.row(i)).all(|(a, b)| a.to_bits() == b.to_bits()),
            "item {id} not retained bit for bit"
        );
    }
    for (e, id) in s.corpus.vocab.ids().iter().enumerate() {
        if let Some(f) = grown.corpus.vocab.get(id) {
            ensure!(
                ext.words.row(f as usize).iter().zip(old_state.words.row(e)).all(|(a, b)| a.to_bits() == b.to_bits()),
                "word {id} not retained bit for bit"
            );
        }
    }
    let mut trace = LossTrace::default();
    continue_training(&mut ext, &grown.corpus, &cfg, 2, &mut trace).unwrap();
    let totals = trace.totals();
    ensure!(totals[2] <= totals[0] * (1.0 + 1e-9), "refresh raised loss: {totals:?}");
    Ok(format!(
        "identical directories for 3 kinds; refresh loss {:.4} -> {:.4}",
        totals[0], totals[2]
    ))
}

// 10. Full-candidate sampled softmax is the exact softmax.
fn smc_sanity() -> Outcome {
    let mut rng = rng(10);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let n = rng.gen_range(2..=10);
        let m = rng.gen_range(1..6);
        let items: IdIndex = (0..n).map(|i| format!("i{i}")).collect();
        let vocab: IdIndex = (0..m).map(|i| format!("w{i}")).collect();
        let corpus = Corpus::from_parts(items, vocab, vec![vec![]; n], CorrelationGraph::empty(n, 1)).unwrap();
        let pairs = QueryItemPairs {
            records: (0..rng.gen_range(1..12))
                .map(|_| {
                    let words: Vec<u32> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..m as u32)).collect();
                    QueryRecord {
                        unigram_len: words.len(),
                        words,
                        target: rng.gen_range(0..n as u32),
                    }
                })
                .collect(),
        };
        let cfg = SmcConfig {
            dim: rng.gen_range(1..5),
            negatives: n - 1,
            batch_size: 4,
            steps: 0,
            seed: inst,
            init_std: 0.7,
            ..SmcConfig::default()
        };
        let mut trainer = SmcTrainer::new(&pairs, &corpus, &cfg).unwrap();
        trainer.run(3).unwrap();
        let batch: Vec<usize> = (0..pairs.len()).collect();
        let state = trainer.state().clone();
        let got = trainer.sampled_batch_gradient(&batch);

        let d = cfg.dim;
        let mut gv = vec![vec![0.0; d]; n];
        let mut gw = vec![vec![0.0; d]; m];
        let bsz = batch.len() as f64;
        for r in &pairs.records {
            let q = mean_words(&r.words, &state.words);
            let z: Vec<f64> = (0..n)
                .map(|l| state.items.row(l).iter().zip(&q).map(|(&v, q)| v as f64 * q).sum())
                .collect();
            let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
            let sum: f64 = z.iter().map(|x| (x - zmax).exp()).sum();
            let mut gq = vec![0.0; d];
            for l in 0..n {
                let delta = (z[l] - zmax).exp() / sum - (l as u32 == r.target) as u8 as f64;
                for c in 0..d {
                    gv[l][c] += delta * q[c] / bsz;
                    gq[c] += delta * state.items.row(l)[c] as f64;
                }
            }
            for &e in &r.words {
                for c in 0..d {
                    gw[e as usize][c] += gq[c] / r.words.len() as f64 / bsz;
                }
            }
        }
        let zero = vec![0.0; d];
        for l in 0..n {
            let g = got.items.get(&(l as u32)).unwrap_or(&zero);
            worst = g.iter().zip(&gv[l]).fold(worst, |w, (a, b)| w.max((a - b).abs()));
        }
        for e in 0..m {
            let g = got.words.get(&(e as u32)).unwrap_or(&zero);
            worst = g.iter().zip(&gw[e]).fold(worst, |w, (a, b)| w.max((a - b).abs()));
        }

        let uniform = init_blocks(ModelKind::Smc, d, m, n, 0, 0.0).unwrap();
        let ce = ce_loss_exact(&uniform, &pairs).unwrap();
        ensure!((ce - (n as f64).ln()).abs() <= 1e-12, "uniform CE {ce} vs ln {n}");
    }
    ensure!(worst <= 1e-6, "gradient gap {worst:e}");
    Ok(format!("20 instances, worst gradient gap {worst:.1e}; uniform CE = ln n"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("loss-oracle equivalence", loss_oracle_equivalence),
        ("coordinate descent monotonicity", cd_monotonicity),
        ("row-update optimality", row_update_optimality),
        ("semantic-transfer trend", semantic_transfer),
        ("random-baseline sanity", random_baseline),
        ("ensemble trend", ensemble_trend),
        ("rescaling properties", rescaling_properties),
        ("metric correctness", metric_correctness),
        ("determinism and persistence", determinism_and_persistence),
        ("SMC sanity", smc_sanity),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
