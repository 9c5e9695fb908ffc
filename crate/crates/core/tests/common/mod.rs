#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsl::corpus::{CorrelationGraph, IdIndex};
use zsl::store::{init_blocks, Task1Mode};
use zsl::{Corpus, ModelKind, ModelState, TrainConfig};

pub const KINDS: [ModelKind; 3] = [ModelKind::Stl, ModelKind::ZslMe, ModelKind::ZslTe];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random corpus with up to `max_n` items and `max_m` words. Some items have
/// no words and some rows no neighbors; word lists may repeat words.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> Corpus {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let item_words: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let k = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..=4) };
            (0..k).map(|_| rng.gen_range(0..m as u32)).collect()
        })
        .collect();
    let density = rng.gen_range(0.0..0.3);
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in 0..n as u32 {
            if i != j && rng.gen_bool(density) {
                edges.push((i, j, rng.gen_range(1..4)));
            }
        }
    }
    let graph = CorrelationGraph::from_counted_edges(n, edges, 250).unwrap();
    let items: IdIndex = (0..n).map(|i| format!("item{i}")).collect();
    let vocab: IdIndex = (0..m).map(|e| format!("word{e}")).collect();
    Corpus::from_parts(items, vocab, item_words, graph).unwrap()
}

pub fn random_config(rng: &mut ChaCha8Rng, kind: ModelKind, max_d: usize) -> TrainConfig {
    let omegas = [0.001, 0.1, 1.0];
    TrainConfig {
        kind,
        dim: rng.gen_range(1..=max_d),
        omega0: omegas[rng.gen_range(0..3)],
        lambda: if rng.gen_bool(0.5) { 0.0 } else { 4.0 },
        use_weights: rng.gen_bool(0.5),
        weight_negatives: rng.gen_bool(0.7),
        exclude_self_negative: rng.gen_bool(0.5),
        task1_mode: if rng.gen_bool(0.5) {
            Task1Mode::PerWord
        } else {
            Task1Mode::Encoded
        },
        seed: rng.gen(),
        ..TrainConfig::default()
    }
}

pub fn random_state(rng: &mut ChaCha8Rng, corpus: &Corpus, config: &TrainConfig) -> ModelState {
    init_blocks(
        config.kind,
        config.dim,
        corpus.n_words(),
        corpus.n_items(),
        rng.gen(),
        rng.gen_range(0.1..1.5),
    )
    .unwrap()
}
