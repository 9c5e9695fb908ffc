//! Model parameter blocks: configuration, deterministic initialization,
//! warm-start extension and the on-disk model directory.
//!
//! A model directory holds `meta.json`, `W.bin`, `V.bin`, `U.bin` (ZSL_ME
//! only) in the [`crate::binfmt`] matrix format, and copies of the corpus
//! `vocab.tsv` / `items.tsv`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binfmt::{self, AtomicDir};
use crate::corpus::{load_id_index, write_id_index, Corpus, EmptyWeightRule, IdIndex};
use crate::encoder::ScoreMode;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::smc::SmcConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Text features predict the item; no graph.
    Stl,
    /// Text features and neighbor context vectors both predict the item.
    ZslMe,
    /// Neighbors, encoded from their text, predict the item.
    ZslTe,
    /// Supervised multiclass model trained on (query, item) pairs.
    Smc,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stl => "stl",
            ModelKind::ZslMe => "zsl_me",
            ModelKind::ZslTe => "zsl_te",
            ModelKind::Smc => "smc",
        }
    }

    pub fn has_context_block(self) -> bool {
        self == ModelKind::ZslMe
    }

    pub fn default_score_mode(self) -> ScoreMode {
        match self {
            ModelKind::Smc => ScoreMode::Dot,
            _ => ScoreMode::Cosine,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Ok(ModelKind::Stl),
            "zsl_me" | "zsl-me" => Ok(ModelKind::ZslMe),
            "zsl_te" | "zsl-te" => Ok(ModelKind::ZslTe),
            "smc" => Ok(ModelKind::Smc),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

/// How the text-predicts-item task treats an item's words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task1Mode {
    /// Every (word, item) incidence is its own positive; all other
    /// (word, item) pairs are implicit negatives.
    #[default]
    PerWord,
    /// The item's BOW encoding is the single positive input; other items'
    /// encodings are implicit negatives.
    Encoded,
}

/// Square-loss training configuration shared by STL, ZSL_ME and ZSL_TE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    /// Weight of implicit (unobserved) pairs.
    pub omega0: f64,
    /// Frobenius regularization coefficient over every block.
    pub lambda: f64,
    pub sweeps: usize,
    /// Apply the graph row/column weights.
    pub use_weights: bool,
    /// Also apply them to implicit pairs (otherwise positives only).
    pub weight_negatives: bool,
    /// Drop `(i, i)` from the neighbor task's implicit pairs.
    pub exclude_self_negative: bool,
    pub init_std: f64,
    pub seed: u64,
    pub task1_mode: Task1Mode,
    pub empty_weight: EmptyWeightRule,
    /// Solve the rows of a block in parallel against the block's pass-start
    /// state. Off means sequential Gauss-Seidel, which is guaranteed monotone.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::ZslTe,
            dim: 200,
            omega0: 0.001,
            lambda: 4.0,
            sweeps: 10,
            use_weights: true,
            weight_negatives: true,
            exclude_self_negative: false,
            init_std: 0.1,
            seed: 0,
            task1_mode: Task1Mode::PerWord,
            empty_weight: EmptyWeightRule::MaxRaw,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            ..Default::default()
        }
    }

    /// Checks the invariants required for training.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0 <= 1.0) {
            return Err(Error::Config(format!(
                "omega0 must lie in (0, 1], got {}",
                self.omega0
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Trained (or initialized) parameters plus the metadata persisted with them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub kind: ModelKind,
    pub dim: usize,
    pub seed: u64,
    pub sweep_count: usize,
    pub score_mode: ScoreMode,
    pub init_std: f64,
    pub train_config: Option<TrainConfig>,
    pub smc_config: Option<SmcConfig>,
    /// Word vectors, one row per vocabulary entry.
    pub words: Matrix<f32>,
    /// Item vectors.
    pub items: Matrix<f32>,
    /// Free context vectors; present only for ZSL_ME.
    pub context: Option<Matrix<f32>>,
}

impl ModelState {
    pub fn n_words(&self) -> usize {
        self.words.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    /// Equality with floats compared bit for bit.
    pub fn bit_eq(&self, other: &ModelState) -> bool {
        let ctx = match (&self.context, &other.context) {
            (Some(a), Some(b)) => a.bit_eq(b),
            (None, None) => true,
            _ => false,
        };
        ctx && self.words.bit_eq(&other.words)
            && self.items.bit_eq(&other.items)
            && self.kind == other.kind
            && self.dim == other.dim
            && self.seed == other.seed
            && self.sweep_count == other.sweep_count
            && self.score_mode == other.score_mode
            && self.init_std.to_bits() == other.init_std.to_bits()
            && self.train_config == other.train_config
            && self.smc_config == other.smc_config
    }

    pub fn all_finite(&self) -> bool {
        self.words.is_finite()
            && self.items.is_finite()
            && self.context.as_ref().map_or(true, Matrix::is_finite)
    }
}

/// Block tags mixed into the initialization key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Words,
    Items,
    Context,
}

impl Block {
    fn tag(self) -> u64 {
        match self {
            Block::Words => 0x57,
            Block::Items => 0x56,
            Block::Context => 0x55,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Words => "W",
            Block::Items => "V",
            Block::Context => "U",
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw keyed by `(seed, block, row, col)`; independent of
/// generation order and platform.
pub fn keyed_gaussian(seed: u64, block: Block, row: u64, col: u64) -> f64 {
    let key = splitmix(seed ^ splitmix(block.tag() ^ splitmix(row ^ splitmix(col))));
    let a = splitmix(key);
    let b = splitmix(key ^ 0xA5A5_A5A5_A5A5_A5A5);
    // 53-bit uniforms; u1 in (0, 1]
    let u1 = ((a >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn init_row(seed: u64, block: Block, row: usize, std: f64, out: &mut [f32]) {
    for (c, x) in out.iter_mut().enumerate() {
        *x = (std * keyed_gaussian(seed, block, row as u64, c as u64)) as f32;
    }
}

pub fn init_block(seed: u64, block: Block, rows: usize, dim: usize, std: f64) -> Matrix<f32> {
    let mut m = Matrix::zeros(rows, dim);
    for r in 0..rows {
        init_row(seed, block, r, std, m.row_mut(r));
    }
    m
}

/// Fresh Gaussian blocks sized for `kind` over `n_words` words and `n_items`
/// items.
pub fn init_blocks(
    kind: ModelKind,
    dim: usize,
    n_words: usize,
    n_items: usize,
    seed: u64,
    init_std: f64,
) -> Result<ModelState> {
    if dim == 0 {
        return Err(Error::Config("dim must be at least 1".into()));
    }
    if init_std == 0.0 {
        log::warn!("init_std is 0: every block starts at zero");
    }
    Ok(ModelState {
        kind,
        dim,
        seed,
        sweep_count: 0,
        score_mode: kind.default_score_mode(),
        init_std,
        train_config: None,
        smc_config: None,
        words: init_block(seed, Block::Words, n_words, dim, init_std),
        items: init_block(seed, Block::Items, n_items, dim, init_std),
        context: kind
            .has_context_block()
            .then(|| init_block(seed, Block::Context, n_items, dim, init_std)),
    })
}

pub fn init_model_state(config: &TrainConfig, corpus: &Corpus) -> Result<ModelState> {
    let mut s = init_blocks(
        config.kind,
        config.dim,
        corpus.n_words(),
        corpus.n_items(),
        config.seed,
        config.init_std,
    )?;
    s.train_config = Some(config.clone());
    Ok(s)
}

fn refresh_seed(state: &ModelState) -> u64 {
    splitmix(state.seed ^ 0x7265_6672_6573_6821 ^ splitmix(state.sweep_count as u64))
}

fn remap(
    old_rows: &Matrix<f32>,
    old: &IdIndex,
    new: &IdIndex,
    seed: u64,
    block: Block,
    std: f64,
) -> Matrix<f32> {
    let mut m = Matrix::zeros(new.len(), old_rows.cols());
    for (j, id) in new.ids().iter().enumerate() {
        match old.get(id) {
            Some(i) => m.row_mut(j).copy_from_slice(old_rows.row(i as usize)),
            None => init_row(seed, block, j, std, m.row_mut(j)),
        }
    }
    m
}

/// Re-indexes `state` from `old` onto `new`. Rows of retained ids are copied
/// bit for bit; rows of new ids get a fresh draw under a sub-seed. Ids missing
/// from `new` are refused unless `prune` is set.
pub fn warm_start_extend(
    state: &ModelState,
    old: &Corpus,
    new: &Corpus,
    prune: bool,
) -> Result<ModelState> {
    if state.n_items() != old.n_items() || state.n_words() != old.n_words() {
        return Err(Error::Shape(format!(
            "model has {} words / {} items, old corpus {} / {}",
            state.n_words(),
            state.n_items(),
            old.n_words(),
            old.n_items()
        )));
    }
    if !prune {
        let removed: Vec<String> = old
            .items
            .ids()
            .iter()
            .filter(|id| new.items.get(id).is_none())
            .map(|id| format!("item {id}"))
            .chain(
                old.vocab
                    .ids()
                    .iter()
                    .filter(|t| new.vocab.get(t).is_none())
                    .map(|t| format!("word {t}")),
            )
            .collect();
        if !removed.is_empty() {
            return Err(Error::RemovedIds(removed));
        }
    }
    let seed = refresh_seed(state);
    let std = state.init_std;
    Ok(ModelState {
        words: remap(&state.words, &old.vocab, &new.vocab, seed, Block::Words, std),
        items: remap(&state.items, &old.items, &new.items, seed, Block::Items, std),
        context: state
            .context
            .as_ref()
            .map(|u| remap(u, &old.items, &new.items, seed, Block::Context, std)),
        ..state.clone()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    version: u32,
    kind: ModelKind,
    d: usize,
    m: usize,
    n: usize,
    seed: u64,
    sweep_count: usize,
    score_mode: ScoreMode,
    init_std: f64,
    #[serde(default)]
    train_config: Option<TrainConfig>,
    #[serde(default)]
    smc_config: Option<SmcConfig>,
}

/// Writes the model directory atomically, replacing any existing one.
pub fn save_model(state: &ModelState, corpus: &Corpus, dir: &Path) -> Result<()> {
    save_model_with(state, corpus, dir, &[])
}

/// [`save_model`], also writing `extra` `(file name, contents)` pairs into
/// the same directory before it is committed.
pub fn save_model_with(state: &ModelState, corpus: &Corpus, dir: &Path, extra: &[(&str, &[u8])]) -> Result<()> {
    if corpus.n_items() != state.n_items() || corpus.n_words() != state.n_words() {
        return Err(Error::Shape("corpus ids do not match model rows".into()));
    }
    let meta = ModelMeta {
        version: MODEL_FORMAT_VERSION,
        kind: state.kind,
        d: state.dim,
        m: state.n_words(),
        n: state.n_items(),
        seed: state.seed,
        sweep_count: state.sweep_count,
        score_mode: state.score_mode,
        init_std: state.init_std,
        train_config: state.train_config.clone(),
        smc_config: state.smc_config.clone(),
    };
    let out = AtomicDir::create(dir)?;
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    out.write("meta.json", json.as_bytes())?;
    out.write("W.bin", &binfmt::encode_matrix(&state.words)?)?;
    out.write("V.bin", &binfmt::encode_matrix(&state.items)?)?;
    if let Some(u) = &state.context {
        out.write("U.bin", &binfmt::encode_matrix(u)?)?;
    }
    out.write("vocab.tsv", write_id_index(&corpus.vocab).as_bytes())?;
    out.write("items.tsv", write_id_index(&corpus.items).as_bytes())?;
    for (name, bytes) in extra {
        out.write(name, bytes)?;
    }
    out.commit()
}

fn expect_shape(name: &str, m: &Matrix<f32>, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::Shape(format!(
            "{name} is {}x{}, meta says {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ModelState> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let version = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("version").and_then(|x| x.as_u64()));
    if let Some(v) = version.filter(|&v| v != MODEL_FORMAT_VERSION as u64) {
        return Err(Error::VersionMismatch {
            path: meta_path,
            found: v as u32,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    let words = binfmt::read_matrix(&dir.join("W.bin"))?;
    let items = binfmt::read_matrix(&dir.join("V.bin"))?;
    expect_shape("W", &words, meta.m, meta.d)?;
    expect_shape("V", &items, meta.n, meta.d)?;
    let u_path = dir.join("U.bin");
    let context = if meta.kind.has_context_block() {
        let u = binfmt::read_matrix(&u_path)?;
        expect_shape("U", &u, meta.n, meta.d)?;
        Some(u)
    } else {
        if u_path.exists() {
            return Err(Error::Shape(format!(
                "{} model directory contains U.bin",
                meta.kind
            )));
        }
        None
    };
    Ok(ModelState {
        kind: meta.kind,
        dim: meta.d,
        seed: meta.seed,
        sweep_count: meta.sweep_count,
        score_mode: meta.score_mode,
        init_std: meta.init_std,
        train_config: meta.train_config,
        smc_config: meta.smc_config,
        words,
        items,
        context,
    })
}

/// Loads a model and checks that it is of the expected kind.
pub fn load_model_expecting(dir: &Path, kind: ModelKind) -> Result<ModelState> {
    let state = load_model(dir)?;
    if state.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.to_string(),
            found: state.kind.to_string(),
        });
    }
    Ok(state)
}

/// The item and word ids stored alongside a model.
pub fn load_model_ids(dir: &Path) -> Result<Corpus> {
    Ok(Corpus::ids_only(
        load_id_index(&dir.join("items.tsv"))?,
        load_id_index(&dir.join("vocab.tsv"))?,
    ))
}
