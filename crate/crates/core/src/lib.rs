//! Zero-shot query-to-item retrieval embeddings.
//!
//! Word and item vectors are learned from an item-item correlation graph and
//! item text, without any query-item supervision, then used to serve
//! bag-of-words queries by exact top-K search.
//!
//! The main entry points:
//!
//! - [`corpus`]: ingest item text and consumption sequences into a [`Corpus`].
//! - [`sl`]: train STL, ZSL_ME and ZSL_TE models by exact coordinate descent
//!   on the weighted square loss.
//! - [`smc`]: the supervised sampled-softmax baseline.
//! - [`retrieval`] and [`eval`]: top-K search, the interleaved ensemble, and
//!   the recall metrics.
//! - [`store`]: model state, initialization, warm starts and persistence.

pub mod binfmt;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod formats;
pub mod linalg;
pub mod matrix;
pub mod retrieval;
pub mod sl;
pub mod smc;
pub mod store;

pub use corpus::{Corpus, CorrelationGraph};
pub use encoder::ScoreMode;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use retrieval::{RankedEntry, RankedList};
pub use store::{ModelKind, ModelState, TrainConfig};

// The guide's code listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/sampled_softmax.md")]
    mod sampled_softmax {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/command_line.md")]
    mod command_line {}
}
