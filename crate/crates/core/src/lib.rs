//! Context-calibrated verification scores for unit-norm embeddings.
//!
//! A raw cosine score between two embeddings is re-weighted by how crowded each
//! embedding's neighborhood is: the similarities to its `k` nearest anchors (its
//! *support set*) give a density term, and the calibrated score is
//!
//! ```text
//! score = exp(tau * <f1, f2>) * (F(f1) + F(f2)),   F(f) = 1 / sum_i exp(tau * s_i)
//! ```
//!
//! Support sets come either from a top-k search over an anchor embedding set
//! ([`index`], used by [`dao::verify_pair`]) or from a small regression network that
//! predicts `F` directly ([`ssr`]).

pub mod dao;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod index;
mod io;
pub mod pairs;
pub mod preset;
pub mod rng;
pub mod ssr;
pub mod store;
pub mod sweep;
pub mod synth;

pub use embedding::{cosine, normalize, Embedding};
pub use error::{Error, Result};
pub use index::{AnchorIndex, SupportSet};
pub use io::file_digest;
pub use pairs::{Pair, PairList};
pub use store::EmbeddingStore;
