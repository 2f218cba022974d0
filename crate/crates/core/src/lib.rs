//! Compositional retrieval toolkit: embedding storage, a synthetic shapes
//! benchmark, cross-space mappers and steering, optimal-transport reranking,
//! retrieval metrics and geometric diagnostics.

// `!(x >= 0.0)` style checks are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod mappers;
pub mod metrics;
pub mod numeric;
pub mod ot;
pub mod retrieval;
pub mod shapes;
pub mod store;

pub use error::{Error, Result};
pub use store::{Corpus, EmbeddingMatrix, ItemRecord, Modality, ObjectAnnotation};
