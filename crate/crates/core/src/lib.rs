//! Set-compositional retrieval toolkit: benchmark generation over
//! attribute-list corpora, lexical and algebraic sparse retrieval, curated
//! re-ranking pools, and stratified evaluation.

pub mod benchgen;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod par;
pub mod pipeline;
pub mod postings;
pub mod query;
pub mod rerank;
pub mod retrieval;
pub mod trec;

pub use error::{Error, Result};
pub use par::Parallelism;
