//! Passage-level vertical search.
//!
//! A sharded BM25 index produces first-stage candidates which a trainable
//! cross-scorer reranks. Training labels are generated without annotation by
//! lexicon-filtering a query set and mining BM25 hard negatives. The crate
//! also contains the serving pipeline, TREC-style evaluation, and a
//! closed-loop load generator.

pub mod error;
pub mod eval;
pub mod corpus;
pub mod index;
pub mod l1;
pub mod l2;
pub mod loadgen;
pub mod selfsup;
pub mod service;
pub mod textproc;

pub use error::{Error, Result};
