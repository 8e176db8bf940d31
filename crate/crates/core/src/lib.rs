//! Semantic non-negative matrix factorization for topic modeling.
//!
//! The term-document TF-IDF matrix and the SPPMI word-context matrix are
//! factorized separately, each with automatic rank selection. Their topic
//! bases are then merged by a second factorization, and documents are
//! regressed onto the merged topics.

pub mod config;
pub mod error;
pub mod io;
pub mod matrices;
pub mod nmf;
pub mod selection;
pub mod sparse;
pub mod split;
pub mod text;
pub mod workspace;

pub use error::{Error, ErrorClass, Result};
pub use sparse::SparseMatrix;
pub use workspace::run_split;
