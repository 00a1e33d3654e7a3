//! One-stage listwise reranker.
//!
//! The crate scores every candidate ordering of a slate in a single model
//! pass: an item-level representation module turns raw features into
//! per-item semantic embeddings, a tree-structured context extraction module
//! summarizes nested sub-slates with permutation-invariant set attention,
//! and a context cache reuses those summaries across all orderings so the
//! full permutation space can be scored at a cost that grows with the number
//! of distinct sub-slates rather than the number of orderings.
//!
//! Entry points:
//! - [`model`]: configuration and the learnable parameter set
//! - [`rerank`]: score and pick the best ordering for a candidate slate
//! - [`training`]: losses, the manual backward pass, and the train loop
//! - [`datagen`]: synthetic request generator with a ground-truth oracle
//! - [`metrics`]: AUC / grouped AUC / hit-ratio evaluation
//! - [`cli`]: the `treerank` command-line surface
//!
//! The `examples/` directory contains a runnable walkthrough per capability.

pub mod ccm;
pub mod cli;
pub mod data;
pub mod error;
pub mod irm;
pub mod metrics;
pub mod model;
pub mod tcem;
pub mod telemetry;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
