//! Translate per-frame video features into (subject, verb, object) triplets
//! with a three-level stack of linear classifiers.
//!
//! * [`saliency`] picks salient features and frames and builds the
//!   foreground and foreground-background descriptors.
//! * [`svm`] trains the linear models behind every node of the stack.
//! * [`story`] wires the levels together: L1 on foreground descriptors, L2 on
//!   foreground-background descriptors, L3 on sparse top-c L2 responses
//!   (optionally per temporal part).
//! * [`evaluation`] scores predictions by exact match and Wu-Palmer similarity.
//! * [`synthgen`] generates datasets with planted ground truth.

pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod evaluation;
pub mod saliency;
pub mod story;
pub mod svm;
pub mod synthgen;

pub use error::{Error, Result};
