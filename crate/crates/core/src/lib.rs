//! Cross-modal zero-shot classification engine: a skeleton VAE with a
//! semantic-related and a semantic-irrelevant head, a text VAE, cross
//! reconstruction alignment, an adversarial total-correlation penalty, and
//! seen/unseen/domain classifiers for ZSL and GZSL evaluation.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose; dense
// numeric loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ablation;
pub mod classifiers;
pub mod config;
pub mod container;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod trainer;

pub use config::{RunConfig, Variant};
pub use error::{Error, Result};
pub use tensor::{FeatureMatrix, Matrix, Real};
