//! Joint argument mining over pre-segmented argumentative text.
//!
//! Given documents whose argument components (ACs) are already marked as
//! token spans, the model jointly predicts component types, whether a
//! directed relation holds for every ordered component pair, and the type
//! of each relation. Components are mean-pooled from token
//! representations, refined by self-attention over the components of one
//! document, and paired with a learned signed-distance feature before
//! relation classification.
//!
//! The crate is `no_std` (with `alloc`). File formats, checkpoints and the
//! command-line front end live in the `argmine` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

mod error;
pub use error::*;

pub mod ac_classifier;
pub mod corpus;
pub mod encoder;
pub mod evaluator;
pub mod model;
pub mod numerics;
pub mod relation;
pub mod trainer;

pub use corpus::{ComponentSpan, Corpus, Document, LabelSchema, Split};
pub use evaluator::MetricsReport;
pub use model::{ModelConfig, ModelParams, ParamGroup};
pub use numerics::{Real, Tensor};
pub use relation::PredictionGraph;
pub use trainer::TrainConfig;
