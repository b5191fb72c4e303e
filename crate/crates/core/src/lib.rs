//! Cross-model feature universality: sparse-autoencoder encoding, feature
//! correlation and matching, and representational similarity of matched
//! feature spaces against random-pairing baselines.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, streaming over
//! on-disk tensors and the command-line driver live in the `featalign` crate.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod correlate;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod matching;
pub mod math;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod rsa;
pub mod sae;
pub mod subspace;
pub mod svcca;
pub mod synth;

pub use baseline::{random_pairing_null, BaselineReport, PairedScore};
pub use correlate::{correlation_matrix, CorrStats, Metric, ScoreMatrix};
pub use error::{Error, Result};
pub use filter::{filter_features, Stoplist};
pub use matching::{match_features, MatchResult, MatchStrategy, MatchedPair};
pub use matrix::Matrix;
pub use rsa::{rsa, RdmMeasure};
pub use sae::{Activation, FeatureStats, SaeWeights};
pub use svcca::{svcca, SvccaConfig, SvccaResult};
