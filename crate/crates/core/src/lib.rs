//! Predictive synchrony between two interacting language-model agents.
//!
//! Per-turn, per-layer hidden states of both agents are stored as REPD traces
//! ([`repstore`]), paired into directional source/target datasets
//! ([`pairsets`]), mapped with closed-form centered ridge regression
//! ([`regression`]) and summarised as layer-grid heatmaps and SyncR² scores
//! ([`synchrony`]). [`stats`] relates the scores to external performance
//! tables, [`decoding`] reads out emotion/action distributions and
//! [`synthlab`] builds corpora with known coupling for validation.
//!
//! The numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the pipeline uses.

pub mod decoding;
pub mod error;
pub mod linalg;
pub mod pairsets;
pub mod regression;
pub mod report;
pub mod repstore;
pub mod scalar;
pub mod stats;
pub mod synchrony;
pub mod synthlab;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type AffineMap64 = regression::AffineMap<f64>;
pub type MlpMap64 = regression::MlpMap<f64>;
pub type PairDataset64 = pairsets::PairDataset<f64>;
pub type SynchronyHeatmap64 = synchrony::SynchronyHeatmap<f64>;
pub type CorrelationResult64 = stats::CorrelationResult<f64>;
pub type Decoder64 = decoding::Decoder<f64>;
