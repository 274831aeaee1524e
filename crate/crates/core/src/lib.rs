//! Automatic evaluation of open-domain dialogue responses.
//!
//! Three metric families are provided:
//!
//! - word overlap against a reference ([`overlap_metrics`]): BLEU-1..4,
//!   ROUGE-L, METEOR;
//! - embedding similarity against a reference ([`embedding_metrics`]):
//!   Embedding Average, Vector Extrema, Greedy Matching and a
//!   BERTScore-style greedy F1;
//! - a learned, reference-free scorer (PONE) trained with
//!   similarity-weighted negatives ([`negative_sampler`]), augmented
//!   positives ([`augmentor`]) and an iterative pseudo-label filter
//!   ([`label_filter`]) on top of a bilinear + MLP model ([`scorer`]).
//!
//! [`stats`] holds the correlation and agreement statistics used to compare
//! any metric against human ratings, and [`cli`] wires everything into the
//! `dialeval` binary.

pub mod augmentor;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding_metrics;
pub mod embeddings;
pub mod error;
pub mod label_filter;
pub mod negative_sampler;
pub mod overlap_metrics;
pub mod pipeline;
pub mod rng;
pub mod scorer;
pub mod stats;
pub mod text;

pub use error::{Error, Result};
