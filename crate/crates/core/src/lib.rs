//! Core library for completing and mining a review-photo corpus: label
//! completion over photo features, caption generation with per-position
//! decoding records, caption confidence and BLEU scoring, online
//! variational LDA over reviews, and topic-driven review-to-image
//! recommendation.

pub mod captioner;
pub mod classifier;
pub mod corpus;
mod error;
pub mod metrics;
pub mod recommender;
pub mod synthetic;
pub mod topics;

pub use error::{Error, Result};
