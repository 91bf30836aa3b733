//! Modality-fused semantic IDs for generative recommendation.
//!
//! The crate is organised as a pipeline of independent stages:
//!
//! * [`corpus`]: tracks, playlists, filtering, splitting and a synthetic generator.
//! * [`playvec`]: skip-gram playlist co-occurrence embeddings.
//! * [`pairmine`]: normalized co-occurrence and contrastive pair mining.
//! * [`fusion`]: the projection head, its objective and training loop.
//! * [`pq`]: per-position k-means codebooks and tokenization into semantic IDs.
//! * [`sidqual`]: codebook underutilization, cardinality and conflict rate.
//! * [`genrec`]: a small decoder-only recommender over semantic-ID tokens.
//! * [`pipeline`]: configuration, stage sequencing, manifests and ablations.

pub mod corpus;
pub mod error;
pub mod fusion;
pub mod genrec;
pub mod io;
pub mod optim;
pub mod pairmine;
pub mod pipeline;
pub mod playvec;
pub mod pq;
pub mod rng;
pub mod sidqual;
pub mod tensor;

pub use error::{FusidError, Result};

/// Items are identified by non-negative integers throughout the pipeline.
pub type TrackId = u64;
