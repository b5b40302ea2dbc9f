//! Multi-event temporal video retrieval.
//!
//! Keyframe embeddings live in an exact cosine [`index::VectorIndex`]; OCR,
//! captions, object labels and ASR transcripts live in a filterable
//! [`metadata::MetadataStore`]. [`trake`] locates video segments in which an
//! ordered sequence of described events occurs.
//!
//! Scans and per-segment work run on rayon when the `parallel` feature is
//! enabled (the default) and sequentially otherwise.

pub mod adapters;
pub mod corpus;
pub mod dedup;
pub mod embedding;
pub mod fixture;
pub mod index;
pub mod ingest;
pub mod kfe;
pub mod metadata;
pub mod par;
pub mod phash;
pub mod text;
pub mod trake;

pub use corpus::{CandidateSegment, DecomposedQuery, Embedding, EventPath, KeyframeId, VideoId};
pub use index::{ScoredHit, VectorIndex};
pub use ingest::Corpus;
pub use metadata::{MetadataFilter, MetadataStore};
pub use par::Execution;
pub use trake::{TrakeConfig, TrakeResult};
