//! Building sound-generation datasets with in-class diversity.
//!
//! The crate covers the whole pipeline at the embedding level:
//!
//! * [`taxonomy`]: sound classes, subcategories and adjectives, with validation
//!   and JSON persistence.
//! * [`llm`]: two-stage taxonomy construction against an OpenAI-compatible chat
//!   endpoint, with transcript recording and deterministic replay.
//! * [`embedding`]: the `DVSE` binary vector container and the embedding
//!   provider client.
//! * [`matcher`]: frame/text and audio/text classification, cross-modal
//!   agreement, representative frames and the dataset manifest.
//! * [`fusion`]: label lookup tables and fused conditioning vectors.
//! * [`metrics`]: Fréchet distance, mean squared pairwise distance and Welch's
//!   t-test.
//!
//! Inner loops that fan out over clips or classes go through [`parallel`],
//! which uses rayon when the `parallel` feature is enabled.

pub mod embedding;
pub mod fusion;
pub mod llm;
pub mod matcher;
pub mod metrics;
pub mod parallel;
pub mod taxonomy;
