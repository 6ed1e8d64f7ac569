//! Cross-modality cluster matching and memory-bank contrastive alignment on
//! embedding tables.
//!
//! The pipeline clusters each modality with DBSCAN, matches clusters across
//! modalities with bilateral Kuhn-Munkres assignment (optionally extended to
//! many-to-many), and pulls the embeddings together with contrastive losses
//! against momentum-updated prototype banks. Retrieval metrics and matching
//! diagnostics live in [`eval`].

pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod matching;
pub mod memory;
pub mod objective;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
