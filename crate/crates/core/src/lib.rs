//! Cosegmentation by metric learning: a Siamese encoder trained with a
//! contrastive loss embeds object proposals, a random-projection forest
//! retrieves similar proposals, and the results are scored against ground
//! truth and summarized as a collage.

pub mod annindex;
mod binio;
pub mod collage;
pub mod descriptor;
pub mod embedder;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod pnm;
pub mod retrieval;
pub mod synthetic;

pub use binio::DecodeError;
