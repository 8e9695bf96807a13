//! CanvasVAE: a variational auto-encoder over vector graphic documents.
//!
//! A document is a canvas attribute map plus a depth-ordered sequence of
//! elements. The crate provides the document model, a synthetic dataset
//! generator, the encoder/decoder variants and their training loop, the
//! evaluation metrics, and an SVG renderer.

pub mod dataset;
pub mod document;
pub mod error;
pub mod metrics;
pub mod model;
pub mod render;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
