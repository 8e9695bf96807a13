//! Synthetic dataset generation, loading, batching, and feature retrieval.

mod batch;
mod features;
mod generator;
mod manifest;

pub use batch::{batchify, unbatchify, Batch, Column, ColumnData, PAD_BIN};
pub use features::{nearest_neighbor, preview_color, FeatureEntry, FeatureIndex};
pub use generator::{generate_documents, texture_feature, GeneratorConfig, LengthDistribution};
pub use manifest::{generate_synthetic, load_dataset, partition, Dataset, DatasetManifest, Split};
