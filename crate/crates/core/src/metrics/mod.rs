//! Evaluation: structural similarity, layout mIoU and generation score.

mod generation;
mod layout;
mod similarity;

use serde::{Deserialize, Serialize};

pub use generation::{generation_score, generation_scores, histogram_intersection};
pub use layout::{cell_span, dataset_miou, layout_miou, rasterize_labels, LabelGrid, GRID, POSITION_ATTR, SIZE_ATTR};
pub use similarity::{
    brevity, cosine, pooled_feature_similarity, reconstruction_score, structural_scores, structural_similarity,
    unigram_bleu, AttributeScore,
};

use crate::document::{Document, DocumentSchema};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean structural score of each attribute over the pairs where it applies.
    pub reconstruction: Vec<AttributeScore>,
    /// Statistics similarity of each attribute between the reference and
    /// generated sets; `s_gen` is their applicable mean.
    pub generation: Vec<AttributeScore>,
    pub s_reconst: f64,
    pub miou: f64,
    pub s_gen: f64,
}

impl MetricReport {
    /// Reference documents against their reconstructions (paired) and a
    /// generated set (unpaired).
    pub fn evaluate(
        reference: &[Document],
        reconstructions: &[Document],
        generated: &[Document],
        schema: &DocumentSchema,
    ) -> Result<Self> {
        let s_reconst = reconstruction_score(reference, reconstructions, schema)?;
        let miou = dataset_miou(reference, reconstructions, schema)?;
        let generation = generation_scores(reference, generated, schema)?;
        let s_gen = similarity::mean_applicable(&generation);

        let per_pair: Vec<Vec<AttributeScore>> =
            reference.iter().zip(reconstructions).map(|(a, b)| structural_scores(a, b, schema)).collect();
        let reconstruction = per_pair[0]
            .iter()
            .enumerate()
            .map(|(k, first)| {
                let used: Vec<f64> = per_pair.iter().map(|s| &s[k]).filter(|s| s.applicable).map(|s| s.score).collect();
                AttributeScore {
                    name: first.name.clone(),
                    score: if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 },
                    applicable: !used.is_empty(),
                }
            })
            .collect();
        Ok(MetricReport { reconstruction, generation, s_reconst, miou, s_gen })
    }
}
