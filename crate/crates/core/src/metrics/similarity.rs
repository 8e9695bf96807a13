//! Document-to-document structural similarity.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::document::{AttrKind, Document, DocumentSchema, Value, LENGTH_ATTR};
use crate::error::{Error, Result};

/// `exp(min(0, 1 - ref_len / pred_len))`; zero for an empty prediction.
pub fn brevity(ref_len: usize, pred_len: usize) -> f64 {
    if pred_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / pred_len as f64).min(0.0).exp()
}

/// Clipped unigram precision times the brevity factor. Each item is one
/// token, however many slots it carries.
pub fn unigram_bleu<T: Eq + Hash>(pred: &[T], reference: &[T]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut ref_counts: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t).or_default() += 1;
    }
    let mut matched = 0;
    for t in pred {
        if let Some(c) = ref_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    matched as f64 / pred.len() as f64 * brevity(reference.len(), pred.len())
}

fn mean_vector<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        sum.iter_mut().zip(r).for_each(|(s, x)| *s += x);
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n.max(1) as f64);
    sum
}

/// Cosine similarity clamped to `[-1, 1]`; `None` when either norm is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the average-pooled sequences mapped to `[0, 1]`, times the
/// brevity factor.
pub fn pooled_feature_similarity(pred: &[&[f64]], reference: &[&[f64]]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let dim = reference[0].len();
    let p = mean_vector(pred.iter().copied(), dim);
    let r = mean_vector(reference.iter().copied(), dim);
    let cos = cosine(&p, &r).unwrap_or_else(|| {
        log::warn!("zero-norm pooled feature; cosine taken as 0");
        0.0
    });
    (cos + 1.0) / 2.0 * brevity(reference.len(), pred.len())
}

/// Score of one attribute; `applicable` is false when the attribute was
/// excluded for being empty in either document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub name: String,
    pub score: f64,
    pub applicable: bool,
}

impl AttributeScore {
    fn excluded(name: &str) -> Self {
        AttributeScore { name: name.to_string(), score: 0.0, applicable: false }
    }

    fn scored(name: &str, score: f64) -> Self {
        AttributeScore { name: name.to_string(), score, applicable: true }
    }
}

/// Values of attribute `name` over the elements that carry it, in order.
fn sequence<'a>(doc: &'a Document, name: &str) -> Vec<&'a Value> {
    doc.elements.iter().filter_map(|e| e.get(name)).collect()
}

/// Per-attribute terms of the structural similarity of `pred` against
/// `reference`. Canvas attributes other than the length score the fraction of
/// equal slots; element attributes score unigram BLEU (categorical) or pooled
/// feature similarity (numerical).
pub fn structural_scores(reference: &Document, pred: &Document, schema: &DocumentSchema) -> Vec<AttributeScore> {
    let mut out = Vec::new();
    for spec in schema.canvas_attrs.iter().filter(|s| s.name != LENGTH_ATTR) {
        let score = match (reference.canvas.get(&spec.name), pred.canvas.get(&spec.name)) {
            (Some(Value::Categorical(a)), Some(Value::Categorical(b))) if !a.is_empty() && a.len() == b.len() => {
                let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
                AttributeScore::scored(&spec.name, same as f64 / a.len() as f64)
            }
            _ => AttributeScore::excluded(&spec.name),
        };
        out.push(score);
    }
    for spec in &schema.element_attrs {
        let r = sequence(reference, &spec.name);
        let p = sequence(pred, &spec.name);
        if r.is_empty() || p.is_empty() {
            out.push(AttributeScore::excluded(&spec.name));
            continue;
        }
        let score = match spec.kind {
            AttrKind::Categorical => {
                let tok = |v: &[&Value]| -> Vec<Vec<usize>> {
                    v.iter().filter_map(|x| x.bins().map(<[usize]>::to_vec)).collect()
                };
                unigram_bleu(&tok(&p), &tok(&r))
            }
            AttrKind::Numerical => {
                let feats = |v: &[&'_ Value]| -> Vec<Vec<f64>> {
                    v.iter().filter_map(|x| x.reals().map(<[f64]>::to_vec)).collect()
                };
                let (pf, rf) = (feats(&p), feats(&r));
                let pr: Vec<&[f64]> = pf.iter().map(Vec::as_slice).collect();
                let rr: Vec<&[f64]> = rf.iter().map(Vec::as_slice).collect();
                pooled_feature_similarity(&pr, &rr)
            }
        };
        out.push(AttributeScore::scored(&spec.name, score));
    }
    out
}

/// Mean of the applicable attribute scores (zero when none applies).
pub fn structural_similarity(reference: &Document, pred: &Document, schema: &DocumentSchema) -> f64 {
    mean_applicable(&structural_scores(reference, pred, schema))
}

pub(crate) fn mean_applicable(scores: &[AttributeScore]) -> f64 {
    let used: Vec<f64> = scores.iter().filter(|s| s.applicable).map(|s| s.score).collect();
    if used.is_empty() {
        0.0
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    }
}

/// Average structural similarity over paired documents.
pub fn reconstruction_score(reference: &[Document], recon: &[Document], schema: &DocumentSchema) -> Result<f64> {
    if reference.len() != recon.len() {
        return Err(Error::invalid(format!("{} documents vs {} reconstructions", reference.len(), recon.len())));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reconstruction score needs at least one document"));
    }
    let total: f64 = reference.iter().zip(recon).map(|(a, b)| structural_similarity(a, b, schema)).sum();
    Ok(total / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_examples() {
        assert_eq!(unigram_bleu(&['a', 'b'], &['a', 'b']), 1.0);
        assert_eq!(unigram_bleu(&['a', 'b'], &['a', 'c']), 0.5);
        assert!((unigram_bleu(&['a'], &['a', 'a', 'a']) - (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(unigram_bleu::<char>(&[], &['a']), 0.0);
        // clipping: repeated predictions only match as often as the reference has them
        assert_eq!(unigram_bleu(&['a', 'a'], &['a', 'b']), 0.5);
    }

    #[test]
    fn pooled_examples() {
        let v = [1.0, 2.0];
        let w = [-1.0, -2.0];
        let o = [2.0, -1.0];
        assert!((pooled_feature_similarity(&[&v], &[&v]) - 1.0).abs() < 1e-12);
        assert!(pooled_feature_similarity(&[&w], &[&v]).abs() < 1e-12);
        assert!((pooled_feature_similarity(&[&o], &[&v]) - 0.5).abs() < 1e-12);
        let z = [0.0, 0.0];
        assert!((pooled_feature_similarity(&[&z, &z], &[&v]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brevity_is_shared() {
        for (r, p) in [(3, 1), (2, 5), (4, 4)] {
            let toks: Vec<u8> = vec![0; p];
            let refs: Vec<u8> = vec![0; r];
            let bleu = unigram_bleu(&toks, &refs);
            let f = [1.0];
            let pooled = pooled_feature_similarity(&vec![&f[..]; p], &vec![&f[..]; r]);
            let precision = (r as f64 / p as f64).min(1.0);
            assert!((bleu - precision * brevity(r, p)).abs() < 1e-15);
            assert!((pooled - brevity(r, p)).abs() < 1e-15);
        }
    }
}
