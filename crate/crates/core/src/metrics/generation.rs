//! Distribution-level comparison of two document sets.

use crate::document::{AttrKind, AttributeSpec, Document, DocumentSchema, Value, LENGTH_ATTR};
use crate::error::{Error, Result};

use super::similarity::{cosine, mean_applicable, AttributeScore};

/// `sum_i min(h1_i / |h1|, h2_i / |h2|)`.
pub fn histogram_intersection(h1: &[f64], h2: &[f64]) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::invalid(format!("histograms have {} and {} bins", h1.len(), h2.len())));
    }
    if h1.iter().chain(h2).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("histogram counts must be finite and non-negative"));
    }
    let (s1, s2): (f64, f64) = (h1.iter().sum(), h2.iter().sum());
    if s1 <= 0.0 || s2 <= 0.0 {
        return Err(Error::invalid("histogram has a zero total"));
    }
    Ok(h1.iter().zip(h2).map(|(a, b)| (a / s1).min(b / s2)).sum())
}

fn values<'a>(docs: &'a [Document], spec: &AttributeSpec, canvas: bool) -> Vec<&'a Value> {
    if canvas {
        docs.iter().filter_map(|d| d.canvas.get(&spec.name)).collect()
    } else {
        docs.iter().flat_map(|d| d.elements.iter().filter_map(|e| e.get(&spec.name))).collect()
    }
}

/// Slot values of a categorical attribute pooled into one histogram. The
/// length attribute stores counts `1..=max`, binned as `count - 1`.
fn histogram(vals: &[&Value], spec: &AttributeSpec) -> Vec<f64> {
    let mut h = vec![0.0; spec.cardinality];
    let shift = usize::from(spec.name == LENGTH_ATTR);
    for v in vals {
        for &b in v.bins().unwrap_or(&[]) {
            if let Some(c) = b.checked_sub(shift).and_then(|i| h.get_mut(i)) {
                *c += 1.0;
            }
        }
    }
    h
}

/// Mean feature vector, summed in a canonical row order so that the result
/// does not depend on document order.
fn pooled(vals: &[&Value], dim: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = vals.iter().filter_map(|v| v.reals()).filter(|r| r.len() == dim).collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sum = vec![0.0; dim];
    for r in &rows {
        sum.iter_mut().zip(*r).for_each(|(s, x)| *s += x);
    }
    sum.iter_mut().for_each(|s| *s /= rows.len() as f64);
    sum
}

fn attribute_score(a: &[Document], b: &[Document], spec: &AttributeSpec, canvas: bool) -> AttributeScore {
    let (va, vb) = (values(a, spec, canvas), values(b, spec, canvas));
    let name = spec.name.clone();
    if va.is_empty() && vb.is_empty() {
        return AttributeScore { name, score: 0.0, applicable: false };
    }
    if va.is_empty() || vb.is_empty() {
        return AttributeScore { name, score: 0.0, applicable: true };
    }
    let score = match spec.kind {
        AttrKind::Categorical => histogram_intersection(&histogram(&va, spec), &histogram(&vb, spec)).unwrap_or(0.0),
        AttrKind::Numerical => cosine(&pooled(&va, spec.dims), &pooled(&vb, spec.dims)).unwrap_or(0.0),
    };
    AttributeScore { name, score, applicable: true }
}

/// Per-attribute statistics similarity over every canvas and element
/// attribute, the length included. An attribute missing from both sets is
/// excluded; missing from one set scores 0.
pub fn generation_scores(a: &[Document], b: &[Document], schema: &DocumentSchema) -> Result<Vec<AttributeScore>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("generation score needs two non-empty document sets"));
    }
    let canvas = schema.canvas_attrs.iter().map(|s| attribute_score(a, b, s, true));
    let elements = schema.element_attrs.iter().map(|s| attribute_score(a, b, s, false));
    Ok(canvas.chain(elements).collect())
}

/// Mean of [`generation_scores`].
pub fn generation_score(a: &[Document], b: &[Document], schema: &DocumentSchema) -> Result<f64> {
    Ok(mean_applicable(&generation_scores(a, b, schema)?))
}
