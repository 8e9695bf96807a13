//! Retrieval index over element image features, used to texture renders.

use crate::document::{Document, DocumentSchema, Value};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEntry {
    pub id: u64,
    pub feature: Vec<f64>,
    pub color: [u8; 3],
}

/// Cosine-similarity index. Read-only once built.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureIndex {
    dim: usize,
    entries: Vec<FeatureEntry>,
}

impl FeatureIndex {
    pub fn new(dim: usize) -> Self {
        FeatureIndex { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&FeatureEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn insert(&mut self, id: u64, feature: Vec<f64>, color: [u8; 3]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::invalid(format!("feature dim {} != index dim {}", feature.len(), self.dim)));
        }
        if self.get(id).is_some() {
            return Err(Error::invalid(format!("duplicate feature id {id}")));
        }
        self.entries.push(FeatureEntry { id, feature, color });
        Ok(())
    }

    /// Indexes every distinct feature of attribute `attr` in `docs`, in
    /// order of first appearance, with ids `0, 1, ...` and a preview color
    /// derived from the feature.
    pub fn from_documents(docs: &[Document], schema: &DocumentSchema, attr: &str) -> Result<Self> {
        let spec = schema.element_attr(attr).ok_or_else(|| Error::invalid(format!("no element attribute `{attr}`")))?;
        let mut index = FeatureIndex::new(spec.dims);
        for el in docs.iter().flat_map(|d| &d.elements) {
            if let Some(Value::Numerical(f)) = el.get(attr) {
                if !index.entries.iter().any(|e| &e.feature == f) {
                    let id = index.entries.len() as u64;
                    index.insert(id, f.clone(), preview_color(f))?;
                }
            }
        }
        Ok(index)
    }
}

/// Deterministic swatch color for a feature vector.
pub fn preview_color(feature: &[f64]) -> [u8; 3] {
    let scale = (feature.len() as f64).sqrt();
    let mut rgb = [128u8; 3];
    for (c, x) in rgb.iter_mut().zip(feature) {
        *c = (127.5 + 127.5 * (x * scale).tanh()).round().clamp(0.0, 255.0) as u8;
    }
    rgb
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Id of the entry most cosine-similar to `query`; ties go to the smaller id.
pub fn nearest_neighbor(index: &FeatureIndex, query: &[f64]) -> Result<u64> {
    if index.is_empty() {
        return Err(Error::invalid("nearest-neighbor query on an empty index"));
    }
    if query.len() != index.dim {
        return Err(Error::invalid(format!("query dim {} != index dim {}", query.len(), index.dim)));
    }
    let mut best: Option<(f64, u64)> = None;
    for e in &index.entries {
        let s = cosine(query, &e.feature);
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid < e.id) => Some((bs, bid)),
            _ => Some((s, e.id)),
        };
    }
    Ok(best.expect("non-empty").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(entries: &[(u64, Vec<f64>)]) -> FeatureIndex {
        let mut idx = FeatureIndex::new(entries[0].1.len());
        for (id, f) in entries {
            idx.insert(*id, f.clone(), [0, 0, 0]).unwrap();
        }
        idx
    }

    #[test]
    fn self_retrieval() {
        let idx = index(&[(4, vec![1.0, 0.0, 0.2]), (2, vec![0.0, 1.0, 0.0]), (9, vec![0.3, 0.3, 0.9])]);
        for e in idx.entries() {
            assert_eq!(nearest_neighbor(&idx, &e.feature).unwrap(), e.id);
        }
    }

    #[test]
    fn negated_query_prefers_other_entry() {
        let v = vec![1.0, 0.0];
        let w = vec![0.6, 0.8];
        // cos(-v, v) = -1, cos(-v, w) = -0.6
        let idx = index(&[(0, v.clone()), (1, w)]);
        let q: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(nearest_neighbor(&idx, &q).unwrap(), 1);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let idx = index(&[(7, vec![1.0, 1.0]), (3, vec![1.0, -1.0])]);
        assert_eq!(nearest_neighbor(&idx, &[1.0, 0.0]).unwrap(), 3);
    }

    #[test]
    fn errors() {
        assert!(nearest_neighbor(&FeatureIndex::new(2), &[1.0, 0.0]).is_err());
        let mut idx = index(&[(1, vec![1.0, 0.0])]);
        assert!(nearest_neighbor(&idx, &[1.0]).is_err());
        assert!(idx.insert(1, vec![0.0, 1.0], [0; 3]).is_err());
        assert!(idx.insert(2, vec![0.0], [0; 3]).is_err());
    }
}
