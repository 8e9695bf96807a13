//! Fixed-length padded encoding of a list of documents.

use crate::document::{AttrKind, AttributeSpec, Document, DocumentSchema, Element, Value, LENGTH_ATTR};
use crate::error::{Error, Result};

/// Categorical slot value for padded or absent entries. Never a valid bin.
pub const PAD_BIN: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Categorical(Vec<usize>),
    Numerical(Vec<f64>),
}

/// One attribute laid out row-major as `[rows, dims]`, where a row is a
/// document (canvas) or a `(document, step)` pair (elements).
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub dims: usize,
    pub data: ColumnData,
    /// Whether the row carries the attribute.
    pub present: Vec<bool>,
}

impl Column {
    fn new(spec: &AttributeSpec, rows: usize) -> Self {
        let data = match spec.kind {
            AttrKind::Categorical => ColumnData::Categorical(vec![PAD_BIN; rows * spec.dims]),
            AttrKind::Numerical => ColumnData::Numerical(vec![0.0; rows * spec.dims]),
        };
        Column { name: spec.name.clone(), dims: spec.dims, data, present: vec![false; rows] }
    }

    fn put(&mut self, row: usize, value: &Value) {
        let d = self.dims;
        match (&mut self.data, value) {
            (ColumnData::Categorical(xs), Value::Categorical(v)) => xs[row * d..(row + 1) * d].copy_from_slice(v),
            (ColumnData::Numerical(xs), Value::Numerical(v)) => xs[row * d..(row + 1) * d].copy_from_slice(v),
            _ => unreachable!("validated documents match their schema"),
        }
        self.present[row] = true;
    }

    pub fn get(&self, row: usize) -> Option<Value> {
        if !self.present[row] {
            return None;
        }
        let d = self.dims;
        Some(match &self.data {
            ColumnData::Categorical(xs) => Value::Categorical(xs[row * d..(row + 1) * d].to_vec()),
            ColumnData::Numerical(xs) => Value::Numerical(xs[row * d..(row + 1) * d].to_vec()),
        })
    }

    pub fn bins(&self, row: usize) -> Option<&[usize]> {
        match &self.data {
            ColumnData::Categorical(xs) if self.present[row] => Some(&xs[row * self.dims..(row + 1) * self.dims]),
            _ => None,
        }
    }

    pub fn reals(&self, row: usize) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numerical(xs) if self.present[row] => Some(&xs[row * self.dims..(row + 1) * self.dims]),
            _ => None,
        }
    }
}

/// Padded batch. Canvas columns have `size` rows, element columns have
/// `size * max_length` rows; `mask[b * max_length + t]` is true exactly for
/// `t < lengths[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub max_length: usize,
    pub canvas: Vec<Column>,
    pub elements: Vec<Column>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, b: usize, t: usize) -> usize {
        b * self.max_length + t
    }

    pub fn canvas_column(&self, name: &str) -> Option<&Column> {
        self.canvas.iter().find(|c| c.name == name)
    }

    pub fn element_column(&self, name: &str) -> Option<&Column> {
        self.elements.iter().find(|c| c.name == name)
    }
}

/// Packs validated documents. The canvas `length` column holds the element
/// count, as in documents.
pub fn batchify(docs: &[Document], schema: &DocumentSchema) -> Result<Batch> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot batch an empty document list"));
    }
    let size = docs.len();
    let max_length = schema.max_length;
    let mut canvas: Vec<Column> = schema.canvas_attrs.iter().map(|s| Column::new(s, size)).collect();
    let mut elements: Vec<Column> = schema.element_attrs.iter().map(|s| Column::new(s, size * max_length)).collect();
    let mut mask = vec![false; size * max_length];
    let mut lengths = Vec::with_capacity(size);
    for (b, doc) in docs.iter().enumerate() {
        if doc.elements.len() > max_length || doc.elements.is_empty() {
            return Err(Error::invalid(format!("document {} has {} elements", doc.id, doc.elements.len())));
        }
        for (col, spec) in canvas.iter_mut().zip(&schema.canvas_attrs) {
            if let Some(v) = doc.canvas.get(&spec.name) {
                col.put(b, v);
            }
        }
        for (t, el) in doc.elements.iter().enumerate() {
            let row = b * max_length + t;
            mask[row] = true;
            for (col, spec) in elements.iter_mut().zip(&schema.element_attrs) {
                if let Some(v) = el.get(&spec.name) {
                    col.put(row, v);
                }
            }
        }
        lengths.push(doc.elements.len());
    }
    Ok(Batch { ids: docs.iter().map(|d| d.id).collect(), max_length, canvas, elements, mask, lengths })
}

/// Inverse of [`batchify`].
pub fn unbatchify(batch: &Batch) -> Vec<Document> {
    (0..batch.size())
        .map(|b| {
            let mut doc = Document { id: batch.ids[b], ..Default::default() };
            for col in &batch.canvas {
                if let Some(v) = col.get(b) {
                    doc.canvas.insert(col.name.clone(), v);
                }
            }
            doc.canvas.entry(LENGTH_ATTR.to_string()).or_insert_with(|| Value::Categorical(vec![batch.lengths[b]]));
            for t in 0..batch.lengths[b] {
                let row = batch.row(b, t);
                let mut el = Element::default();
                for col in &batch.elements {
                    if let Some(v) = col.get(row) {
                        el.set(col.name.clone(), v);
                    }
                }
                doc.elements.push(el);
            }
            doc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generator::{generate_documents, GeneratorConfig};

    fn docs_with_lengths(lengths: &[usize]) -> (DocumentSchema, Vec<Document>) {
        let config = GeneratorConfig { n_docs: 400, feature_dim: 4, ..Default::default() };
        let schema = config.schema().unwrap();
        let pool = generate_documents(&config, 5).unwrap();
        let docs =
            lengths.iter().map(|&n| pool.iter().find(|d| d.len() == n).expect("length present").clone()).collect();
        (schema, docs)
    }

    #[test]
    fn mask_rows_follow_lengths() {
        let (schema, docs) = docs_with_lengths(&[2, 5]);
        let batch = batchify(&docs, &schema).unwrap();
        assert_eq!(batch.lengths, vec![2, 5]);
        let row = |b: usize| batch.mask[b * 50..(b + 1) * 50].to_vec();
        assert_eq!(row(0).iter().filter(|m| **m).count(), 2);
        assert!(row(0)[..2].iter().all(|m| *m));
        assert!(row(1)[..5].iter().all(|m| *m) && !row(1)[5]);
    }

    #[test]
    fn full_length_document() {
        let config = GeneratorConfig {
            n_docs: 1,
            feature_dim: 4,
            length: crate::dataset::LengthDistribution::Uniform { min: 50, max: 50 },
            ..Default::default()
        };
        let schema = config.schema().unwrap();
        let docs = generate_documents(&config, 1).unwrap();
        let batch = batchify(&docs, &schema).unwrap();
        assert!(batch.mask.iter().all(|m| *m));
    }

    #[test]
    fn padding_never_looks_like_a_bin() {
        let (schema, docs) = docs_with_lengths(&[1]);
        let batch = batchify(&docs, &schema).unwrap();
        let pos = batch.element_column("position").unwrap();
        match &pos.data {
            ColumnData::Categorical(xs) => assert!(xs[2..].iter().all(|&x| x == PAD_BIN)),
            _ => unreachable!(),
        }
        assert!(batchify(&[], &schema).is_err());
    }

    #[test]
    fn round_trip_on_synthetic_documents() {
        for family in ["crello-like", "rico-like"] {
            let config = GeneratorConfig { family: family.into(), n_docs: 100, feature_dim: 8, ..Default::default() };
            let schema = config.schema().unwrap();
            let docs = generate_documents(&config, 21).unwrap();
            let batch = batchify(&docs, &schema).unwrap();
            assert_eq!(unbatchify(&batch), docs);
        }
    }
}
