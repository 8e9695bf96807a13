//! Packed (padding-free) view of a batch: only rows of real elements are kept.

use std::rc::Rc;

use super::layers::AttrInput;
use crate::dataset::{Batch, Column, ColumnData, PAD_BIN};
use crate::document::{AttrKind, AttributeSpec, DocumentSchema, LENGTH_ATTR};
use crate::error::{Error, Result};
use crate::tape::{Mat, Segments};

pub(crate) struct Packed {
    pub lengths: Vec<usize>,
    pub segs: Rc<Segments>,
    /// Step index of each packed row.
    pub positions: Vec<usize>,
    pub seg_of_row: Vec<usize>,
    /// `0` on first steps, out of range elsewhere.
    pub bos_index: Vec<usize>,
    /// One row per document; the length attribute holds `length - 1`.
    pub canvas: Vec<AttrInput>,
    pub elements: Vec<AttrInput>,
    /// Element at the previous step of each row, absent on first steps.
    pub prev_elements: Vec<AttrInput>,
}

fn gather(col: &Column, spec: &AttributeSpec, rows: &[Option<usize>]) -> AttrInput {
    let row_ok = |r: &Option<usize>| r.filter(|&r| col.present[r]);
    match (&col.data, spec.kind) {
        (ColumnData::Categorical(xs), AttrKind::Categorical) => AttrInput::Categorical(
            (0..spec.dims)
                .map(|s| rows.iter().map(|r| row_ok(r).map_or(PAD_BIN, |r| xs[r * spec.dims + s])).collect())
                .collect(),
        ),
        (ColumnData::Numerical(xs), AttrKind::Numerical) => {
            let mut values = Mat::zeros(rows.len(), spec.dims);
            let mut present = vec![false; rows.len()];
            for (i, r) in rows.iter().enumerate() {
                if let Some(r) = row_ok(r) {
                    values.row_mut(i).copy_from_slice(&xs[r * spec.dims..(r + 1) * spec.dims]);
                    present[i] = true;
                }
            }
            AttrInput::Numerical { values, present }
        }
        _ => unreachable!("column kinds are checked against the schema"),
    }
}

fn check_columns(cols: &[Column], specs: &[AttributeSpec], rows: usize) -> Result<()> {
    if cols.len() != specs.len() {
        return Err(Error::config(format!("batch has {} columns, schema {}", cols.len(), specs.len())));
    }
    for (c, s) in cols.iter().zip(specs) {
        let kind_ok = matches!(
            (&c.data, s.kind),
            (ColumnData::Categorical(_), AttrKind::Categorical) | (ColumnData::Numerical(_), AttrKind::Numerical)
        );
        let len = match &c.data {
            ColumnData::Categorical(x) => x.len(),
            ColumnData::Numerical(x) => x.len(),
        };
        if c.name != s.name || c.dims != s.dims || !kind_ok || len != rows * s.dims || c.present.len() != rows {
            return Err(Error::config(format!("batch column `{}` does not match the schema", c.name)));
        }
    }
    Ok(())
}

impl Packed {
    /// Layout only (no attribute inputs), for decoding at given lengths.
    pub fn layout(lengths: &[usize]) -> Self {
        let segs = Rc::new(Segments::from_lengths(lengths));
        let mut positions = Vec::with_capacity(segs.total_rows());
        let mut seg_of_row = Vec::with_capacity(segs.total_rows());
        for (b, &n) in lengths.iter().enumerate() {
            positions.extend(0..n);
            seg_of_row.extend(std::iter::repeat_n(b, n));
        }
        let bos_index = positions.iter().map(|&t| if t == 0 { 0 } else { PAD_BIN }).collect();
        Packed {
            lengths: lengths.to_vec(),
            segs,
            positions,
            seg_of_row,
            bos_index,
            canvas: Vec::new(),
            elements: Vec::new(),
            prev_elements: Vec::new(),
        }
    }

    pub fn from_batch(batch: &Batch, schema: &DocumentSchema) -> Result<Self> {
        let size = batch.size();
        if size == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if batch.max_length != schema.max_length || batch.mask.len() != size * batch.max_length {
            return Err(Error::config("batch shape does not match the schema"));
        }
        check_columns(&batch.canvas, &schema.canvas_attrs, size)?;
        check_columns(&batch.elements, &schema.element_attrs, size * batch.max_length)?;
        for &n in &batch.lengths {
            if n == 0 || n > schema.max_length {
                return Err(Error::invalid(format!("batch length {n} outside [1, {}]", schema.max_length)));
            }
        }
        let mut packed = Packed::layout(&batch.lengths);
        let mut rows = Vec::with_capacity(packed.positions.len());
        let mut prev = Vec::with_capacity(packed.positions.len());
        for (b, &n) in batch.lengths.iter().enumerate() {
            for t in 0..n {
                rows.push(Some(batch.row(b, t)));
                prev.push((t > 0).then(|| batch.row(b, t - 1)));
            }
        }
        let docs: Vec<Option<usize>> = (0..size).map(Some).collect();
        packed.canvas = batch
            .canvas
            .iter()
            .zip(&schema.canvas_attrs)
            .map(|(col, spec)| {
                if spec.name == LENGTH_ATTR {
                    AttrInput::Categorical(vec![batch.lengths.iter().map(|n| n - 1).collect()])
                } else {
                    gather(col, spec, &docs)
                }
            })
            .collect();
        packed.elements =
            batch.elements.iter().zip(&schema.element_attrs).map(|(col, spec)| gather(col, spec, &rows)).collect();
        packed.prev_elements =
            batch.elements.iter().zip(&schema.element_attrs).map(|(col, spec)| gather(col, spec, &prev)).collect();
        Ok(packed)
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }
}
