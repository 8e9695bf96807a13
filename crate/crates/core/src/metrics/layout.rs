//! Label masks on a fixed grid and their mean intersection-over-union.

use std::collections::BTreeMap;

use crate::document::{Document, DocumentSchema, Value};
use crate::error::{Error, Result};

/// Cells per side of the rasterization grid.
pub const GRID: usize = 64;
pub const POSITION_ATTR: &str = "position";
pub const SIZE_ATTR: &str = "size";

/// Cell ownership after painting: `owner[y * GRID + x]` is the label of the
/// topmost element covering the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    pub owner: Vec<Option<usize>>,
}

impl LabelGrid {
    /// Cells owned by `label`.
    pub fn mask(&self, label: usize) -> Vec<bool> {
        self.owner.iter().map(|o| *o == Some(label)).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.owner.iter().flatten().copied().collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }

    /// Per-label masks keyed by label.
    pub fn masks(&self) -> BTreeMap<usize, Vec<bool>> {
        self.labels().into_iter().map(|l| (l, self.mask(l))).collect()
    }
}

/// Half-open cell range covered along one axis by position bin `p` (of
/// `pos_bins`) and size bin `s` (of `size_bins`). With 64 bins a size bin `s`
/// spans `s + 1` cells, so `[p, min(p + s + 1, 64))`.
pub fn cell_span(p: usize, s: usize, pos_bins: usize, size_bins: usize) -> (usize, usize) {
    let start = (p * GRID / pos_bins).min(GRID);
    let cells = s * GRID / size_bins + 1;
    (start, (start + cells).min(GRID))
}

fn slots(v: Option<&Value>) -> Option<&[usize]> {
    v.and_then(Value::bins).filter(|b| b.len() == 2)
}

/// Paints element boxes in depth order; later elements own the cells they
/// cover. Coordinates are relative to the canvas, so aspect ratio is ignored.
pub fn rasterize_labels(doc: &Document, schema: &DocumentSchema, label_attr: &str) -> LabelGrid {
    let pos_bins = schema.element_attr(POSITION_ATTR).map_or(GRID, |s| s.cardinality);
    let size_bins = schema.element_attr(SIZE_ATTR).map_or(GRID, |s| s.cardinality);
    let mut owner = vec![None; GRID * GRID];
    for el in &doc.elements {
        let (Some(label), Some(pos), Some(size)) =
            (el.get(label_attr).and_then(Value::bin), slots(el.get(POSITION_ATTR)), slots(el.get(SIZE_ATTR)))
        else {
            continue;
        };
        let (x0, x1) = cell_span(pos[0], size[0], pos_bins, size_bins);
        let (y0, y1) = cell_span(pos[1], size[1], pos_bins, size_bins);
        for y in y0..y1 {
            owner[y * GRID + x0..y * GRID + x1].iter_mut().for_each(|c| *c = Some(label));
        }
    }
    LabelGrid { owner }
}

/// Mean over labels present in either document of the IoU between their
/// masks. A label missing from one document scores 0.
pub fn layout_miou(a: &Document, b: &Document, schema: &DocumentSchema) -> f64 {
    let ga = rasterize_labels(a, schema, &schema.label_attr);
    let gb = rasterize_labels(b, schema, &schema.label_attr);
    let mut labels = ga.labels();
    labels.extend(gb.labels());
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return 1.0;
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (x, y) in ga.owner.iter().zip(&gb.owner) {
                let (p, q) = (*x == Some(l), *y == Some(l));
                inter += (p && q) as usize;
                union += (p || q) as usize;
            }
            inter as f64 / union as f64
        })
        .sum();
    total / labels.len() as f64
}

/// Average of [`layout_miou`] over paired documents.
pub fn dataset_miou(reference: &[Document], other: &[Document], schema: &DocumentSchema) -> Result<f64> {
    if reference.len() != other.len() || reference.is_empty() {
        return Err(Error::invalid(format!(
            "mIoU needs equally many documents, got {} and {}",
            reference.len(),
            other.len()
        )));
    }
    let total: f64 = reference.iter().zip(other).map(|(a, b)| layout_miou(a, b, schema)).sum();
    Ok(total / reference.len() as f64)
}
