//! Brute-force reference implementations of the evaluation metrics.

use canvasvae::document::{Document, Element, Value};
use rand::Rng;

/// Clipped unigram precision by explicit counting, times the brevity factor.
pub fn bleu<T: PartialEq>(pred: &[T], reference: &[T]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut matched = 0usize;
    let mut seen: Vec<&T> = Vec::new();
    for t in pred {
        if seen.contains(&t) {
            continue;
        }
        seen.push(t);
        let in_pred = pred.iter().filter(|x| *x == t).count();
        let in_ref = reference.iter().filter(|x| *x == t).count();
        matched += in_pred.min(in_ref);
    }
    let (n, r) = (pred.len() as f64, reference.len() as f64);
    let bp = if n < r { (1.0 - r / n).exp() } else { 1.0 };
    matched as f64 / n * bp
}

pub fn intersection(h1: &[f64], h2: &[f64]) -> f64 {
    let s1: f64 = h1.iter().sum();
    let s2: f64 = h2.iter().sum();
    let mut total = 0.0;
    for i in 0..h1.len() {
        let (a, b) = (h1[i] / s1, h2[i] / s2);
        total += if a < b { a } else { b };
    }
    total
}

/// Label of the topmost element covering cell `(x, y)` of the 64x64 grid,
/// found by testing each element from the top down.
fn owner(doc: &Document, x: usize, y: usize) -> Option<usize> {
    doc.elements.iter().rev().find_map(|e| {
        let label = e.get("type")?.bin()?;
        let p = e.get("position")?.bins()?;
        let s = e.get("size")?.bins()?;
        let covers = |c: usize, p: usize, s: usize| c >= p && c <= p + s;
        (covers(x, p[0], s[0]) && covers(y, p[1], s[1])).then_some(label)
    })
}

pub fn miou(a: &Document, b: &Document) -> f64 {
    let mut cells = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            cells.push((owner(a, x, y), owner(b, x, y)));
        }
    }
    let mut labels: Vec<usize> = cells.iter().flat_map(|(p, q)| [*p, *q]).flatten().collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for &l in &labels {
        let inter = cells.iter().filter(|(p, q)| *p == Some(l) && *q == Some(l)).count();
        let union = cells.iter().filter(|(p, q)| *p == Some(l) || *q == Some(l)).count();
        total += inter as f64 / union as f64;
    }
    total / labels.len() as f64
}

/// Layout-only document with random boxes; enough for mIoU.
pub fn random_layout(rng: &mut impl Rng, labels: usize) -> Document {
    let n = rng.gen_range(1..=8);
    let elements = (0..n)
        .map(|_| {
            let mut e = Element::default();
            e.set("type", Value::Categorical(vec![rng.gen_range(0..labels)]));
            e.set("position", Value::Categorical(vec![rng.gen_range(0..64), rng.gen_range(0..64)]));
            e.set("size", Value::Categorical(vec![rng.gen_range(0..64), rng.gen_range(0..64)]));
            e
        })
        .collect();
    Document { id: 0, canvas: Default::default(), elements }
}
