//! Schema-faithful synthetic documents.
//!
//! Documents follow loose design conventions (a full-canvas background, a
//! top-to-bottom flow of elements, a small per-document palette, textures
//! tied to the document category) so that a model has structure to learn.
//! All statistics here are arbitrary and configurable.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::document::{quantize, Document, DocumentSchema, Element, Value, LENGTH_ATTR};
use crate::error::{Error, Result};

/// Distribution of per-document element counts over `[1, max_length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LengthDistribution {
    Uniform {
        min: usize,
        max: usize,
    },
    /// Shifted geometric with the given untruncated mean, truncated at `max`.
    Geometric {
        mean: f64,
        max: usize,
    },
    /// Explicit weights for lengths 1, 2, ...
    Weights {
        weights: Vec<f64>,
    },
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution::Geometric { mean: 7.0, max: 50 }
    }
}

impl LengthDistribution {
    /// Probability of each length; index `i` is length `i + 1`.
    pub fn pmf(&self, max_length: usize) -> Result<Vec<f64>> {
        let mut w = vec![0.0; max_length];
        match self {
            LengthDistribution::Uniform { min, max } => {
                if *min < 1 || min > max || *max > max_length {
                    return Err(Error::invalid(format!("uniform length range [{min}, {max}] invalid")));
                }
                w[min - 1..*max].iter_mut().for_each(|x| *x = 1.0);
            }
            LengthDistribution::Geometric { mean, max } => {
                if !(*mean >= 1.0) || *max < 1 || *max > max_length {
                    return Err(Error::invalid(format!("geometric length (mean {mean}, max {max}) invalid")));
                }
                let q = 1.0 - 1.0 / mean;
                for (k, x) in w.iter_mut().take(*max).enumerate() {
                    *x = q.powi(k as i32);
                }
            }
            LengthDistribution::Weights { weights } => {
                if weights.is_empty() || weights.len() > max_length || weights.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::invalid("length weights must be non-negative and fit max_length"));
                }
                w[..weights.len()].copy_from_slice(weights);
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("length distribution has no mass"));
        }
        Ok(w.into_iter().map(|x| x / total).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// `crello-like` or `rico-like`.
    pub family: String,
    pub n_docs: usize,
    /// Train / validation / test fractions.
    pub split_ratios: [f64; 3],
    pub length: LengthDistribution,
    /// Dimension of synthetic image features (crello-like only).
    pub feature_dim: usize,
    /// Number of distinct synthetic textures.
    pub textures: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            family: "crello-like".into(),
            n_docs: 1000,
            split_ratios: [0.8, 0.1, 0.1],
            length: LengthDistribution::default(),
            feature_dim: 256,
            textures: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn schema(&self) -> Result<DocumentSchema> {
        DocumentSchema::by_family(&self.family, self.feature_dim)
    }

    pub fn check(&self) -> Result<()> {
        self.schema()?;
        if self.n_docs < 1 {
            return Err(Error::invalid("n_docs must be at least 1"));
        }
        if self.feature_dim < 1 || self.textures < 1 {
            return Err(Error::invalid("feature_dim and textures must be at least 1"));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must be non-negative and sum to 1"));
        }
        self.length.pmf(50)?;
        Ok(())
    }
}

/// Generates `config.n_docs` documents with ids `0..n_docs`.
/// Output depends only on `(config, seed)`.
pub fn generate_documents(config: &GeneratorConfig, seed: u64) -> Result<Vec<Document>> {
    config.check()?;
    let schema = config.schema()?;
    let pmf = config.length.pmf(schema.max_length)?;
    let lengths = WeightedIndex::new(&pmf).map_err(|e| Error::invalid(e.to_string()))?;
    let docs = (0..config.n_docs as u64)
        .map(|id| {
            let mut rng = doc_rng(seed, id);
            let n = lengths.sample(&mut rng) + 1;
            let mut doc = match schema.family.as_str() {
                "crello-like" => crello_doc(&mut rng, n, config),
                _ => rico_doc(&mut rng, n),
            };
            doc.id = id;
            doc
        })
        .collect();
    Ok(docs)
}

fn doc_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Unit-norm pseudo-random feature of a texture, stable across runs.
pub fn texture_feature(texture: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57_u64 ^ ((texture as u64) << 20) ^ dim as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn q64(x: f64) -> usize {
    quantize(x, 0.0, 1.0, 64).expect("finite geometry")
}

/// Quantized (position, size) pair; a size bin never runs past the canvas.
fn boxed(left: f64, top: f64, width: f64, height: f64) -> (Value, Value) {
    let (l, t) = (q64(left), q64(top));
    let w = q64(width).min(63 - l);
    let h = q64(height).min(63 - t);
    (Value::Categorical(vec![l, t]), Value::Categorical(vec![w, h]))
}

fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
    rng.gen_range(-amount..=amount)
}

const IMAGE: usize = 1;
const TEXT: usize = 2;
const SOLID: usize = 3;

fn crello_doc(rng: &mut ChaCha8Rng, n: usize, config: &GeneratorConfig) -> Document {
    let mut doc = Document::default();
    let group = rng.gen_range(0..7usize);
    let format = group + 7 * rng.gen_range(0..(68 - group).div_ceil(7));
    let (mut width, mut height) = ((format * 5 + 3) % 42, (format * 13 + 7) % 47);
    if rng.gen_bool(0.1) {
        width = rng.gen_range(0..42);
        height = rng.gen_range(0..47);
    }
    let category = (group * 3 + rng.gen_range(0..6)) % 24;
    for (name, v) in [
        (LENGTH_ATTR, n),
        ("group", group),
        ("format", format),
        ("width", width),
        ("height", height),
        ("category", category),
    ] {
        doc.canvas.insert(name.into(), Value::Categorical(vec![v]));
    }

    let palette: [[f64; 3]; 2] = [[rng.gen(), rng.gen(), rng.gen()], [rng.gen(), rng.gen(), rng.gen()]];
    let centered = rng.gen_bool(0.5);
    let texture_base = category * 2;
    let types = WeightedIndex::new([0.25, 0.2, 0.35, 0.05, 0.1, 0.05]).unwrap();

    for t in 0..n {
        let kind = if t == 0 {
            if rng.gen_bool(0.5) {
                SOLID
            } else {
                IMAGE
            }
        } else {
            types.sample(rng)
        };
        let (pos, size) = if t == 0 {
            boxed(0.0, 0.0, 1.0, 1.0)
        } else {
            let (w, h) = match kind {
                TEXT => (rng.gen_range(0.5..0.84), rng.gen_range(0.05..0.12)),
                IMAGE => (rng.gen_range(0.3..0.6), rng.gen_range(0.15..0.35)),
                _ => (rng.gen_range(0.1..0.3), rng.gen_range(0.05..0.2)),
            };
            let top = ((t - 1) as f64 / (n - 1).max(1) as f64 * 0.85 + jitter(rng, 0.03)).clamp(0.0, 1.0 - h);
            let left = if centered { (1.0 - w) / 2.0 } else { 0.08 } + jitter(rng, 0.02);
            boxed(left.clamp(0.0, 1.0 - w), top, w, h)
        };
        let opacity = if rng.gen_bool(0.9) { 1.0 } else { rng.gen_range(0.3..1.0) };
        let mut el = Element::default();
        el.set("type", Value::Categorical(vec![kind]));
        el.set("position", pos);
        el.set("size", size);
        el.set("opacity", Value::Categorical(vec![quantize(opacity, 0.0, 1.0, 8).unwrap()]));
        match kind {
            TEXT | SOLID => {
                let base = palette[usize::from(kind == SOLID)];
                let rgb = base
                    .iter()
                    .map(|c| quantize((c + jitter(rng, 0.03)).clamp(0.0, 1.0), 0.0, 1.0, 16).unwrap())
                    .collect();
                el.set("color", Value::Categorical(rgb));
            }
            _ => {
                let texture = (texture_base + rng.gen_range(0..4) + 7 * kind) % config.textures;
                el.set("image", Value::Numerical(texture_feature(texture, config.feature_dim)));
            }
        }
        doc.elements.push(el);
    }
    doc
}

const RICO_TEXT: usize = 0;
const RICO_ICON: usize = 2;
const RICO_TEXT_BUTTON: usize = 3;
const RICO_LIST_ITEM: usize = 4;
const RICO_INPUT: usize = 5;
const RICO_TOOLBAR: usize = 18;

fn rico_doc(rng: &mut ChaCha8Rng, n: usize) -> Document {
    let mut doc = Document::default();
    doc.canvas.insert(LENGTH_ATTR.into(), Value::Categorical(vec![n]));
    let mut weights = vec![0.01; 27];
    for (c, w) in [(0, 0.3), (1, 0.1), (2, 0.15), (3, 0.1), (4, 0.15), (5, 0.05)] {
        weights[c] = w;
    }
    let components = WeightedIndex::new(&weights).unwrap();
    for t in 0..n {
        let component = if t == 0 && rng.gen_bool(0.7) { RICO_TOOLBAR } else { components.sample(rng) };
        let (pos, size) = if component == RICO_TOOLBAR {
            boxed(0.0, 0.0, 1.0, 0.08)
        } else {
            let top = (0.1 + t as f64 / n as f64 * 0.85 + jitter(rng, 0.02)).clamp(0.0, 0.95);
            match component {
                RICO_ICON => {
                    let left = if rng.gen_bool(0.5) { 0.04 } else { 0.88 };
                    boxed(left, top, 0.08, 0.045)
                }
                RICO_TEXT_BUTTON => boxed(0.1 + jitter(rng, 0.05), top, 0.8, 0.06),
                RICO_TEXT => boxed(0.15, top, rng.gen_range(0.3..0.8), 0.03),
                _ => boxed(0.0, top, 1.0, rng.gen_range(0.05..0.12)),
            }
        };
        let mut el = Element::default();
        el.set("component", Value::Categorical(vec![component]));
        el.set("position", pos);
        el.set("size", size);
        if component == RICO_ICON {
            el.set("icon", Value::Categorical(vec![rng.gen_range(0..59)]));
        }
        if component == RICO_TEXT_BUTTON {
            el.set("button", Value::Categorical(vec![rng.gen_range(0..25)]));
        }
        let interactive = matches!(component, RICO_ICON | RICO_TEXT_BUTTON | RICO_LIST_ITEM | RICO_INPUT);
        let clickable = interactive ^ rng.gen_bool(0.05);
        el.set("clickable", Value::Categorical(vec![usize::from(clickable)]));
        doc.elements.push(el);
    }
    doc
}
