//! Encoder/decoder over documents: encode to a diagonal Gaussian posterior,
//! sample or take the mean, decode back to attribute predictions.

mod checkpoint;
mod config;
mod layers;
mod network;
mod packed;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Variant};

pub(crate) use layers::{AttrInput, Dropout, HeadOut};
pub(crate) use network::{reparameterize, Decoded, Encoded};
pub(crate) use packed::Packed;

use crate::dataset::batchify;
use crate::dataset::Batch;
use crate::document::{AttrKind, Document, DocumentSchema, Element, Value, LENGTH_ATTR};
use crate::error::{Error, Result};
use crate::tape::{Graph, Mat, ParamStore};
use network::Network;

/// Documents per forward pass in the inference helpers.
const CHUNK: usize = 64;

/// Approximate posterior `N(mu, diag(sigma^2))` of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    Mean,
}

/// Draws `z = mu + sigma * eps` with `eps ~ N(0, I)`, or returns `mu`.
pub fn sample_latent(dist: &LatentDistribution, mode: SampleMode, seed: u64) -> Vec<f64> {
    match mode {
        SampleMode::Mean => dist.mu.clone(),
        SampleMode::Stochastic => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dist.mu
                .iter()
                .zip(&dist.sigma)
                .map(|(m, s)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + s * e
                })
                .collect()
        }
    }
}

/// Raw decoder output of one attribute.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// `rows x (dims * cardinality)`; slot `s` occupies columns
    /// `s * cardinality .. (s + 1) * cardinality`.
    Logits { cardinality: usize, dims: usize, values: Mat },
    /// `rows x dims`.
    Regression(Mat),
}

impl Prediction {
    pub fn rows(&self) -> usize {
        match self {
            Prediction::Logits { values, .. } | Prediction::Regression(values) => values.rows,
        }
    }

    /// Maximum-likelihood value at `row`: argmax per slot (ties go to the
    /// smallest bin) or the regression output.
    pub fn value_at(&self, row: usize) -> Value {
        match self {
            Prediction::Logits { cardinality, dims, values } => {
                let r = values.row(row);
                Value::Categorical((0..*dims).map(|s| argmax(&r[s * cardinality..(s + 1) * cardinality])).collect())
            }
            Prediction::Regression(values) => Value::Numerical(values.row(row).to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrPrediction {
    pub name: String,
    pub prediction: Prediction,
}

/// Decoder output for one latent code. Canvas predictions have one row,
/// element predictions one row per decoded slot.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedDocument {
    /// Forced length, or the argmax of `predicted_length_logits` plus one.
    pub length: usize,
    /// Logit of each length `1..=max_length` (index `length - 1`).
    pub predicted_length_logits: Vec<f64>,
    pub canvas: Vec<AttrPrediction>,
    pub elements: Vec<AttrPrediction>,
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn element_at(preds: &[AttrPrediction], row: usize, schema: &DocumentSchema) -> Element {
    let label = preds
        .iter()
        .find(|p| p.name == schema.label_attr)
        .map(|p| p.prediction.value_at(row))
        .and_then(|v| v.bin())
        .unwrap_or(0);
    let mut el = Element::default();
    for (spec, p) in schema.element_attrs.iter().zip(preds) {
        if spec.applies(label) {
            el.set(spec.name.clone(), p.prediction.value_at(row));
        }
    }
    el
}

/// Maximum-likelihood document of a decoder output. Element attributes that
/// do not apply to the predicted label are dropped.
pub fn to_document(decoded: &DecodedDocument, schema: &DocumentSchema) -> Document {
    let mut doc = Document::default();
    for (spec, p) in schema.canvas_attrs.iter().zip(&decoded.canvas) {
        let v =
            if spec.name == LENGTH_ATTR { Value::Categorical(vec![decoded.length]) } else { p.prediction.value_at(0) };
        doc.canvas.insert(spec.name.clone(), v);
    }
    doc.elements = (0..decoded.length).map(|t| element_at(&decoded.elements, t, schema)).collect();
    doc
}

/// Trained parameters plus the architecture and schema they belong to.
#[derive(Clone)]
pub struct Model {
    config: ModelConfig,
    schema: DocumentSchema,
    params: ParamStore,
    net: Network,
}

/// Graph outputs of a teacher-forced pass.
pub(crate) struct TeacherForced {
    pub encoded: Encoded,
    pub decoded: Decoded,
}

impl Model {
    pub fn new(config: ModelConfig, schema: DocumentSchema, seed: u64) -> Result<Self> {
        schema.check()?;
        config.check(&schema)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Network::new(&mut params, &mut rng, &config, &schema);
        Ok(Model { config, schema, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &DocumentSchema {
        &self.schema
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Encoder then decoder with ground-truth lengths and, for autoregressive
    /// variants, ground-truth previous elements. `eps` is the reparameterization
    /// noise (`None` decodes the mean code).
    pub(crate) fn teacher_forced(
        &self,
        g: &mut Graph,
        packed: &Packed,
        eps: Option<Mat>,
        dropout: &mut Dropout,
    ) -> TeacherForced {
        let encoded = self.net.encode(g, packed, dropout);
        let z = reparameterize(g, &encoded, eps);
        let decoded = self.net.decode(g, z, packed, dropout);
        TeacherForced { encoded, decoded }
    }

    /// Mean-code decoding of a batch with ground-truth lengths and, for
    /// autoregressive variants, ground-truth previous elements.
    pub fn decode_teacher_forced(&self, batch: &Batch) -> Result<Vec<DecodedDocument>> {
        let packed = Packed::from_batch(batch, &self.schema)?;
        let mut g = Graph::new(&self.params);
        let tf = self.teacher_forced(&mut g, &packed, None, &mut Dropout::off());
        let canvas = self.collect(&g, &tf.decoded.canvas, true);
        let elements = split_rows(&self.collect(&g, &tf.decoded.elements, false), &packed.lengths);
        let length = self.length_index();
        Ok(elements
            .into_iter()
            .enumerate()
            .map(|(b, elements)| {
                let canvas: Vec<AttrPrediction> = canvas.iter().map(|p| take_rows(p, &[b])).collect();
                let Prediction::Logits { values, .. } = &canvas[length].prediction else {
                    unreachable!("length is categorical")
                };
                DecodedDocument {
                    length: packed.lengths[b],
                    predicted_length_logits: values.row(0).to_vec(),
                    canvas,
                    elements,
                }
            })
            .collect())
    }

    /// Posterior of every document in the batch.
    pub fn encode(&self, batch: &Batch) -> Result<Vec<LatentDistribution>> {
        let packed = Packed::from_batch(batch, &self.schema)?;
        let mut g = Graph::new(&self.params);
        let enc = self.net.encode(&mut g, &packed, &mut Dropout::off());
        let (mu, lv) = (g.value(enc.mu), g.value(enc.logvar));
        Ok((0..packed.size())
            .map(|b| LatentDistribution {
                mu: mu.row(b).to_vec(),
                sigma: lv.row(b).iter().map(|l| (0.5 * l).exp()).collect(),
            })
            .collect())
    }

    pub fn encode_documents(&self, docs: &[Document]) -> Result<Vec<LatentDistribution>> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(CHUNK) {
            out.extend(self.encode(&batchify(chunk, &self.schema)?)?);
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f64], forced_length: Option<usize>) -> Result<DecodedDocument> {
        let forced = forced_length.map(|n| vec![n]);
        Ok(self.decode_batch(&[z.to_vec()], forced.as_deref())?.remove(0))
    }

    /// Decodes several latent codes at once. Each document's length is
    /// forced when `forced_lengths` is given, otherwise predicted.
    pub fn decode_batch(&self, zs: &[Vec<f64>], forced_lengths: Option<&[usize]>) -> Result<Vec<DecodedDocument>> {
        let l = self.config.latent_dim;
        let max_len = self.config.max_length;
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        for z in zs {
            if z.len() != l {
                return Err(Error::invalid(format!("latent code has {} dims, expected {l}", z.len())));
            }
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("latent code is not finite"));
            }
        }
        if let Some(f) = forced_lengths {
            if f.len() != zs.len() {
                return Err(Error::invalid("one forced length per latent code is required"));
            }
            if let Some(&n) = f.iter().find(|&&n| n == 0 || n > max_len) {
                return Err(Error::invalid(format!("forced length {n} outside [1, {max_len}]")));
            }
        }
        let zmat = Mat::from_vec(zs.len(), l, zs.concat());
        let mut g = Graph::new(&self.params);
        let z = g.input(zmat.clone());
        let canvas_out = self.net.decode_canvas(&mut g, z);
        let canvas = self.collect(&g, &canvas_out, true);
        let length_idx = self.length_index();
        let length_logits: Vec<Vec<f64>> = match &canvas[length_idx].prediction {
            Prediction::Logits { values, .. } => (0..zs.len()).map(|b| values.row(b).to_vec()).collect(),
            Prediction::Regression(_) => unreachable!("length is categorical"),
        };
        let lengths: Vec<usize> = match forced_lengths {
            Some(f) => f.to_vec(),
            None => length_logits.iter().map(|r| argmax(r) + 1).collect(),
        };
        let elements = if self.config.variant.is_autoregressive() {
            drop(g);
            self.greedy_elements(&zmat, &lengths)?
        } else {
            let packed = Packed::layout(&lengths);
            let out = self.net.decode_elements(&mut g, z, &packed, &mut Dropout::off());
            let all = self.collect(&g, &out, false);
            split_rows(&all, &lengths)
        };
        Ok(elements
            .into_iter()
            .enumerate()
            .map(|(b, elements)| DecodedDocument {
                length: lengths[b],
                predicted_length_logits: length_logits[b].clone(),
                canvas: canvas.iter().map(|p| take_rows(p, &[b])).collect(),
                elements,
            })
            .collect())
    }

    /// Step-by-step decoding: each step sees the argmax elements emitted so
    /// far and is read off the last row of its sequence.
    fn greedy_elements(&self, zmat: &Mat, lengths: &[usize]) -> Result<Vec<Vec<AttrPrediction>>> {
        let n = lengths.len();
        let specs = &self.schema.element_attrs;
        let mut emitted: Vec<Vec<Element>> = vec![Vec::new(); n];
        // per document, per attribute: collected output rows
        let mut rows: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); specs.len()]; n];
        let max_steps = lengths.iter().copied().max().unwrap_or(0);
        for s in 1..=max_steps {
            let active: Vec<usize> = (0..n).filter(|&b| lengths[b] >= s).collect();
            let prefixes: Vec<Document> = active
                .iter()
                .map(|&b| {
                    let mut elements = emitted[b].clone();
                    elements.push(Element::default());
                    let mut doc = Document { elements, ..Default::default() };
                    doc.canvas.insert(LENGTH_ATTR.into(), Value::Categorical(vec![s]));
                    doc
                })
                .collect();
            let batch = batchify(&prefixes, &self.schema)?;
            let packed = Packed::from_batch(&batch, &self.schema)?;
            let mut g = Graph::new(&self.params);
            let zrows: Vec<f64> = active.iter().flat_map(|&b| zmat.row(b).to_vec()).collect();
            let z = g.input(Mat::from_vec(active.len(), zmat.cols, zrows));
            let out = self.net.decode_elements(&mut g, z, &packed, &mut Dropout::off());
            let last: Vec<usize> = (0..active.len()).map(|i| packed.segs.start(i) + s - 1).collect();
            let all = self.collect(&g, &out, false);
            for (i, &b) in active.iter().enumerate() {
                let step: Vec<AttrPrediction> = all.iter().map(|p| take_rows(p, &[last[i]])).collect();
                emitted[b].push(element_at(&step, 0, &self.schema));
                for (k, p) in step.iter().enumerate() {
                    let values = match &p.prediction {
                        Prediction::Logits { values, .. } | Prediction::Regression(values) => values,
                    };
                    rows[b][k].extend_from_slice(&values.data);
                }
            }
        }
        Ok((0..n)
            .map(|b| {
                specs
                    .iter()
                    .zip(std::mem::take(&mut rows[b]))
                    .map(|(spec, data)| {
                        let cols = data.len() / lengths[b];
                        let values = Mat::from_vec(lengths[b], cols, data);
                        let prediction = match spec.kind {
                            AttrKind::Categorical => {
                                Prediction::Logits { cardinality: spec.cardinality, dims: spec.dims, values }
                            }
                            AttrKind::Numerical => Prediction::Regression(values),
                        };
                        AttrPrediction { name: spec.name.clone(), prediction }
                    })
                    .collect()
            })
            .collect())
    }

    fn length_index(&self) -> usize {
        self.schema
            .canvas_attrs
            .iter()
            .position(|s| s.name == LENGTH_ATTR)
            .expect("schema check guarantees a length attribute")
    }

    /// Reads head outputs off the graph as predictions.
    fn collect(&self, g: &Graph, outs: &[HeadOut], canvas: bool) -> Vec<AttrPrediction> {
        let specs = if canvas { &self.schema.canvas_attrs } else { &self.schema.element_attrs };
        specs
            .iter()
            .zip(outs)
            .map(|(spec, out)| {
                let prediction = match out {
                    HeadOut::Categorical(slots) => {
                        let mats: Vec<&Mat> = slots.iter().map(|v| g.value(*v)).collect();
                        let rows = mats[0].rows;
                        let mut values = Mat::zeros(rows, spec.dims * spec.cardinality);
                        for r in 0..rows {
                            let dst = values.row_mut(r);
                            for (s, m) in mats.iter().enumerate() {
                                dst[s * spec.cardinality..(s + 1) * spec.cardinality].copy_from_slice(m.row(r));
                            }
                        }
                        Prediction::Logits { cardinality: spec.cardinality, dims: spec.dims, values }
                    }
                    HeadOut::Numerical(v) => Prediction::Regression(g.value(*v).clone()),
                };
                AttrPrediction { name: spec.name.clone(), prediction }
            })
            .collect()
    }

    /// Mean-code reconstructions with predicted lengths; ids are kept.
    pub fn reconstruct(&self, docs: &[Document]) -> Result<Vec<Document>> {
        let dists = self.encode_documents(docs)?;
        let zs: Vec<Vec<f64>> = dists.into_iter().map(|d| d.mu).collect();
        let mut out = self.decode_documents(&zs)?;
        for (o, d) in out.iter_mut().zip(docs) {
            o.id = d.id;
        }
        Ok(out)
    }

    fn decode_documents(&self, zs: &[Vec<f64>]) -> Result<Vec<Document>> {
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(CHUNK) {
            for d in self.decode_batch(chunk, None)? {
                out.push(to_document(&d, &self.schema));
            }
        }
        for (i, d) in out.iter_mut().enumerate() {
            d.id = i as u64;
        }
        Ok(out)
    }

    /// `n` documents decoded from `z ~ N(0, I)`; ids are `0..n`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Document>> {
        if n == 0 {
            return Err(Error::invalid("generate needs n >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zs: Vec<Vec<f64>> =
            (0..n).map(|_| (0..self.config.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        self.decode_documents(&zs)
    }

    /// Decodes `(1 - a) * mu_a + a * mu_b` for `a = i / (steps - 1)`.
    pub fn interpolate(&self, a: &Document, b: &Document, steps: usize) -> Result<Vec<Document>> {
        if steps < 2 {
            return Err(Error::invalid("interpolation needs at least 2 steps"));
        }
        let dists = self.encode_documents(&[a.clone(), b.clone()])?;
        let (ma, mb) = (&dists[0].mu, &dists[1].mu);
        let zs: Vec<Vec<f64>> = (0..steps)
            .map(|i| {
                let t = i as f64 / (steps - 1) as f64;
                ma.iter().zip(mb).map(|(x, y)| (1.0 - t) * x + t * y).collect()
            })
            .collect();
        self.decode_documents(&zs)
    }
}

fn take_rows(p: &AttrPrediction, rows: &[usize]) -> AttrPrediction {
    let pick = |m: &Mat| {
        let data = rows.iter().flat_map(|&r| m.row(r).to_vec()).collect();
        Mat::from_vec(rows.len(), m.cols, data)
    };
    let prediction = match &p.prediction {
        Prediction::Logits { cardinality, dims, values } => {
            Prediction::Logits { cardinality: *cardinality, dims: *dims, values: pick(values) }
        }
        Prediction::Regression(values) => Prediction::Regression(pick(values)),
    };
    AttrPrediction { name: p.name.clone(), prediction }
}

/// Splits packed element predictions into per-document predictions.
fn split_rows(all: &[AttrPrediction], lengths: &[usize]) -> Vec<Vec<AttrPrediction>> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&n| {
            let rows: Vec<usize> = (start..start + n).collect();
            start += n;
            all.iter().map(|p| take_rows(p, &rows)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests;
