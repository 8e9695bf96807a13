//! Reconstruction, KL and weight-decay terms of the training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::document::Value;
use crate::error::{Error, Result};
use crate::model::{AttrInput, Dropout, HeadOut, LatentDistribution, Model, Packed, Prediction};
use crate::tape::{Grads, Graph, Mat, Var};

/// Where the decoder's latent code comes from during a loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentNoise {
    /// Decode `mu` directly.
    Mean,
    /// Reparameterized sample with noise drawn from this seed.
    Seeded(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeLoss {
    /// `canvas.<name>` or `element.<name>`.
    pub name: String,
    pub value: f64,
}

/// Terms of one loss evaluation, each averaged over the documents of the
/// batch. `total = sum(attributes) + lambda_kl * kl_term + lambda_l2 * l2_term`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub attributes: Vec<AttributeLoss>,
    pub kl_term: f64,
    /// Squared norm of every trainable parameter.
    pub l2_term: f64,
    pub lambda_kl: f64,
    pub lambda_l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn reconstruction(&self) -> f64 {
        self.attributes.iter().map(|a| a.value).sum()
    }

    /// `total` recomputed from the terms.
    pub fn recomputed_total(&self) -> f64 {
        self.reconstruction() + self.lambda_kl * self.kl_term + self.lambda_l2 * self.l2_term
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.kl_term.is_finite() && self.attributes.iter().all(|a| a.value.is_finite())
    }

    /// Weighted average of several breakdowns.
    pub fn weighted_mean(parts: &[(LossBreakdown, f64)]) -> Option<LossBreakdown> {
        let (first, _) = parts.first()?;
        let w: f64 = parts.iter().map(|(_, w)| w).sum();
        let avg = |f: &dyn Fn(&LossBreakdown) -> f64| parts.iter().map(|(b, k)| f(b) * k).sum::<f64>() / w;
        Some(LossBreakdown {
            attributes: first
                .attributes
                .iter()
                .enumerate()
                .map(|(i, a)| AttributeLoss { name: a.name.clone(), value: avg(&|b| b.attributes[i].value) })
                .collect(),
            kl_term: avg(&|b| b.kl_term),
            l2_term: avg(&|b| b.l2_term),
            lambda_kl: first.lambda_kl,
            lambda_l2: first.lambda_l2,
            total: avg(&|b| b.total),
        })
    }
}

/// `1/2 * sum_d (mu_d^2 + sigma_d^2 - ln sigma_d^2 - 1)`.
pub fn kl_term(dist: &LatentDistribution) -> f64 {
    0.5 * dist.mu.iter().zip(&dist.sigma).map(|(m, s)| m * m + s * s - (s * s).ln() - 1.0).sum::<f64>()
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    logits[target] - lse
}

/// Loss of one attribute over the rows of `prediction`: cross-entropy summed
/// over slots (categorical) or squared error averaged over dims (numerical),
/// summed over rows. Rows whose target is `None` contribute nothing.
pub fn attribute_loss(targets: &[Option<Value>], prediction: &Prediction) -> Result<f64> {
    if targets.len() != prediction.rows() {
        return Err(Error::config(format!("{} targets for {} predicted rows", targets.len(), prediction.rows())));
    }
    let mut total = 0.0;
    for (row, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        match (prediction, t) {
            (Prediction::Logits { cardinality, dims, values }, Value::Categorical(bins)) if bins.len() == *dims => {
                let r = values.row(row);
                for (s, &b) in bins.iter().enumerate() {
                    if b >= *cardinality {
                        return Err(Error::config(format!("target bin {b} outside [0, {cardinality})")));
                    }
                    total -= log_softmax_at(&r[s * cardinality..(s + 1) * cardinality], b);
                }
            }
            (Prediction::Regression(values), Value::Numerical(x)) if x.len() == values.cols => {
                let se: f64 = values.row(row).iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                total += se / x.len() as f64;
            }
            _ => return Err(Error::config("target does not match the prediction's kind or shape")),
        }
    }
    Ok(total)
}

/// Loss terms as graph nodes.
pub(crate) struct LossNodes {
    pub attributes: Vec<(String, Var)>,
    pub kl: Var,
    /// `sum(attributes) + lambda_kl * kl`; the weight decay is added outside
    /// the graph.
    pub objective: Var,
}

fn term(g: &mut Graph, out: &HeadOut, target: &AttrInput, weight: f64) -> Var {
    match (out, target) {
        (HeadOut::Categorical(slots), AttrInput::Categorical(bins)) => {
            let parts: Vec<(Var, f64)> = slots
                .iter()
                .zip(bins)
                .map(|(logits, t)| (g.softmax_xent(*logits, t.clone(), vec![weight; t.len()]), 1.0))
                .collect();
            g.combine(&parts)
        }
        (HeadOut::Numerical(pred), AttrInput::Numerical { values, present }) => {
            let w = present.iter().map(|&p| if p { weight } else { 0.0 }).collect();
            g.mse(*pred, values.clone(), w)
        }
        _ => unreachable!("heads and targets come from the same schema"),
    }
}

pub(crate) fn loss_nodes(
    model: &Model,
    g: &mut Graph,
    packed: &Packed,
    lambda_kl: f64,
    eps: Option<Mat>,
    dropout: &mut Dropout,
) -> LossNodes {
    let tf = model.teacher_forced(g, packed, eps, dropout);
    let w = 1.0 / packed.size() as f64;
    let schema = model.schema();
    let mut attributes = Vec::new();
    for ((spec, out), target) in schema.canvas_attrs.iter().zip(&tf.decoded.canvas).zip(&packed.canvas) {
        attributes.push((format!("canvas.{}", spec.name), term(g, out, target, w)));
    }
    for ((spec, out), target) in schema.element_attrs.iter().zip(&tf.decoded.elements).zip(&packed.elements) {
        attributes.push((format!("element.{}", spec.name), term(g, out, target, w)));
    }
    let kl = g.kl(tf.encoded.mu, tf.encoded.logvar, vec![w; packed.size()]);
    let mut parts: Vec<(Var, f64)> = attributes.iter().map(|(_, v)| (*v, 1.0)).collect();
    parts.push((kl, lambda_kl));
    let objective = g.combine(&parts);
    LossNodes { attributes, kl, objective }
}

pub(crate) fn noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

pub(crate) fn noise_for(mode: LatentNoise, rows: usize, cols: usize) -> Option<Mat> {
    match mode {
        LatentNoise::Mean => None,
        LatentNoise::Seeded(seed) => Some(noise(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))),
    }
}

pub(crate) fn breakdown(model: &Model, g: &Graph, nodes: &LossNodes, lambda_kl: f64, lambda_l2: f64) -> LossBreakdown {
    let attributes: Vec<AttributeLoss> =
        nodes.attributes.iter().map(|(name, v)| AttributeLoss { name: name.clone(), value: g.scalar(*v) }).collect();
    let kl_term = g.scalar(nodes.kl);
    let l2_term = model.params().sum_sq();
    let total = g.scalar(nodes.objective) + lambda_l2 * l2_term;
    LossBreakdown { attributes, kl_term, l2_term, lambda_kl, lambda_l2, total }
}

/// Teacher-forced loss of a batch: ground-truth lengths, and ground-truth
/// previous elements for autoregressive variants. Dropout is off.
pub fn total_loss(
    model: &Model,
    batch: &Batch,
    lambda_kl: f64,
    lambda_l2: f64,
    mode: LatentNoise,
) -> Result<LossBreakdown> {
    Ok(loss_and_gradients(model, batch, lambda_kl, lambda_l2, mode)?.0)
}

/// [`total_loss`] together with its gradient for every parameter, the
/// weight-decay term included.
pub fn loss_and_gradients(
    model: &Model,
    batch: &Batch,
    lambda_kl: f64,
    lambda_l2: f64,
    mode: LatentNoise,
) -> Result<(LossBreakdown, Grads)> {
    let packed = Packed::from_batch(batch, model.schema())?;
    let eps = noise_for(mode, packed.size(), model.config().latent_dim);
    let mut g = Graph::new(model.params());
    let nodes = loss_nodes(model, &mut g, &packed, lambda_kl, eps, &mut Dropout::off());
    let b = breakdown(model, &g, &nodes, lambda_kl, lambda_l2);
    if !b.is_finite() {
        return Err(Error::TrainingFault(format!("non-finite loss: {b:?}")));
    }
    let mut grads = g.backward(nodes.objective);
    add_weight_decay(&mut grads, model, lambda_l2);
    Ok((b, grads))
}

pub(crate) fn add_weight_decay(grads: &mut Grads, model: &Model, lambda_l2: f64) {
    if lambda_l2 == 0.0 {
        return;
    }
    for (g, p) in grads.mats.iter_mut().zip(model.params().values()) {
        g.data.iter_mut().zip(&p.data).for_each(|(g, p)| *g += 2.0 * lambda_l2 * p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(mu: f64, sigma: f64) -> LatentDistribution {
        LatentDistribution { mu: vec![mu], sigma: vec![sigma] }
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_term(&dist(0.0, 1.0)), 0.0);
        assert!((kl_term(&dist(1.0, 1.0)) - 0.5).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl_term(&dist(0.0, e.sqrt())) - (e - 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_loss_examples() {
        let uniform = Prediction::Logits { cardinality: 64, dims: 1, values: Mat::zeros(1, 64) };
        let l = attribute_loss(&[Some(Value::Categorical(vec![17]))], &uniform).unwrap();
        assert!((l - 64f64.ln()).abs() < 1e-12);

        let mut peaked = Mat::zeros(1, 64);
        peaked.data[5] = 1e3;
        let p = Prediction::Logits { cardinality: 64, dims: 1, values: peaked };
        assert!(attribute_loss(&[Some(Value::Categorical(vec![5]))], &p).unwrap() < 1e-6);
        // absent rows contribute nothing
        assert_eq!(attribute_loss(&[None], &uniform).unwrap(), 0.0);
    }

    #[test]
    fn numerical_loss_examples() {
        let p = Prediction::Regression(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let same = [Some(Value::Numerical(vec![1.0, 2.0])), Some(Value::Numerical(vec![3.0, 4.0]))];
        assert_eq!(attribute_loss(&same, &p).unwrap(), 0.0);
        let off = [Some(Value::Numerical(vec![0.0, 2.0])), None];
        assert!((attribute_loss(&off, &p).unwrap() - 0.5).abs() < 1e-12);
        assert!(attribute_loss(&off[..1], &p).is_err());
    }
}
