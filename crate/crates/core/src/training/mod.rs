//! Training objective, optimizer loop and the KL-weight sweep.

mod adam;
mod loss;

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{attribute_loss, kl_term, loss_and_gradients, total_loss, AttributeLoss, LatentNoise, LossBreakdown};

use crate::dataset::{batchify, Dataset, Split};
use crate::document::{Document, DocumentSchema};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{Checkpoint, Dropout, Model, ModelConfig, Packed};
use crate::tape::Graph;

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt.json";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_kl: f64,
    pub lambda_l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Cap on validation documents used for metrics; 0 uses all of them.
    pub eval_docs: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_kl: 1.0,
            lambda_l2: 1e-6,
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            eval_every: 1,
            eval_docs: 0,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lambda_kl > 0.0 && self.lambda_kl.is_finite()) {
            return Err(Error::config(format!("lambda_kl must be positive, got {}", self.lambda_kl)));
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return Err(Error::config(format!("lambda_l2 must be non-negative, got {}", self.lambda_l2)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_reconst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub miou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_gen: Option<f64>,
}

pub struct TrainOutcome {
    /// Best model by validation generation score; the last one when no
    /// validation ran.
    pub best: Model,
    pub last: Model,
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub history: Vec<EpochRecord>,
}

/// Reconstructions (mean codes, predicted lengths) and an equally sized
/// prior sample scored against `docs`.
pub fn evaluate(model: &Model, docs: &[Document], seed: u64) -> Result<MetricReport> {
    let recon = model.reconstruct(docs)?;
    let generated = model.generate(docs.len(), seed)?;
    MetricReport::evaluate(docs, &recon, &generated, model.schema())
}

/// Mean-code loss averaged over `docs`.
pub fn dataset_loss(
    model: &Model,
    docs: &[Document],
    lambda_kl: f64,
    lambda_l2: f64,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let mut parts = Vec::new();
    for chunk in docs.chunks(batch_size.max(1)) {
        let batch = batchify(chunk, model.schema())?;
        parts.push((total_loss(model, &batch, lambda_kl, lambda_l2, LatentNoise::Mean)?, chunk.len() as f64));
    }
    LossBreakdown::weighted_mean(&parts).ok_or_else(|| Error::invalid("no documents to score"))
}

/// Average KL divergence of the posteriors of `docs` from the prior.
pub fn mean_kl(model: &Model, docs: &[Document]) -> Result<f64> {
    let dists = model.encode_documents(docs)?;
    if dists.is_empty() {
        return Err(Error::invalid("no documents to encode"));
    }
    Ok(dists.iter().map(kl_term).sum::<f64>() / dists.len() as f64)
}

struct Log(Option<File>);

impl Log {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else { return Ok(Log(None)) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_LOG);
        Ok(Log(Some(File::create(&path).map_err(|e| Error::io(&path, e))?)))
    }

    fn write(&mut self, rec: &EpochRecord) -> Result<()> {
        if let Some(f) = &mut self.0 {
            let line = serde_json::to_string(rec)?;
            writeln!(f, "{line}").map_err(|e| Error::io(METRICS_LOG, e))?;
        }
        Ok(())
    }
}

fn save(model: &Model, step: u64, dir: Option<&Path>, name: &str) -> Result<()> {
    match dir {
        Some(dir) => Checkpoint::from_model(model, step).save(&dir.join(name)),
        None => Ok(()),
    }
}

/// Trains on the dataset's train split and selects by its validation split.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_documents(
        dataset.split(Split::Train),
        dataset.split(Split::Val),
        &dataset.schema,
        model_config,
        config,
        out_dir,
    )
}

/// Shuffled mini-batch Adam on `train_docs`. With `out_dir`, writes the
/// metrics log and the best and last checkpoints there; on a non-finite
/// loss the pre-update parameters are saved as the last good checkpoint and
/// a training fault is returned.
pub fn train_documents(
    train_docs: &[Document],
    val_docs: &[Document],
    schema: &DocumentSchema,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.check()?;
    if train_docs.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut model = Model::new(model_config.clone(), schema.clone(), config.seed)?;
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11);
    let mut log = Log::open(out_dir)?;
    let val: &[Document] = match config.eval_docs {
        0 => val_docs,
        n => &val_docs[..n.min(val_docs.len())],
    };
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut steps = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        let mut stop = false;
        for chunk in order.chunks(config.batch_size) {
            let docs: Vec<Document> = chunk.iter().map(|&i| train_docs[i].clone()).collect();
            let batch = batchify(&docs, schema)?;
            let packed = Packed::from_batch(&batch, schema)?;
            let eps = loss::noise(packed.size(), model_config.latent_dim, &mut rng);
            let (b, mut grads) = {
                let mut g = Graph::new(model.params());
                let mut dropout = Dropout { rate: model_config.dropout, rng: Some(&mut rng) };
                let nodes = loss::loss_nodes(&model, &mut g, &packed, config.lambda_kl, Some(eps), &mut dropout);
                let b = loss::breakdown(&model, &g, &nodes, config.lambda_kl, config.lambda_l2);
                (b, g.backward(nodes.objective))
            };
            if !b.is_finite() || !grads.is_finite() {
                save(&model, steps, out_dir, LAST_GOOD_CHECKPOINT)?;
                return Err(Error::TrainingFault(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {steps}: total {}, kl {}, attributes {:?}",
                    b.total,
                    b.kl_term,
                    b.attributes.iter().map(|a| (&a.name, a.value)).collect::<Vec<_>>()
                )));
            }
            loss::add_weight_decay(&mut grads, &model, config.lambda_l2);
            adam.step(model.params_mut(), &grads);
            steps += 1;
            parts.push((b, chunk.len() as f64));
            if config.max_steps > 0 && steps as usize >= config.max_steps {
                stop = true;
                break;
            }
        }
        let train_loss = LossBreakdown::weighted_mean(&parts).expect("at least one batch per epoch");
        log::info!("epoch {epoch} step {steps} train loss {:.4}", train_loss.total);
        let rec = EpochRecord {
            epoch,
            split: Split::Train.to_string(),
            step: steps,
            loss: train_loss,
            s_reconst: None,
            miou: None,
            s_gen: None,
        };
        log.write(&rec)?;
        history.push(rec);

        let last_epoch = stop || epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || last_epoch);
        if due && !val.is_empty() {
            let loss = dataset_loss(&model, val, config.lambda_kl, config.lambda_l2, config.batch_size)?;
            let report = evaluate(&model, val, config.seed)?;
            log::info!(
                "epoch {epoch} val S_reconst {:.4} mIoU {:.4} S_gen {:.4}",
                report.s_reconst,
                report.miou,
                report.s_gen
            );
            let rec = EpochRecord {
                epoch,
                split: Split::Val.to_string(),
                step: steps,
                loss,
                s_reconst: Some(report.s_reconst),
                miou: Some(report.miou),
                s_gen: Some(report.s_gen),
            };
            log.write(&rec)?;
            history.push(rec);
            if best.as_ref().is_none_or(|(s, _, _)| report.s_gen > *s) {
                save(&model, steps, out_dir, BEST_CHECKPOINT)?;
                best = Some((report.s_gen, epoch, model.clone()));
            }
        }
        if stop {
            break;
        }
    }
    save(&model, steps, out_dir, LAST_CHECKPOINT)?;
    let (best, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => {
            save(&model, steps, out_dir, BEST_CHECKPOINT)?;
            (model.clone(), None)
        }
    };
    Ok(TrainOutcome { best, last: model, best_epoch, steps, history })
}

/// One point of the KL-weight trade-off, measured on the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda_kl: f64,
    pub s_reconst: f64,
    pub miou: f64,
    pub s_gen: f64,
    pub kl_term: f64,
}

/// `2^1 ..= 2^8` for crello-like data, `2^1 ..= 2^7` otherwise.
pub fn default_grid(family: &str) -> Vec<f64> {
    let top = if family == "crello-like" { 8 } else { 7 };
    (1..=top).map(|k| 2f64.powi(k)).collect()
}

/// Trains one model per KL weight and scores its selected checkpoint on the
/// validation split. Each run writes to `out_dir/lambda-<value>`.
pub fn grid_search_lambda_kl(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    grid: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("the lambda_kl grid is empty"));
    }
    let val = dataset.split(Split::Val);
    if val.is_empty() {
        return Err(Error::invalid("the validation split is empty"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda_kl in grid {
        let cfg = TrainConfig { lambda_kl, ..config.clone() };
        let dir = out_dir.map(|d| d.join(format!("lambda-{lambda_kl}")));
        let outcome = train(dataset, model_config, &cfg, dir.as_deref())?;
        let report = evaluate(&outcome.best, val, config.seed)?;
        rows.push(GridRow {
            lambda_kl,
            s_reconst: report.s_reconst,
            miou: report.miou,
            s_gen: report.s_gen,
            kl_term: mean_kl(&outcome.best, val)?,
        });
    }
    Ok(rows)
}

/// Tab-separated table with a header line.
pub fn grid_tsv(rows: &[GridRow]) -> String {
    let mut out = String::from("lambda_kl\ts_reconst\tmiou\ts_gen\tkl_term\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.lambda_kl, r.s_reconst, r.miou, r.s_gen, r.kl_term
        ));
    }
    out
}

#[cfg(test)]
mod tests;
