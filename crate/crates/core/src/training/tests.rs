use super::*;
use crate::dataset::{generate_documents, GeneratorConfig};
use crate::model::Variant;

fn setup(variant: Variant, n: usize) -> (Model, Vec<Document>) {
    let gen = GeneratorConfig { n_docs: n, feature_dim: 4, ..Default::default() };
    let schema = gen.schema().unwrap();
    let docs = generate_documents(&gen, 11).unwrap();
    let config = ModelConfig {
        variant,
        hidden_dim: 8,
        latent_dim: 8,
        heads: 1,
        ffn_mult: 2,
        dropout: 0.0,
        ..Default::default()
    };
    (Model::new(config, schema, 5).unwrap(), docs)
}

#[test]
fn gradients_match_central_differences() {
    for v in Variant::ALL {
        let (mut model, docs) = setup(v, 6);
        let short: Vec<Document> = docs.iter().filter(|d| d.len() <= 4).take(2).cloned().collect();
        let batch = batchify(&short, model.schema()).unwrap();
        let (lkl, ll2, mode) = (0.7, 1e-2, LatentNoise::Seeded(3));
        let (_, grads) = loss_and_gradients(&model, &batch, lkl, ll2, mode).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for p in 0..model.params().len() {
            let n = model.params().values()[p].data.len();
            // a handful of entries per tensor keeps this quick
            for i in [0, n / 2, n - 1] {
                let orig = model.params().values()[p].data[i];
                model.params_mut().values_mut()[p].data[i] = orig + h;
                let up = total_loss(&model, &batch, lkl, ll2, mode).unwrap().total;
                model.params_mut().values_mut()[p].data[i] = orig - h;
                let down = total_loss(&model, &batch, lkl, ll2, mode).unwrap().total;
                model.params_mut().values_mut()[p].data[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.mats[p].data[i];
                let err = (numeric - analytic).abs() / (numeric.abs().max(analytic.abs()) + 1e-6);
                worst = worst.max(err);
                assert!(err <= 1e-3, "{v}: {} [{i}] analytic {analytic} numeric {numeric}", model.params().names()[p]);
            }
        }
        assert!(worst.is_finite());
    }
}

#[test]
fn breakdown_terms_add_up() {
    let (model, docs) = setup(Variant::OneshotTransformer, 16);
    let batch = batchify(&docs, model.schema()).unwrap();
    let b = total_loss(&model, &batch, 4.0, 1e-6, LatentNoise::Seeded(1)).unwrap();
    assert!((b.total - b.recomputed_total()).abs() <= 1e-6);
    assert!(b.attributes.iter().any(|a| a.name == "canvas.length"));
    assert!(b.attributes.iter().any(|a| a.name == "element.type"));
    assert!(b.kl_term >= 0.0 && b.l2_term > 0.0);
}

#[test]
fn zero_kl_weight_leaves_reconstruction_and_kl_is_linear() {
    let (model, docs) = setup(Variant::AutoregTransformer, 8);
    let batch = batchify(&docs, model.schema()).unwrap();
    let at = |l| total_loss(&model, &batch, l, 0.0, LatentNoise::Seeded(2)).unwrap();
    let zero = at(0.0);
    assert!((zero.total - zero.reconstruction()).abs() <= 1e-9 * zero.total.abs());
    let (one, three) = (at(1.0), at(3.0));
    let slope = (three.total - one.total) / 2.0;
    assert!((slope - one.kl_term).abs() <= 1e-9 * one.kl_term.abs().max(1.0));
    assert!((one.total - zero.total - one.kl_term).abs() <= 1e-9 * one.total.abs());
}

#[test]
fn teacher_forced_loss_matches_attribute_loss() {
    for v in Variant::ALL {
        let (model, docs) = setup(v, 10);
        let batch = batchify(&docs, model.schema()).unwrap();
        let b = total_loss(&model, &batch, 1.0, 0.0, LatentNoise::Mean).unwrap();
        let decoded = model.decode_teacher_forced(&batch).unwrap();
        let schema = model.schema();
        for (k, spec) in schema.element_attrs.iter().enumerate() {
            let col = batch.element_column(&spec.name).unwrap();
            let mut sum = 0.0;
            for (d, dec) in decoded.iter().enumerate() {
                let targets: Vec<_> = (0..batch.lengths[d]).map(|t| col.get(batch.row(d, t))).collect();
                sum += attribute_loss(&targets, &dec.elements[k].prediction).unwrap();
            }
            let mean = sum / docs.len() as f64;
            let got = b.attributes.iter().find(|a| a.name == format!("element.{}", spec.name)).unwrap().value;
            assert!((got - mean).abs() <= 1e-9 * mean.abs().max(1.0), "{v} {}: {got} vs {mean}", spec.name);
        }
    }
}

#[test]
fn epoch_zero_loss_is_deterministic() {
    let (model, docs) = setup(Variant::OneshotLstm, 12);
    let cfg = TrainConfig { epochs: 1, batch_size: 4, eval_every: 0, ..Default::default() };
    let run = || train_documents(&docs, &[], model.schema(), model.config(), &cfg, None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history[0].loss, b.history[0].loss);
    assert_eq!(a.last.params(), b.last.params());
    assert_eq!(a.steps, 3);
    assert!(a.best_epoch.is_none());
}

#[test]
fn loss_trends_down() {
    let (model, docs) = setup(Variant::OneshotTransformer, 32);
    let config = ModelConfig { hidden_dim: 16, latent_dim: 16, heads: 2, ..model.config().clone() };
    let cfg = TrainConfig { epochs: 10, batch_size: 8, eval_every: 0, learning_rate: 3e-3, ..Default::default() };
    let out = train_documents(&docs, &[], model.schema(), &config, &cfg, None).unwrap();
    let totals: Vec<f64> = out.history.iter().map(|r| r.loss.total).collect();
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(avg(&totals[7..]) < avg(&totals[..3]), "{totals:?}");
}

#[test]
fn defaults_and_config_checks() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lambda_l2, 1e-6);
    assert_eq!(cfg.learning_rate, 1e-3);
    assert!(TrainConfig { lambda_kl: 0.0, ..cfg.clone() }.check().is_err());
    assert!(TrainConfig { batch_size: 0, ..cfg.clone() }.check().is_err());
    assert!(rejects_unknown_keys());
    assert_eq!(default_grid("crello-like").len(), 8);
    assert_eq!(default_grid("rico-like"), vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
}

fn rejects_unknown_keys() -> bool {
    serde_json::from_str::<TrainConfig>(r#"{"lambda_kl": 2.0, "bogus": 1}"#).is_err()
        && serde_json::from_str::<TrainConfig>(r#"{"lambda_kl": 2.0}"#).unwrap().lambda_kl == 2.0
}

#[test]
fn divergence_stops_with_last_good_checkpoint() {
    let (model, docs) = setup(Variant::OneshotTransformer, 8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 50, batch_size: 4, eval_every: 0, learning_rate: 1e200, ..Default::default() };
    let err = train_documents(&docs, &[], model.schema(), model.config(), &cfg, Some(dir.path()));
    assert!(matches!(err, Err(Error::TrainingFault(_))), "{:?}", err.err());
    let good = Checkpoint::load(&dir.path().join(LAST_GOOD_CHECKPOINT)).unwrap().into_model().unwrap();
    assert!(good.params().values().iter().all(|m| m.is_finite()));
}

#[test]
fn training_writes_log_and_checkpoints() {
    let (model, docs) = setup(Variant::OneshotTransformer, 12);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
    let out = train_documents(&docs[..8], &docs[8..], model.schema(), model.config(), &cfg, Some(dir.path())).unwrap();
    let log = fs::read_to_string(dir.path().join(METRICS_LOG)).unwrap();
    let recs: Vec<EpochRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs, out.history);
    assert_eq!(recs.iter().filter(|r| r.split == "val").count(), 2);
    assert!(out.best_epoch.is_some());
    for f in [BEST_CHECKPOINT, LAST_CHECKPOINT] {
        Checkpoint::load_for(&dir.path().join(f), model.schema()).unwrap();
    }
}
