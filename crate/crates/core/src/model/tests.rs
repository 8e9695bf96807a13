use super::*;
use crate::dataset::{generate_documents, GeneratorConfig};
use crate::document::validate;

fn micro(variant: Variant) -> (Model, Vec<Document>) {
    let gen = GeneratorConfig { n_docs: 40, feature_dim: 4, ..Default::default() };
    let schema = gen.schema().unwrap();
    let docs = generate_documents(&gen, 3).unwrap();
    let config = ModelConfig {
        variant,
        hidden_dim: 8,
        latent_dim: 6,
        heads: 2,
        ffn_mult: 2,
        dropout: 0.0,
        ..Default::default()
    };
    (Model::new(config, schema, 9).unwrap(), docs)
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-12))
}

#[test]
fn crello_latent_has_default_dimension() {
    let gen = GeneratorConfig { n_docs: 4, feature_dim: 16, ..Default::default() };
    let schema = gen.schema().unwrap();
    let docs = generate_documents(&gen, 1).unwrap();
    let config = ModelConfig { hidden_dim: 16, heads: 2, ..ModelConfig::for_family("crello-like") };
    let model = Model::new(config, schema.clone(), 0).unwrap();
    let dists = model.encode(&batchify(&docs, &schema).unwrap()).unwrap();
    assert_eq!(dists.len(), 4);
    assert!(dists.iter().all(|d| d.mu.len() == 512 && d.sigma.iter().all(|s| *s > 0.0)));
    assert_eq!(ModelConfig::for_family("rico-like").latent_dim, 256);
}

#[test]
fn padding_contents_never_reach_the_encoder() {
    for v in Variant::ALL {
        let (model, docs) = micro(v);
        let batch = batchify(&docs[..6], model.schema()).unwrap();
        let clean = model.encode(&batch).unwrap();
        let mut dirty = batch.clone();
        for col in &mut dirty.elements {
            match &mut col.data {
                crate::dataset::ColumnData::Categorical(xs) => {
                    for (i, x) in xs.iter_mut().enumerate() {
                        if !batch.mask[i / col.dims] {
                            *x = 3;
                        }
                    }
                }
                crate::dataset::ColumnData::Numerical(xs) => {
                    for (i, x) in xs.iter_mut().enumerate() {
                        if !batch.mask[i / col.dims] {
                            *x = 7.5;
                        }
                    }
                }
            }
        }
        let noisy = model.encode(&dirty).unwrap();
        for (a, b) in clean.iter().zip(&noisy) {
            assert!(close(&a.mu, &b.mu, 1e-12) && close(&a.sigma, &b.sigma, 1e-12), "{v}");
        }
    }
}

#[test]
fn identical_rows_encode_identically_and_order_matters() {
    for v in Variant::ALL {
        let (model, docs) = micro(v);
        let d = docs.iter().find(|d| d.len() >= 3).unwrap().clone();
        let mut swapped = d.clone();
        swapped.elements.swap(0, 2);
        let batch = batchify(&[d.clone(), docs[1].clone(), d.clone(), swapped], model.schema()).unwrap();
        let out = model.encode(&batch).unwrap();
        assert_eq!(out[0], out[2], "{v}");
        let diff: f64 = out[0].mu.iter().zip(&out[3].mu).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(diff > 0.0, "{v}: element order ignored");
    }
}

#[test]
fn sampling_modes() {
    let dist = LatentDistribution { mu: vec![0.5, -1.0], sigma: vec![1e-12, 1e-12] };
    assert_eq!(sample_latent(&dist, SampleMode::Mean, 3), dist.mu);
    let z = sample_latent(&dist, SampleMode::Stochastic, 3);
    assert!(close(&z, &dist.mu, 1e-6));
    assert_eq!(z, sample_latent(&dist, SampleMode::Stochastic, 3));
}

#[test]
fn forced_length_controls_slot_count() {
    for v in Variant::ALL {
        let (model, _) = micro(v);
        let z = vec![0.3; 6];
        let d = model.decode(&z, Some(3)).unwrap();
        assert_eq!(d.length, 3);
        assert!(d.elements.iter().all(|p| p.prediction.rows() == 3));
        assert_eq!(d.predicted_length_logits.len(), 50);
        assert_eq!(model.decode(&z, Some(3)).unwrap(), d, "{v}: decoding is not deterministic");
        assert!(model.decode(&z, Some(0)).is_err());
        assert!(model.decode(&z, Some(51)).is_err());
        let free = model.decode(&z, None).unwrap();
        assert!((1..=50).contains(&free.length));
        assert!(model.decode(&[0.0; 5], None).is_err());
    }
}

#[test]
fn decoding_does_not_depend_on_batch_companions() {
    for v in Variant::ALL {
        let (model, _) = micro(v);
        let za = vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        let zb = vec![-0.5; 6];
        let alone = model.decode(&za, Some(4)).unwrap();
        let both = model.decode_batch(&[zb, za], Some(&[7, 4])).unwrap();
        assert_eq!(both[1].length, 4);
        for (p, q) in alone.elements.iter().zip(&both[1].elements) {
            let (Prediction::Logits { values: a, .. } | Prediction::Regression(a)) = &p.prediction;
            let (Prediction::Logits { values: b, .. } | Prediction::Regression(b)) = &q.prediction;
            assert!(close(&a.data, &b.data, 1e-9), "{v}");
        }
    }
}

#[test]
fn argmax_tie_rule() {
    let uniform = Prediction::Logits { cardinality: 64, dims: 1, values: Mat::zeros(1, 64) };
    assert_eq!(uniform.value_at(0), Value::Categorical(vec![0]));
    let mut hot = Mat::zeros(1, 128);
    hot.data[40] = 1.0;
    hot.data[64 + 9] = 2.0;
    let p = Prediction::Logits { cardinality: 64, dims: 2, values: hot };
    assert_eq!(p.value_at(0), Value::Categorical(vec![40, 9]));
}

#[test]
fn decoded_documents_validate() {
    for v in Variant::ALL {
        let (model, _) = micro(v);
        let docs = model.generate(12, 5).unwrap();
        assert_eq!(docs, model.generate(12, 5).unwrap());
        for d in &docs {
            let verdict = validate(d, model.schema());
            assert!(verdict.is_ok(), "{v}: {verdict}");
        }
    }
}

#[test]
fn interpolation_endpoints() {
    let (model, docs) = micro(Variant::OneshotTransformer);
    let (a, b) = (&docs[0], &docs[1]);
    let path = model.interpolate(a, b, 5).unwrap();
    assert_eq!(path.len(), 5);
    let dists = model.encode_documents(&[a.clone(), b.clone()]).unwrap();
    let ends = model.decode_batch(&[dists[0].mu.clone(), dists[1].mu.clone()], None).unwrap();
    let strip_id = |mut d: Document, id| {
        d.id = id;
        d
    };
    assert_eq!(path[0], strip_id(to_document(&ends[0], model.schema()), 0));
    assert_eq!(path[4], strip_id(to_document(&ends[1], model.schema()), 4));
    let same = model.interpolate(a, a, 3).unwrap();
    assert!(same.windows(2).all(|w| w[0].elements == w[1].elements && w[0].canvas == w[1].canvas));
    assert!(model.interpolate(a, b, 1).is_err());
}

#[test]
fn autoregressive_steps_ignore_later_elements() {
    for v in [Variant::AutoregTransformer, Variant::AutoregLstm] {
        let (model, docs) = micro(v);
        let d = docs.iter().find(|d| d.len() >= 5).unwrap().clone();
        let mut perturbed = d.clone();
        let victim = 2;
        let src = perturbed.elements[4].clone();
        perturbed.elements[victim] = src;
        let run = |doc: &Document| {
            let batch = batchify(std::slice::from_ref(doc), model.schema()).unwrap();
            let packed = Packed::from_batch(&batch, model.schema()).unwrap();
            let mut g = Graph::new(model.params());
            let tf = model.teacher_forced(&mut g, &packed, None, &mut Dropout::off());
            // both documents decode from the same code so only the inputs differ
            (g.value(tf.encoded.mu).clone(), packed)
        };
        let (z, packed_a) = run(&d);
        let (_, packed_b) = run(&perturbed);
        let outputs = |packed: &Packed| {
            let mut g = Graph::new(model.params());
            let zv = g.input(z.clone());
            let outs = model.net.decode_elements(&mut g, zv, packed, &mut Dropout::off());
            model.collect(&g, &outs, false)
        };
        let (a, b) = (outputs(&packed_a), outputs(&packed_b));
        for (p, q) in a.iter().zip(&b) {
            let (Prediction::Logits { values: x, .. } | Prediction::Regression(x)) = &p.prediction;
            let (Prediction::Logits { values: y, .. } | Prediction::Regression(y)) = &q.prediction;
            // step t reads element t - 1, so steps up to the victim are untouched
            for t in 0..=victim {
                assert_eq!(x.row(t), y.row(t), "{v}: step {t} saw a later element");
            }
        }
        let changed = a.iter().zip(&b).any(|(p, q)| p != q);
        assert!(changed, "{v}: perturbation had no effect at all");
    }
}

#[test]
fn checkpoint_round_trip() {
    let (model, docs) = micro(Variant::AutoregLstm);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt.json");
    Checkpoint::from_model(&model, 17).save(&path).unwrap();
    let ckpt = Checkpoint::load_for(&path, model.schema()).unwrap();
    assert_eq!(ckpt.step, 17);
    let back = ckpt.into_model().unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.generate(3, 1).unwrap(), model.generate(3, 1).unwrap());
    assert_eq!(back.reconstruct(&docs[..3]).unwrap(), model.reconstruct(&docs[..3]).unwrap());

    let other = DocumentSchema::rico_like();
    assert!(matches!(Checkpoint::load_for(&path, &other), Err(Error::Checkpoint(_))));
    let mut tampered = Checkpoint::load(&path).unwrap();
    tampered.schema_hash = "00".into();
    assert!(tampered.into_model().is_err());
}
