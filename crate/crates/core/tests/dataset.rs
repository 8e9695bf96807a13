use canvasvae::dataset::{batchify, generate_documents, unbatchify, GeneratorConfig, LengthDistribution};
use canvasvae::document::{dequantize, quantize, read_documents, validate, write_documents};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn length_fit(config: GeneratorConfig, seed: u64) -> (f64, f64) {
    let docs = generate_documents(&config, seed).unwrap();
    let pmf = config.length.pmf(50).unwrap();
    let mut observed = vec![0.0; 50];
    for d in &docs {
        observed[d.len() - 1] += 1.0;
    }
    let n = docs.len() as f64;
    // pool the sparse tail so every expected count is at least 5
    let (mut stat, mut cells, mut obs_tail, mut exp_tail) = (0.0, 0usize, 0.0, 0.0);
    for (o, p) in observed.iter().zip(&pmf) {
        let e = p * n;
        if e >= 5.0 {
            stat += (o - e) * (o - e) / e;
            cells += 1;
        } else {
            obs_tail += o;
            exp_tail += e;
        }
    }
    if exp_tail > 0.0 {
        stat += (obs_tail - exp_tail) * (obs_tail - exp_tail) / exp_tail;
        cells += 1;
    }
    let critical = ChiSquared::new((cells - 1) as f64).unwrap().inverse_cdf(0.99);
    (stat, critical)
}

#[test]
fn element_counts_follow_the_configured_distribution() {
    for length in [
        LengthDistribution::default(),
        LengthDistribution::Uniform { min: 3, max: 12 },
        LengthDistribution::Weights { weights: vec![1.0, 4.0, 2.0, 0.0, 3.0] },
    ] {
        let config = GeneratorConfig { n_docs: 10_000, feature_dim: 4, length: length.clone(), ..Default::default() };
        let (stat, critical) = length_fit(config, 21);
        assert!(stat < critical, "{length:?}: chi-square {stat} >= {critical}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batching_round_trips(seed in any::<u64>(), family in prop::sample::select(vec!["crello-like", "rico-like"])) {
        let config = GeneratorConfig { family: family.into(), n_docs: 9, feature_dim: 4, ..Default::default() };
        let schema = config.schema().unwrap();
        let docs = generate_documents(&config, seed).unwrap();
        prop_assert!(docs.iter().all(|d| validate(d, &schema).is_ok()));
        let back = unbatchify(&batchify(&docs, &schema).unwrap());
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn jsonl_round_trips(seed in any::<u64>()) {
        let config = GeneratorConfig { n_docs: 5, feature_dim: 6, ..Default::default() };
        let schema = config.schema().unwrap();
        let docs = generate_documents(&config, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_documents(&path, &docs, &schema).unwrap();
        prop_assert_eq!(read_documents(&path, &schema).unwrap(), docs);
    }

    #[test]
    fn bin_centers_quantize_to_themselves(bins in 1usize..100, lo in -5.0f64..5.0, width in 0.1f64..10.0) {
        let hi = lo + width;
        for b in 0..bins {
            let c = dequantize(b, lo, hi, bins).unwrap();
            prop_assert_eq!(quantize(c, lo, hi, bins).unwrap(), b);
        }
    }

    #[test]
    fn quantization_error_is_half_a_bin(x in 0.0f64..1.0, bins in 1usize..128) {
        let b = quantize(x, 0.0, 1.0, bins).unwrap();
        let c = dequantize(b, 0.0, 1.0, bins).unwrap();
        prop_assert!((c - x).abs() <= 0.5 / bins as f64 + 1e-12);
    }
}
