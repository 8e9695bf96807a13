use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::{generate_documents, GeneratorConfig};
use crate::document::{read_documents, write_documents, Document, DocumentSchema, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// On-disk description of a dataset. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub schema: String,
    pub schema_hash: String,
    pub seed: u64,
    pub splits: BTreeMap<Split, String>,
    pub counts: BTreeMap<Split, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

/// A loaded, validated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub schema: DocumentSchema,
    pub splits: BTreeMap<Split, Vec<Document>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Document] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Partitions document indices by the configured ratios after a seeded
/// shuffle.
pub fn partition(n: usize, ratios: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5117);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    [train, val, test]
}

/// Generates a synthetic dataset into `out_dir`: the schema file, one
/// document file per split, and `manifest.json`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let docs = generate_documents(config, seed)?;
    let schema = config.schema()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    schema.save(&out_dir.join("schema.json"))?;

    let parts = partition(docs.len(), config.split_ratios, seed);
    let mut splits = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (split, idx) in Split::ALL.into_iter().zip(parts) {
        let name = format!("{split}.jsonl");
        let subset: Vec<Document> = idx.iter().map(|&i| docs[i].clone()).collect();
        write_documents(&out_dir.join(&name), &subset, &schema)?;
        splits.insert(split, name);
        counts.insert(split, subset.len());
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        schema: "schema.json".into(),
        schema_hash: schema.hash(),
        seed,
        splits,
        counts,
        generator: Some(config.clone()),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

/// Loads a manifest and every split it references, validating each record.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!("unsupported manifest schema_version {}", manifest.schema_version)));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let schema = DocumentSchema::load(&resolve(base, &manifest.schema))?;
    if schema.hash() != manifest.schema_hash {
        return Err(Error::invalid("schema file does not match the manifest's schema hash"));
    }

    let mut splits = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (split, rel) in &manifest.splits {
        let path = resolve(base, rel);
        if !path.is_file() {
            return Err(Error::SplitNotFound(path));
        }
        let docs = read_documents(&path, &schema)?;
        if let Some(&expected) = manifest.counts.get(split) {
            if expected != docs.len() {
                return Err(Error::invalid(format!(
                    "split {split} holds {} documents, manifest says {expected}",
                    docs.len()
                )));
            }
        }
        for d in &docs {
            if !seen.insert(d.id) {
                return Err(Error::invalid(format!("document id {} appears more than once", d.id)));
            }
        }
        splits.insert(*split, docs);
    }
    Ok(Dataset { manifest, schema, splits })
}
