use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::document::DocumentSchema;
use crate::error::{Error, Result};
use crate::tape::Mat;

const FORMAT: &str = "canvasvae-checkpoint";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Self-describing model file: architecture, schema (and its hash),
/// training step and every parameter array.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    format: String,
    pub config: ModelConfig,
    pub schema: DocumentSchema,
    pub schema_hash: String,
    pub step: u64,
    params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64) -> Self {
        let store = model.params();
        Checkpoint {
            format: FORMAT.into(),
            config: model.config().clone(),
            schema: model.schema().clone(),
            schema_hash: model.schema().hash(),
            step,
            params: store
                .names()
                .iter()
                .zip(store.values())
                .map(|(name, m)| ParamRecord { name: name.clone(), rows: m.rows, cols: m.cols, data: m.data.clone() })
                .collect(),
        }
    }

    /// Rebuilds the model, checking the schema hash and every parameter shape.
    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.schema.hash() != self.schema_hash {
            return Err(Error::Checkpoint("schema hash does not match the embedded schema".into()));
        }
        let mut model = Model::new(self.config, self.schema, 0)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, rec) in store.ids().collect::<Vec<_>>().into_iter().zip(self.params) {
            let cur = store.get(id);
            if store.name(id) != rec.name
                || cur.shape() != (rec.rows, rec.cols)
                || rec.data.len() != rec.rows * rec.cols
            {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` ({}x{}) does not fit `{}` {:?}",
                    rec.name,
                    rec.rows,
                    rec.cols,
                    store.name(id),
                    cur.shape()
                )));
            }
            *store.get_mut(id) = Mat::from_vec(rec.rows, rec.cols, rec.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads a checkpoint that must have been trained on `schema`.
    pub fn load_for(path: &Path, schema: &DocumentSchema) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.schema_hash != schema.hash() {
            return Err(Error::Checkpoint(format!(
                "{} was trained on schema {}, dataset schema is {}",
                path.display(),
                ckpt.schema_hash,
                schema.hash()
            )));
        }
        Ok(ckpt)
    }
}
