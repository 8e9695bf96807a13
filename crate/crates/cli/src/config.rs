//! Layered run configuration: defaults, then a TOML file, then `--set` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use canvasvae::dataset::GeneratorConfig;
use canvasvae::model::ModelConfig;
use canvasvae::render::RenderOptions;
use canvasvae::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SNAPSHOT: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// Seed for dataset generation and prior sampling.
    pub seed: u64,
    pub dataset: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub render: RenderOptions,
}

/// Overrides on top of the defaults, in increasing precedence.
#[derive(Clone, Debug, Default)]
pub struct Layers {
    tables: Vec<Table>,
}

impl Layers {
    pub fn from_args(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut tables = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            tables.push(text.parse::<Table>().with_context(|| format!("parsing {}", path.display()))?);
        }
        let mut set = Table::new();
        for s in sets {
            let (key, raw) = s.split_once('=').with_context(|| format!("override `{s}` is not key=value"))?;
            insert_dotted(&mut set, key.trim(), parse_value(raw.trim()))?;
        }
        tables.push(set);
        Ok(Layers { tables })
    }

    /// Adds a layer that wins over everything before it.
    pub fn push(&mut self, key: &str, value: Value) -> Result<()> {
        let mut t = Table::new();
        insert_dotted(&mut t, key, value)?;
        self.tables.push(t);
        Ok(())
    }

    fn sets(&self, key: &str) -> bool {
        self.tables.iter().any(|t| lookup(t, key).is_some())
    }

    /// Resolves against the defaults. `family` picks the family-specific
    /// model defaults unless the layers set them.
    pub fn resolve(&self, family: Option<&str>) -> Result<RunConfig> {
        let defaults = Value::try_from(RunConfig::default()).expect("defaults serialize");
        let Value::Table(mut merged) = defaults else { unreachable!() };
        for t in &self.tables {
            merge(&mut merged, t, "")?;
        }
        let mut cfg: RunConfig = Value::Table(merged).try_into().context("invalid configuration")?;
        let family = family.map(str::to_string).unwrap_or_else(|| cfg.dataset.family.clone());
        if !self.sets("model.latent_dim") {
            cfg.model.latent_dim = ModelConfig::for_family(&family).latent_dim;
        }
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn insert_dotted(t: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = t;
    while let Some(p) = parts.next() {
        if p.is_empty() {
            bail!("malformed key `{key}`");
        }
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return Ok(());
        }
        let next = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(next) = next else { bail!("`{key}` conflicts with a scalar override") };
        cur = next;
    }
    Ok(())
}

fn lookup<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = t.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Deep merge that rejects keys absent from `base`. A table carrying a
/// `kind` tag replaces its counterpart wholesale, since its fields depend
/// on the tag.
fn merge(base: &mut Table, over: &Table, prefix: &str) -> Result<()> {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = base.get_mut(k) else { bail!("unknown configuration key `{path}`") };
        match (slot, v) {
            (Value::Table(b), Value::Table(o)) if !o.contains_key("kind") => merge(b, o, &path)?,
            (slot, v) => *slot = v.clone(),
        }
    }
    Ok(())
}

pub fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(SNAPSHOT);
    std::fs::write(&path, toml::to_string(cfg)?).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 4\n[train]\nlambda_kl = 8.0\nepochs = 3\n").unwrap();
        let sets = vec!["train.epochs=9".to_string(), "model.variant=autoreg-lstm".to_string()];
        let cfg = Layers::from_args(Some(&file), &sets).unwrap().resolve(None).unwrap();
        assert_eq!((cfg.seed, cfg.train.lambda_kl, cfg.train.epochs), (4, 8.0, 9));
        assert_eq!(cfg.model.variant.as_str(), "autoreg-lstm");
        assert_eq!(cfg.model.latent_dim, 512);

        let bad = Layers::from_args(None, &["train.lambda_k=1".into()]).unwrap();
        assert!(bad.resolve(None).unwrap_err().to_string().contains("train.lambda_k"));
        assert!(Layers::from_args(None, &["train".into()]).is_err());
        let typed = Layers::from_args(None, &["train.epochs=\"many\"".into()]).unwrap();
        assert!(typed.resolve(None).is_err());
    }

    #[test]
    fn family_defaults_and_tagged_tables() {
        let none = Layers::default();
        assert_eq!(none.resolve(Some("rico-like")).unwrap().model.latent_dim, 256);
        let set = Layers::from_args(None, &["model.latent_dim=32".into()]).unwrap();
        assert_eq!(set.resolve(Some("rico-like")).unwrap().model.latent_dim, 32);
        let uniform = Layers::from_args(None, &["dataset.length={kind=\"uniform\", min=2, max=5}".into()]).unwrap();
        let cfg = uniform.resolve(None).unwrap();
        assert_eq!(cfg.dataset.length, canvasvae::dataset::LengthDistribution::Uniform { min: 2, max: 5 });
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Layers::from_args(None, &["train.lambda_l2=0.5".into()]).unwrap().resolve(None).unwrap();
        write_snapshot(&cfg, dir.path()).unwrap();
        let back: RunConfig = toml::from_str(&std::fs::read_to_string(dir.path().join(SNAPSHOT)).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
