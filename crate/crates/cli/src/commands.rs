use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use canvasvae::dataset::{generate_synthetic, load_dataset, Dataset, FeatureIndex, Split};
use canvasvae::document::{read_documents, write_documents, Document, DocumentSchema};
use canvasvae::metrics::MetricReport;
use canvasvae::model::{Checkpoint, Model};
use canvasvae::render::{self, file_name, Palette, RenderMode, IMAGE_ATTR};
use canvasvae::training::{self, default_grid, grid_search_lambda_kl, grid_tsv};
use clap::Args;
use toml::Value;

use crate::config::{write_snapshot, Layers, RunConfig};
use crate::report::{format_report, Format};
use crate::Global;

pub const OUTPUT_ROOT_ENV: &str = "CANVASVAE_OUTPUT_ROOT";

pub enum Failure {
    /// Bad flags or configuration; exit status 2.
    Usage(anyhow::Error),
    /// Anything that goes wrong while running; exit status 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

/// Resolves the configuration, with flag values layered on top.
fn resolve(g: &Global, flags: &[(&str, Option<Value>)], family: Option<&str>) -> Result<RunConfig, Failure> {
    let mut layers = Layers::from_args(g.config.as_deref(), &g.sets).map_err(usage)?;
    for (key, value) in flags {
        if let Some(v) = value {
            layers.push(key, v.clone()).map_err(usage)?;
        }
    }
    layers.resolve(family).map_err(usage)
}

fn out_dir(g: &Global, command: &str) -> PathBuf {
    if let Some(out) = &g.out {
        return out.clone();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(command),
        None => PathBuf::from("runs").join(command),
    }
}

fn int(x: Option<u64>) -> Option<Value> {
    x.map(|v| Value::Integer(v as i64))
}

fn text(x: Option<&str>) -> Option<Value> {
    x.map(|v| Value::String(v.to_string()))
}

fn load(manifest: &Path) -> Result<Dataset, Failure> {
    Ok(load_dataset(manifest).with_context(|| format!("loading dataset {}", manifest.display()))?)
}

fn load_model(path: &Path, schema: Option<&DocumentSchema>) -> Result<Model, Failure> {
    let ckpt = match schema {
        Some(s) => Checkpoint::load_for(path, s),
        None => Checkpoint::load(path),
    }
    .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ckpt.into_model()?)
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// `crello-like` or `rico-like`.
    #[arg(long)]
    family: Option<String>,
    /// Number of documents.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn dataset_gen(g: &Global, a: GenArgs) -> Outcome {
    let cfg = resolve(
        g,
        &[("dataset.family", text(a.family.as_deref())), ("dataset.n_docs", int(a.n)), ("seed", int(a.seed))],
        None,
    )?;
    cfg.dataset.check().map_err(|e| usage(e.into()))?;
    let out = out_dir(g, "dataset");
    let manifest = generate_synthetic(&cfg.dataset, cfg.seed, &out)?;
    write_snapshot(&cfg, &out)?;
    let counts: Vec<String> = manifest.counts.iter().map(|(s, n)| format!("{s} {n}")).collect();
    println!("wrote {} ({})", out.join("manifest.json").display(), counts.join(", "));
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn train(g: &Global, a: TrainArgs) -> Outcome {
    let data = load(&a.data)?;
    let cfg = resolve(
        g,
        &[("model.variant", text(a.variant.as_deref())), ("train.epochs", int(a.epochs)), ("train.seed", int(a.seed))],
        Some(&data.schema.family),
    )?;
    let out = out_dir(g, "train");
    write_snapshot(&cfg, &out)?;
    let outcome = training::train(&data, &cfg.model, &cfg.train, Some(&out))?;
    println!("trained {} for {} steps; checkpoints in {}", cfg.model.variant, outcome.steps, out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Checkpoint to reconstruct and sample with.
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Saved reconstructions, paired with the split by order.
    #[arg(long, requires = "generated")]
    predictions: Option<PathBuf>,
    /// Saved samples to compare with the split.
    #[arg(long, requires = "predictions")]
    generated: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Seed for prior sampling.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn eval(g: &Global, a: EvalArgs) -> Outcome {
    let split: Split = a.split.parse().map_err(|e: canvasvae::Error| usage(e.into()))?;
    let data = load(&a.data)?;
    let cfg = resolve(g, &[("seed", int(a.seed))], Some(&data.schema.family))?;
    let reference = data.split(split);
    if reference.is_empty() {
        return Err(Failure::Runtime(anyhow!("split {split} is empty")));
    }
    let report = match (&a.checkpoint, &a.predictions, &a.generated) {
        (_, Some(p), Some(gen)) => {
            let recon = read_documents(p, &data.schema)?;
            let generated = read_documents(gen, &data.schema)?;
            MetricReport::evaluate(reference, &recon, &generated, &data.schema)?
        }
        (Some(c), _, _) => training::evaluate(&load_model(c, Some(&data.schema))?, reference, cfg.seed)?,
        _ => return Err(usage(anyhow!("eval needs --checkpoint or --predictions with --generated"))),
    };
    print!("{}", format_report(&report, split.as_str(), reference.len(), a.format));
    if let Some(out) = &g.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(format!("report.{split}.json"));
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
        write_snapshot(&cfg, out)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Also render each document as a color-map SVG.
    #[arg(long)]
    render: bool,
}

pub fn generate(g: &Global, a: GenerateArgs) -> Outcome {
    let model = load_model(&a.checkpoint, None)?;
    let cfg = resolve(g, &[("seed", int(a.seed))], Some(&model.schema().family))?;
    let docs = model.generate(a.n, cfg.seed)?;
    let out = out_dir(g, "generate");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_documents(&out.join("generated.jsonl"), &docs, model.schema())?;
    if a.render {
        let opts = render::RenderOptions { mode: RenderMode::Colormap, ..cfg.render.clone() };
        render_each(&docs, model.schema(), &opts, None, &out)?;
    }
    write_snapshot(&cfg, &out)?;
    println!("wrote {} documents to {}", docs.len(), out.join("generated.jsonl").display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest holding the endpoints.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Document id of the first endpoint.
    #[arg(long)]
    a: u64,
    /// Document id of the second endpoint.
    #[arg(long)]
    b: u64,
    #[arg(long, default_value_t = 7)]
    steps: usize,
}

pub fn interpolate(g: &Global, a: InterpolateArgs) -> Outcome {
    let split: Split = a.split.parse().map_err(|e: canvasvae::Error| usage(e.into()))?;
    let data = load(&a.data)?;
    let cfg = resolve(g, &[], Some(&data.schema.family))?;
    let model = load_model(&a.checkpoint, Some(&data.schema))?;
    let find = |id: u64| {
        data.split(split)
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Failure::Runtime(anyhow!("no document {id} in split {split}")))
    };
    let path = model.interpolate(find(a.a)?, find(a.b)?, a.steps)?;
    let out = out_dir(g, "interpolate");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_documents(&out.join("interpolation.jsonl"), &path, &data.schema)?;
    let index = feature_index(&data, cfg.render.mode)?;
    let strip =
        render::render_strip(&path, &data.schema, &Palette::for_schema(&data.schema), &cfg.render, index.as_ref())?;
    fs::write(out.join(format!("strip.{}.svg", cfg.render.mode.as_str())), strip)?;
    write_snapshot(&cfg, &out)?;
    println!("wrote {} steps to {}", path.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Dataset manifest; supplies the schema and the texture index.
    #[arg(long)]
    data: PathBuf,
    /// Documents to render; defaults to the chosen split.
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// `colormap` or `textured`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    canvas_px: Option<u64>,
    /// Render at most this many documents.
    #[arg(long)]
    limit: Option<usize>,
}

fn feature_index(data: &Dataset, mode: RenderMode) -> Result<Option<FeatureIndex>, Failure> {
    if mode != RenderMode::Textured {
        return Ok(None);
    }
    if data.schema.element_attr(IMAGE_ATTR).is_none() {
        return Ok(Some(FeatureIndex::new(0)));
    }
    Ok(Some(FeatureIndex::from_documents(data.split(Split::Train), &data.schema, IMAGE_ATTR)?))
}

fn render_each(
    docs: &[Document],
    schema: &DocumentSchema,
    opts: &render::RenderOptions,
    index: Option<&FeatureIndex>,
    out: &Path,
) -> Result<(), Failure> {
    let palette = Palette::for_schema(schema);
    for d in docs {
        let svg = render::render_svg(d, schema, &palette, opts, index)?;
        fs::write(out.join(file_name(d, opts.mode)), svg)?;
    }
    Ok(())
}

pub fn render(g: &Global, a: RenderArgs) -> Outcome {
    let split: Split = a.split.parse().map_err(|e: canvasvae::Error| usage(e.into()))?;
    let data = load(&a.data)?;
    let cfg = resolve(
        g,
        &[("render.mode", text(a.mode.as_deref())), ("render.canvas_px", int(a.canvas_px))],
        Some(&data.schema.family),
    )?;
    cfg.render.check().map_err(|e| usage(e.into()))?;
    let docs = match &a.docs {
        Some(p) => read_documents(p, &data.schema)?,
        None => data.split(split).to_vec(),
    };
    let docs = &docs[..a.limit.unwrap_or(docs.len()).min(docs.len())];
    let out = out_dir(g, "render");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let index = feature_index(&data, cfg.render.mode)?;
    render_each(docs, &data.schema, &cfg.render, index.as_ref(), &out)?;
    write_snapshot(&cfg, &out)?;
    println!("rendered {} documents to {}", docs.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated KL weights; defaults to powers of two for the family.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    variant: Option<String>,
}

pub fn gridsearch(g: &Global, a: GridArgs) -> Outcome {
    let data = load(&a.data)?;
    let cfg = resolve(g, &[("model.variant", text(a.variant.as_deref()))], Some(&data.schema.family))?;
    let grid = a.grid.unwrap_or_else(|| default_grid(&data.schema.family));
    if grid.iter().any(|l| !(*l > 0.0)) {
        return Err(usage(anyhow!("KL weights must be positive")));
    }
    let out = out_dir(g, "gridsearch");
    write_snapshot(&cfg, &out)?;
    let rows = grid_search_lambda_kl(&data, &cfg.model, &cfg.train, &grid, Some(&out))?;
    let table = grid_tsv(&rows);
    fs::write(out.join("grid.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
