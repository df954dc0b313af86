use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use iconsim_core::data::{
    decode_image, eval_view, generate_synthetic_dataset, load_manifest, save_manifest, stratified_split, Dataset, Split,
    DEFAULT_FRACTIONS,
};
use iconsim_core::eval::{evaluate, ground_truth_comparisons, load_comparisons, save_comparisons, EvalReport};
use iconsim_core::index::{build_index, load_index, project_2d, save_index, Neighbor, PairDistance, Projection, Query};
use iconsim_core::nn::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use iconsim_core::setopt::{lock_and_reoptimize, pools_for_keywords, CandidateSet, SearchMode, DEFAULT_EXHAUSTIVE_CAP};
use iconsim_core::training::{resume, train, EpochMetrics, TrainConfig};
use serde::Serialize;

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long, default_value_t = 12)]
    pub collections: usize,
    #[arg(long, default_value_t = 12)]
    pub per_collection: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct GenSummary {
    pub icons: usize,
    pub collections: usize,
    pub manifest: PathBuf,
}

pub fn gen(args: &GenArgs) -> Result<GenSummary> {
    let manifest = generate_synthetic_dataset(args.collections, args.per_collection, args.size, args.seed, &args.out)?;
    Ok(GenSummary {
        icons: manifest.len(),
        collections: manifest.collections().len(),
        manifest: args.out.join("manifest.jsonl"),
    })
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = DEFAULT_FRACTIONS)]
    pub fractions: Vec<f64>,
    /// Defaults to rewriting `--manifest` in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct SplitSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub manifest: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<SplitSummary> {
    let manifest = load_manifest(&args.manifest)?;
    let fractions = [args.fractions[0], args.fractions[1], args.fractions[2]];
    let split = stratified_split(&manifest, fractions, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| args.manifest.clone());
    save_manifest(&split, &out)?;
    let count = |s: Split| split.in_split(s).count();
    Ok(SplitSummary {
        train: count(Split::Train),
        val: count(Split::Val),
        test: count(Split::Test),
        manifest: out,
    })
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 64 px input, 32-d embedding.
    Desk,
    /// 180 px input, 256-d embedding.
    Full,
}

/// Every `TrainConfig` field as an optional override.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long = "batch_size", alias = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "base_lr", alias = "base-lr")]
    pub base_lr: Option<f64>,
    #[arg(long = "lr_decay_every", alias = "lr-decay-every")]
    pub lr_decay_every: Option<u32>,
    #[arg(long = "lr_decay_factor", alias = "lr-decay-factor")]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long = "triplets_per_epoch", alias = "triplets-per-epoch")]
    pub triplets_per_epoch: Option<usize>,
    #[arg(long = "adam_beta1", alias = "adam-beta1")]
    pub adam_beta1: Option<f64>,
    #[arg(long = "adam_beta2", alias = "adam-beta2")]
    pub adam_beta2: Option<f64>,
    #[arg(long = "adam_epsilon", alias = "adam-epsilon")]
    pub adam_epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "crop_ratio", alias = "crop-ratio")]
    pub crop_ratio: Option<f64>,
    #[arg(long = "embed_batch", alias = "embed-batch")]
    pub embed_batch: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(margin, batch_size, base_lr, lr_decay_every, lr_decay_factor, epochs, adam_beta1, adam_beta2, adam_epsilon, seed, crop_ratio, embed_batch);
        if self.triplets_per_epoch.is_some() {
            c.triplets_per_epoch = self.triplets_per_epoch;
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where the best-validation checkpoint goes.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the final-epoch checkpoint (with optimizer state) here.
    #[arg(long)]
    pub last: Option<PathBuf>,
    /// Continue from a checkpoint written with `--last`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON TrainConfig; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk, conflicts_with = "model_config")]
    pub model: Preset,
    /// JSON ModelConfig, instead of a preset.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Writes one JSON line per epoch.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: u32,
    pub last_epoch: u32,
    pub out: PathBuf,
    pub config: TrainConfig,
    pub model: ModelConfig,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    args.overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

pub fn model_config(args: &TrainArgs) -> Result<ModelConfig> {
    Ok(match (&args.model_config, args.model) {
        (Some(path), _) => read_json(path)?,
        (None, Preset::Desk) => ModelConfig::desk(),
        (None, Preset::Full) => ModelConfig::default(),
    })
}

pub fn train_cmd(args: &TrainArgs, on_epoch: &mut dyn FnMut(&EpochMetrics)) -> Result<TrainSummary> {
    let config = train_config(args)?;
    let dataset = Dataset::load(load_manifest(&args.manifest)?)?;
    let mut log = match &args.metrics {
        Some(path) => Some(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => None,
    };
    let mut write_err = None;
    let mut callback = |m: &EpochMetrics| {
        if let Some(f) = log.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *f, m).map_err(std::io::Error::from).and_then(|_| writeln!(f)) {
                write_err.get_or_insert(e);
            }
        }
        on_epoch(m);
    };
    let outcome = match &args.resume {
        Some(path) => {
            let start = load_checkpoint(path)?;
            if args.model_config.is_some() && start.model.config() != &model_config(args)? {
                bail!("--model-config differs from the architecture stored in {}", path.display());
            }
            resume(&dataset, start, &config, &mut callback)?
        }
        None => {
            let model = Model::build(model_config(args)?, config.seed)?;
            log::info!("{} parameters", model.parameter_count());
            train(&dataset, model, &config, &mut callback)?
        }
    };
    if let Some(e) = write_err {
        return Err(e).context("writing metrics");
    }
    save_checkpoint(&outcome.best, &args.out)?;
    if let Some(last) = &args.last {
        save_checkpoint(&outcome.last, last)?;
    }
    Ok(TrainSummary {
        best_epoch: outcome.best.epoch,
        last_epoch: outcome.last.epoch,
        out: args.out.clone(),
        model: outcome.best.model.config().clone(),
        config,
    })
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct EmbedSummary {
    pub entries: usize,
    pub dim: usize,
    pub out: PathBuf,
}

pub fn embed(args: &EmbedArgs) -> Result<EmbedSummary> {
    let model = load_checkpoint(&args.checkpoint)?.model;
    let dataset = Dataset::load(load_manifest(&args.manifest)?)?;
    let index = build_index(&model, &dataset)?;
    save_index(&index, &args.out)?;
    Ok(EmbedSummary {
        entries: index.len(),
        dim: index.dim(),
        out: args.out.clone(),
    })
}

#[derive(Args, Debug, Clone)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["query", "image"]))]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Id of an indexed icon; it is excluded from its own results.
    #[arg(long)]
    pub query: Option<String>,
    /// A PGM or PNG file to embed with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

pub fn search(args: &SearchArgs) -> Result<Vec<Neighbor>> {
    let index = load_index(&args.index)?;
    match (&args.query, &args.image, &args.checkpoint) {
        (Some(id), _, _) => Ok(index.knn(Query::Id(id), args.k)?),
        (None, Some(path), Some(ckpt)) => {
            let model = load_checkpoint(ckpt)?.model;
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let view = eval_view(&decode_image(&bytes)?, model.config().input_size)?;
            let vector = model.embed_images(&[&view], 1)?.remove(0);
            Ok(index.knn(Query::Vector(&vector), args.k)?)
        }
        _ => bail!("search needs --query, or --image with --checkpoint"),
    }
}

#[derive(Args, Debug, Clone)]
pub struct ComparisonsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ComparisonsSummary {
    pub comparisons: usize,
    pub out: PathBuf,
}

pub fn comparisons(args: &ComparisonsArgs) -> Result<ComparisonsSummary> {
    let manifest = load_manifest(&args.manifest)?;
    let comps = ground_truth_comparisons(&manifest, args.split, args.count, args.seed)?;
    save_comparisons(&comps, &args.out)?;
    Ok(ComparisonsSummary {
        comparisons: comps.len(),
        out: args.out.clone(),
    })
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub comparisons: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let model = load_checkpoint(&args.checkpoint)?.model;
    let comps = load_comparisons(&args.comparisons)?;
    let dataset = Dataset::load(load_manifest(&args.manifest)?)?;
    let report = evaluate(&model, &comps, &dataset)?;
    if let Some(out) = &args.out {
        fs::write(out, report_json(&report)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

/// The byte form `eval --out` writes.
pub fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Comma-separated ids; for `--pairs`, the scope (default: whole index).
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    /// Print the N farthest pairs instead of the matrix.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Serialize, PartialEq)]
#[serde(untagged)]
pub enum KernelOutput {
    Matrix { ids: Vec<String>, matrix: Vec<Vec<f64>> },
    Pairs(Vec<PairDistance>),
}

pub fn kernel(args: &KernelArgs) -> Result<KernelOutput> {
    let index = load_index(&args.index)?;
    match args.pairs {
        Some(n) => {
            let scope = (!args.ids.is_empty()).then_some(args.ids.as_slice());
            Ok(KernelOutput::Pairs(index.max_distance_pairs(scope, n)?))
        }
        None => {
            if args.ids.is_empty() {
                bail!("kernel needs --ids");
            }
            Ok(KernelOutput::Matrix {
                matrix: index.kernel_matrix(&args.ids)?,
                ids: args.ids.clone(),
            })
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Exhaustive,
    Beam,
}

#[derive(Args, Debug, Clone)]
pub struct SetsArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub keywords: Vec<String>,
    /// `keyword=id`, repeatable.
    #[arg(long = "lock", value_parser = parse_lock)]
    pub locks: Vec<(String, String)>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exhaustive)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 200)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
    #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_CAP)]
    pub cap: u128,
}

fn parse_lock(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_owned(), v.to_owned())),
        _ => Err(format!("expected keyword=id, got {s:?}")),
    }
}

pub fn sets(args: &SetsArgs) -> Result<Vec<CandidateSet>> {
    let index = load_index(&args.index)?;
    let pools = pools_for_keywords(&index, &args.keywords)?;
    let locked: HashMap<String, String> = args.locks.iter().cloned().collect();
    let mode = match args.mode {
        ModeArg::Exhaustive => SearchMode::Exhaustive { cap: args.cap },
        ModeArg::Beam => SearchMode::Beam { width: args.beam_width },
    };
    Ok(lock_and_reoptimize(&pools, &locked, &index, mode, args.top_n)?)
}

#[derive(Args, Debug, Clone)]
pub struct ProjectArgs {
    #[arg(long)]
    pub index: PathBuf,
}

pub fn project(args: &ProjectArgs) -> Result<Projection> {
    Ok(project_2d(&load_index(&args.index)?)?)
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Static files served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Defaults to `thumbnails/` beside the index.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let cache = args.cache_dir.clone().unwrap_or_else(|| {
        args.index.parent().unwrap_or(Path::new(".")).join("thumbnails")
    });
    let state = iconsim_service::ServiceState::load(&args.index, &args.checkpoint, &args.manifest, cache)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(iconsim_service::serve(Arc::new(state), args.addr, args.ui_dir.clone()))?;
    Ok(())
}

/// Keywords with the most indexed icons, ties by name.
pub fn largest_keywords(index: &iconsim_core::index::EmbeddingIndex, n: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..index.len() {
        if let Some(k) = index.keyword(i) {
            *counts.entry(k).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(k, _)| k.to_owned()).collect()
}
