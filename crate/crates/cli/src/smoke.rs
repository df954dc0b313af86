use std::path::{Path, PathBuf};

use iconsim_core::eval::EvalReport;
use iconsim_core::index::load_index;
use iconsim_core::setopt::CandidateSet;

use crate::commands::largest_keywords;
use crate::{run, CliError};

#[derive(Clone, Debug)]
pub struct SmokeOptions {
    pub collections: usize,
    pub per_collection: usize,
    pub size: usize,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for SmokeOptions {
    fn default() -> Self {
        Self {
            collections: 4,
            per_collection: 10,
            size: 64,
            epochs: 3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SmokeReport {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    pub comparisons: PathBuf,
    /// Exactly the bytes `eval --out` wrote.
    pub report_path: PathBuf,
    pub report: EvalReport,
    pub sets: Vec<CandidateSet>,
}

#[derive(Debug, thiserror::Error)]
#[error("pipeline stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: CliError,
}

fn stage(name: &'static str, args: &[String]) -> Result<Vec<u8>, StageError> {
    log::info!("smoke stage {name}");
    let mut out = Vec::new();
    let argv = std::iter::once("iconsim".to_owned()).chain(std::iter::once(name.to_owned())).chain(args.iter().cloned());
    run(argv, &mut out).map_err(|source| StageError { stage: name, source })?;
    Ok(out)
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// gen → split → train (desk net) → embed → comparisons → eval → sets, every
/// stage through the command line, with all files under `dir`. Stops at
/// the first failing stage.
pub fn run_pipeline_smoke(dir: &Path, opts: &SmokeOptions) -> Result<SmokeReport, StageError> {
    let data = dir.join("data");
    let manifest = data.join("manifest.jsonl");
    let checkpoint = dir.join("model.ckpt");
    let index = dir.join("index.bin");
    let comparisons = dir.join("comparisons.jsonl");
    let report_path = dir.join("report.json");
    let seed = opts.seed.to_string();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    stage(
        "gen",
        &s(&[
            "--collections",
            &opts.collections.to_string(),
            "--per-collection",
            &opts.per_collection.to_string(),
            "--size",
            &opts.size.to_string(),
            "--seed",
            &seed,
            "--out",
            &p(&data),
        ]),
    )?;
    stage("split", &s(&["--manifest", &p(&manifest), "--seed", &seed]))?;
    stage(
        "train",
        &s(&[
            "--manifest",
            &p(&manifest),
            "--out",
            &p(&checkpoint),
            "--epochs",
            &opts.epochs.to_string(),
            "--seed",
            &seed,
        ]),
    )?;
    stage(
        "embed",
        &s(&["--manifest", &p(&manifest), "--checkpoint", &p(&checkpoint), "--out", &p(&index)]),
    )?;
    stage(
        "comparisons",
        &s(&["--manifest", &p(&manifest), "--count", "200", "--seed", &seed, "--out", &p(&comparisons)]),
    )?;
    let report = stage(
        "eval",
        &s(&[
            "--checkpoint",
            &p(&checkpoint),
            "--manifest",
            &p(&manifest),
            "--comparisons",
            &p(&comparisons),
            "--out",
            &p(&report_path),
        ]),
    )?;
    let report: EvalReport = serde_json::from_slice(&report).map_err(|e| StageError {
        stage: "eval",
        source: CliError::Runtime(e.into()),
    })?;
    let keywords = load_index(&index)
        .map(|ix| largest_keywords(&ix, 3))
        .map_err(|e| StageError {
            stage: "sets",
            source: CliError::Runtime(e.into()),
        })?;
    let sets = stage("sets", &s(&["--index", &p(&index), "--keywords", &keywords.join(","), "--top-n", "3"]))?;
    let sets: Vec<CandidateSet> = serde_json::from_slice(&sets).map_err(|e| StageError {
        stage: "sets",
        source: CliError::Runtime(e.into()),
    })?;
    Ok(SmokeReport {
        manifest,
        checkpoint,
        index,
        comparisons,
        report_path,
        report,
        sets,
    })
}
