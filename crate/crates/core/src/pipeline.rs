//! Inter-stage artifacts and the file-level run driver.
//!
//! A run directory holds `raw.jsonl` (one line per completed record),
//! `predictions.jsonl`, `failures.jsonl` and `manifest.json`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::answer::{finalize, Prediction};
use crate::backend::BackendClient;
use crate::dataset::QARecord;
use crate::ensemble::PredictionSet;
use crate::orchestrator::{self, Failure, RunError, RunOptions, RunOutcome};
use crate::prompt::PromptMode;

pub const RAW_FILE: &str = "raw.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One completed record of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawOutput {
    pub instance_id: String,
    pub mode: PromptMode,
    pub backend_name: String,
    pub step1_text: Option<String>,
    pub raw_text: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub backend_name: String,
    pub mode: PromptMode,
    pub record_count: usize,
    pub started: String,
    pub finished: String,
    pub parallelism: usize,
    /// Chat calls issued by this invocation, cache hits included.
    pub requests: usize,
    /// Calls that reached the endpoint, retries included.
    pub network_requests: usize,
    pub cache_hits: usize,
    pub completed: usize,
    pub failed: usize,
    /// Records carried over from a previous run by `--resume`.
    pub resumed: usize,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_raw_outputs(path: &Path, rows: &[RawOutput]) -> Result<(), PipelineError> {
    write_jsonl(path, rows)
}

pub fn read_raw_outputs(path: &Path) -> Result<Vec<RawOutput>, PipelineError> {
    read_jsonl(path)
}

pub fn write_failures(path: &Path, rows: &[Failure]) -> Result<(), PipelineError> {
    write_jsonl(path, rows)
}

pub fn read_failures(path: &Path) -> Result<Vec<Failure>, PipelineError> {
    read_jsonl(path)
}

/// Writes `{instance_id, answer}` lines.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), PipelineError> {
    write_jsonl(path, predictions)
}

/// Reads a prediction file, tagging each entry with `backend_name`.
pub fn read_predictions(path: &Path, backend_name: &str) -> Result<Vec<Prediction>, PipelineError> {
    let mut preds: Vec<Prediction> = read_jsonl(path)?;
    for p in &mut preds {
        p.backend_name = backend_name.to_string();
    }
    Ok(preds)
}

pub fn prediction_set(predictions: Vec<Prediction>) -> PredictionSet {
    predictions
        .into_iter()
        .map(|p| (p.instance_id.clone(), p))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })
}

/// Final answers for raw outputs, in the order given.
pub fn predictions_from_raw(raw: &[RawOutput], records: &[QARecord]) -> Vec<Prediction> {
    let by_id: HashMap<&str, &QARecord> = records
        .iter()
        .map(|r| (r.instance_id.as_str(), r))
        .collect();
    raw.iter()
        .filter_map(|o| {
            by_id
                .get(o.instance_id.as_str())
                .map(|r| finalize(&o.raw_text, r, &o.backend_name))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: PromptMode,
    pub options: RunOptions,
    /// Keep completed records from an existing `raw.jsonl` and only request
    /// the rest.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub failures: Vec<Failure>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs `records` and writes the run directory. Returns the orchestrator's
/// error only when no record has an output, after still writing the
/// failure list and manifest.
pub async fn execute_run(
    records: &[QARecord],
    client: &BackendClient,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<RunSummary, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let backend = client.config().name.clone();
    let raw_path = out_dir.join(RAW_FILE);

    let previous: Vec<RawOutput> = if config.resume && raw_path.exists() {
        let prev = read_raw_outputs(&raw_path)?;
        if let Some(o) = prev
            .iter()
            .find(|o| o.mode != config.mode || o.backend_name != backend)
        {
            return Err(PipelineError::Resume(format!(
                "{} was produced by {}/{}, not {}/{}",
                raw_path.display(),
                o.backend_name,
                o.mode,
                backend,
                config.mode
            )));
        }
        prev
    } else {
        Vec::new()
    };
    let wanted: HashSet<&str> = records.iter().map(|r| r.instance_id.as_str()).collect();
    let done: HashMap<&str, &RawOutput> = previous
        .iter()
        .filter(|o| wanted.contains(o.instance_id.as_str()))
        .map(|o| (o.instance_id.as_str(), o))
        .collect();
    let pending: Vec<QARecord> = records
        .iter()
        .filter(|r| !done.contains_key(r.instance_id.as_str()))
        .cloned()
        .collect();

    let started = now();
    let requests_before = client.network_requests();
    let hits_before = client.cache_hits();
    let (outcome, run_error) = if pending.is_empty() {
        (RunOutcome::default(), None)
    } else {
        match orchestrator::run(&pending, client, config.mode, &config.options).await {
            Ok(o) => (o, None),
            Err(RunError::AllFailed { outcome }) => {
                let err = RunError::AllFailed {
                    outcome: outcome.clone(),
                };
                (outcome, Some(err))
            }
            Err(e) => return Err(e.into()),
        }
    };

    let fresh: HashMap<&str, RawOutput> = outcome
        .items
        .iter()
        .map(|item| {
            (
                item.instance_id.as_str(),
                RawOutput {
                    instance_id: item.instance_id.clone(),
                    mode: config.mode,
                    backend_name: backend.clone(),
                    step1_text: item.step1_text.clone(),
                    raw_text: item.response.text.clone(),
                    fingerprint: item.response.request_fingerprint.clone(),
                },
            )
        })
        .collect();
    let merged: Vec<RawOutput> = records
        .iter()
        .filter_map(|r| {
            let id = r.instance_id.as_str();
            done.get(id)
                .map(|o| (*o).clone())
                .or_else(|| fresh.get(id).cloned())
        })
        .collect();

    write_raw_outputs(&raw_path, &merged)?;
    write_predictions(
        &out_dir.join(PREDICTIONS_FILE),
        &predictions_from_raw(&merged, records),
    )?;
    write_failures(&out_dir.join(FAILURES_FILE), &outcome.failures)?;

    let manifest = RunManifest {
        run_id: format!(
            "{}-{}-{}",
            backend,
            config.mode,
            chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")
        ),
        backend_name: backend,
        mode: config.mode,
        record_count: records.len(),
        started,
        finished: now(),
        parallelism: config.options.parallelism,
        requests: outcome.requests,
        network_requests: client.network_requests() - requests_before,
        cache_hits: client.cache_hits() - hits_before,
        completed: merged.len(),
        failed: outcome.failures.len(),
        resumed: done.len(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;

    match run_error {
        Some(e) if merged.is_empty() => Err(e.into()),
        _ => Ok(RunSummary {
            manifest,
            failures: outcome.failures,
        }),
    }
}
