//! Runs a prompting mode over a record set against one backend, with
//! bounded fan-out. Results come back in input order whatever the
//! completion order.

use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, ClientError, ModelResponse, Turn};
use crate::dataset::QARecord;
use crate::prompt::{self, PromptMode};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("all {} record(s) failed; first failure: {}", .outcome.failures.len(), first_failure(.outcome))]
    AllFailed { outcome: RunOutcome },
    #[error("mode {0} is not a single-step mode")]
    WrongMode(PromptMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prompt,
    Single,
    Step1,
    Step2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub stage: Stage,
    pub error: String,
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunItem {
    pub instance_id: String,
    /// Step-1 output for chain-of-thought runs.
    pub step1_text: Option<String>,
    pub response: ModelResponse,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// Successful items in input order.
    pub items: Vec<RunItem>,
    /// Failed records in input order.
    pub failures: Vec<Failure>,
    /// Chat calls issued (cache hits included).
    pub requests: usize,
}

fn first_failure(outcome: &RunOutcome) -> String {
    outcome
        .failures
        .first()
        .map(|f| format!("{}: {}", f.instance_id, f.error))
        .unwrap_or_default()
}

impl RunError {
    /// True when every record failed on transport errors or timeouts.
    pub fn is_transport(&self) -> bool {
        match self {
            RunError::AllFailed { outcome } => outcome.failures.iter().all(|f| f.transport),
            RunError::WrongMode(_) => false,
        }
    }
}

impl RunOutcome {
    fn check(self, total: usize) -> Result<Self, RunError> {
        if total > 0 && self.items.is_empty() {
            return Err(RunError::AllFailed { outcome: self });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub parallelism: usize,
    /// Base directory for relative figure paths.
    pub image_root: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallelism: 4,
            image_root: None,
        }
    }
}

impl RunOptions {
    fn image_path(&self, figure: &Path) -> PathBuf {
        match &self.image_root {
            Some(root) if figure.is_relative() => root.join(figure),
            _ => figure.to_path_buf(),
        }
    }
}

/// Step-2 user text: the step-1 analysis, then the step-2 instructions.
pub fn step2_message(step1_output: &str, step2_prompt: &str) -> String {
    format!("Previous analysis:\n{step1_output}\n{step2_prompt}")
}

fn failure(
    record: &QARecord,
    stage: Stage,
    err: &dyn std::fmt::Display,
    transport: bool,
) -> Failure {
    Failure {
        instance_id: record.instance_id.clone(),
        stage,
        error: err.to_string(),
        transport,
    }
}

fn client_failure(record: &QARecord, stage: Stage, err: &ClientError) -> Failure {
    failure(record, stage, err, err.is_transport())
}

fn collect(results: Vec<(Result<RunItem, Failure>, usize)>) -> RunOutcome {
    let mut outcome = RunOutcome::default();
    for (result, requests) in results {
        outcome.requests += requests;
        match result {
            Ok(item) => outcome.items.push(item),
            Err(f) => outcome.failures.push(f),
        }
    }
    outcome
}

/// One request per record for the baseline and single modes.
pub async fn run_single(
    records: &[QARecord],
    client: &BackendClient,
    mode: PromptMode,
    options: &RunOptions,
) -> Result<RunOutcome, RunError> {
    if mode == PromptMode::Cot {
        return Err(RunError::WrongMode(mode));
    }
    let results = stream::iter(records)
        .map(|record| async move {
            let bundle = match prompt::render(record, mode) {
                Ok(b) => b,
                Err(e) => return (Err(failure(record, Stage::Prompt, &e, false)), 0),
            };
            let turn =
                Turn::user_with_image(bundle.step2_text, options.image_path(&bundle.image_ref));
            let result = client
                .chat(std::slice::from_ref(&turn))
                .await
                .map(|response| RunItem {
                    instance_id: record.instance_id.clone(),
                    step1_text: None,
                    response,
                })
                .map_err(|e| client_failure(record, Stage::Single, &e));
            (result, 1)
        })
        .buffered(options.parallelism.max(1))
        .collect::<Vec<_>>()
        .await;
    collect(results).check(records.len())
}

/// Two requests per record: the analysis step, then the inference step with
/// the analysis embedded ahead of the step-2 prompt. Both carry the figure.
/// A failed step 1 skips step 2 for that record.
pub async fn run_cot(
    records: &[QARecord],
    client: &BackendClient,
    options: &RunOptions,
) -> Result<RunOutcome, RunError> {
    let results = stream::iter(records)
        .map(|record| async move {
            let bundle = match prompt::render_cot(record) {
                Ok(b) => b,
                Err(e) => return (Err(failure(record, Stage::Prompt, &e, false)), 0),
            };
            let image = options.image_path(&bundle.image_ref);
            let step1_prompt = bundle.step1_text.unwrap_or_default();
            let step1 = match client
                .chat(&[Turn::user_with_image(step1_prompt, &image)])
                .await
            {
                Ok(r) => r,
                Err(e) => return (Err(client_failure(record, Stage::Step1, &e)), 1),
            };
            let turn =
                Turn::user_with_image(step2_message(&step1.text, &bundle.step2_text), &image);
            let result = client
                .chat(std::slice::from_ref(&turn))
                .await
                .map(|response| RunItem {
                    instance_id: record.instance_id.clone(),
                    step1_text: Some(step1.text),
                    response,
                })
                .map_err(|e| client_failure(record, Stage::Step2, &e));
            (result, 2)
        })
        .buffered(options.parallelism.max(1))
        .collect::<Vec<_>>()
        .await;
    collect(results).check(records.len())
}

pub async fn run(
    records: &[QARecord],
    client: &BackendClient,
    mode: PromptMode,
    options: &RunOptions,
) -> Result<RunOutcome, RunError> {
    match mode {
        PromptMode::Cot => run_cot(records, client, options).await,
        _ => run_single(records, client, mode, options).await,
    }
}
