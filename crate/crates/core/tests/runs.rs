mod common;

use std::collections::HashSet;
use std::time::Duration;

use common::{fixture_id, write_images, MockServer, Reply};
use figqa_core::backend::ResponseCache;
use figqa_core::dataset::{AnswerSet, QARecord, QaFlags};
use figqa_core::fixtures;
use figqa_core::orchestrator::{self, RunError, RunOptions, Stage};
use figqa_core::pipeline::{self, PipelineError, RunConfig};
use figqa_core::prompt::PromptMode;

fn open_flags() -> QaFlags {
    QaFlags {
        answer_set: AnswerSet::Infinite,
        binary: false,
        visual: true,
        unanswerable: false,
    }
}

fn records(n: usize) -> Vec<QARecord> {
    (0..n)
        .map(|i| fixtures::record(&format!("r{i:02}"), "line_chart", open_flags()))
        .collect()
}

fn options(root: &std::path::Path, parallelism: usize) -> RunOptions {
    RunOptions {
        parallelism,
        image_root: Some(root.to_path_buf()),
    }
}

/// Answers with the record id; later ids finish first.
fn reverse_delay_handler(prompt: &str) -> Reply {
    let id = fixture_id(prompt).unwrap_or("?").to_string();
    let n: u64 = id.trim_start_matches('r').parse().unwrap_or(0);
    Reply::ok(format!("<answer>{id}</answer>"))
        .after(Duration::from_millis(60u64.saturating_sub(n * 10)))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn single_mode_keeps_input_order() {
    let server = MockServer::start(reverse_delay_handler).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(6);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let out = orchestrator::run_single(&recs, &client, PromptMode::Single, &options(dir.path(), 6))
        .await
        .unwrap();
    let ids: Vec<_> = out.items.iter().map(|i| i.instance_id.as_str()).collect();
    assert_eq!(ids, ["r00", "r01", "r02", "r03", "r04", "r05"]);
    for item in &out.items {
        assert_eq!(
            item.response.text,
            format!("<answer>{}</answer>", item.instance_id)
        );
    }
    assert_eq!(out.requests, 6);
    assert_eq!(server.images(), 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn partial_failure_is_recorded_not_fatal() {
    let server = MockServer::start(|p| match fixture_id(p) {
        Some("r01") | Some("r03") => Reply::status(400),
        Some(id) => Reply::ok(id.to_string()),
        None => Reply::status(400),
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(5);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let out = orchestrator::run(&recs, &client, PromptMode::Single, &options(dir.path(), 2))
        .await
        .unwrap();
    assert_eq!(out.items.len(), 3);
    let failed: Vec<_> = out
        .failures
        .iter()
        .map(|f| f.instance_id.as_str())
        .collect();
    assert_eq!(failed, ["r01", "r03"]);
    assert!(out
        .failures
        .iter()
        .all(|f| f.stage == Stage::Single && f.transport));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn all_failed_is_an_error_carrying_failures() {
    let server = MockServer::start(|_| Reply::status(404)).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(3);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let err = orchestrator::run(
        &recs,
        &client,
        PromptMode::Baseline1,
        &options(dir.path(), 2),
    )
    .await
    .unwrap_err();
    assert!(err.is_transport());
    let RunError::AllFailed { outcome } = err else {
        panic!("expected AllFailed")
    };
    assert_eq!(outcome.failures.len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn missing_image_fails_as_input_error() {
    let server = MockServer::fixed("x").await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(2);
    write_images(dir.path(), &recs[..1]);
    let client = server.client("m", ResponseCache::disabled());
    let out = orchestrator::run(&recs, &client, PromptMode::Single, &options(dir.path(), 2))
        .await
        .unwrap();
    assert_eq!(out.items.len(), 1);
    assert!(!out.failures[0].transport);
    assert_eq!(server.hits(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn warm_cache_rerun_is_network_free() {
    let server = MockServer::start(reverse_delay_handler).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(5);
    write_images(dir.path(), &recs);
    let cache = dir.path().join("cache");
    let opts = options(dir.path(), 3);

    let cold = server.client("m", ResponseCache::open(&cache).unwrap());
    let first = orchestrator::run(&recs, &cold, PromptMode::Single, &opts)
        .await
        .unwrap();
    assert_eq!(cold.network_requests(), 5);

    let warm = server
        .client("m", ResponseCache::open(&cache).unwrap())
        .offline(true);
    let second = orchestrator::run(&recs, &warm, PromptMode::Single, &opts)
        .await
        .unwrap();
    assert_eq!(warm.network_requests(), 0);
    assert_eq!(warm.cache_hits(), 5);
    assert_eq!(server.hits(), 5);
    let texts = |o: &orchestrator::RunOutcome| -> Vec<String> {
        o.items.iter().map(|i| i.response.text.clone()).collect()
    };
    assert_eq!(texts(&first), texts(&second));
}

fn cot_handler(prompt: &str) -> Reply {
    let id = fixture_id(prompt).unwrap_or("?").to_string();
    if prompt.starts_with("STEP 1") {
        Reply::ok(format!(
            "Looking at What does figure {id} show? Wait a moment, it is 7."
        ))
    } else {
        Reply::ok(format!(
            "<reasoning>checked {id}</reasoning><answer>7</answer>"
        ))
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cot_embeds_step_one_and_doubles_requests() {
    let server = MockServer::start(cot_handler).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(4);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let out = orchestrator::run_cot(&recs, &client, &options(dir.path(), 2))
        .await
        .unwrap();
    assert_eq!(out.requests, 8);
    assert_eq!(server.hits(), 8);
    assert_eq!(server.images(), 8);
    for item in &out.items {
        let step1 = item.step1_text.as_deref().unwrap();
        assert!(step1.contains(&item.instance_id));
    }
    let step2: Vec<String> = server
        .prompts()
        .into_iter()
        .filter(|p| p.starts_with("Previous analysis:\n"))
        .collect();
    assert_eq!(step2.len(), 4);
    for p in &step2 {
        let id = fixture_id(p).unwrap();
        let expected = format!(
            "Previous analysis:\nLooking at What does figure {id} show? Wait a moment, it is 7.\nSTEP 2: COT INFERENCE"
        );
        assert!(p.starts_with(&expected), "{p}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cot_step_one_failure_skips_step_two() {
    let server = MockServer::start(|p| {
        if p.starts_with("STEP 1") && fixture_id(p) == Some("r01") {
            Reply::status(422)
        } else {
            cot_handler(p)
        }
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(3);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let out = orchestrator::run_cot(&recs, &client, &options(dir.path(), 1))
        .await
        .unwrap();
    assert_eq!(out.items.len(), 2);
    assert_eq!(out.failures[0].stage, Stage::Step1);
    assert_eq!(out.requests, 5);
    assert_eq!(server.hits(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn parallelism_is_bounded() {
    let server = MockServer::start(|p| {
        Reply::ok(fixture_id(p).unwrap_or("?").to_string()).after(Duration::from_millis(40))
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(24);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    orchestrator::run(&recs, &client, PromptMode::Single, &options(dir.path(), 3))
        .await
        .unwrap();
    assert!(server.max_inflight() <= 3, "{}", server.max_inflight());
    assert!(server.max_inflight() >= 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn run_directory_and_resume() {
    let fail = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(true));
    let flag = fail.clone();
    let server = MockServer::start(move |p| {
        let id = fixture_id(p).unwrap_or("?");
        if flag.load(std::sync::atomic::Ordering::SeqCst) && (id == "r02" || id == "r04") {
            Reply::status(500)
        } else {
            Reply::ok(format!("<answer>{id}|end|</answer>"))
        }
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let recs = records(5);
    write_images(dir.path(), &recs);
    let mut cfg = server.config("m");
    cfg.max_retries = 0;
    let client = figqa_core::BackendClient::new(cfg, ResponseCache::disabled()).unwrap();
    let config = RunConfig {
        mode: PromptMode::Single,
        options: options(dir.path(), 2),
        resume: false,
    };

    let summary = pipeline::execute_run(&recs, &client, &config, &out_dir)
        .await
        .unwrap();
    assert_eq!(
        (summary.manifest.completed, summary.manifest.failed),
        (3, 2)
    );
    let failures = pipeline::read_failures(&out_dir.join(pipeline::FAILURES_FILE)).unwrap();
    let failed: HashSet<_> = failures.iter().map(|f| f.instance_id.clone()).collect();
    assert_eq!(
        failed,
        HashSet::from(["r02".to_string(), "r04".to_string()])
    );
    assert_eq!(server.hits(), 5);

    fail.store(false, std::sync::atomic::Ordering::SeqCst);
    let resume = RunConfig {
        resume: true,
        ..config
    };
    let summary = pipeline::execute_run(&recs, &client, &resume, &out_dir)
        .await
        .unwrap();
    assert_eq!(server.hits(), 7);
    let retried: Vec<_> = server.prompts()[5..]
        .iter()
        .map(|p| fixture_id(p).unwrap().to_string())
        .collect();
    let retried: HashSet<_> = retried.into_iter().collect();
    assert_eq!(retried, failed);
    assert_eq!(summary.manifest.resumed, 3);
    assert_eq!(summary.manifest.completed, 5);
    assert_eq!(summary.manifest.failed, 0);

    let raw = pipeline::read_raw_outputs(&out_dir.join(pipeline::RAW_FILE)).unwrap();
    let ids: Vec<_> = raw.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, ["r00", "r01", "r02", "r03", "r04"]);
    let preds = pipeline::read_predictions(&out_dir.join(pipeline::PREDICTIONS_FILE), "m").unwrap();
    assert_eq!(preds[2].answer, "r02");

    let manifest = pipeline::read_manifest(&out_dir.join(pipeline::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, summary.manifest);
    assert!(chrono::DateTime::parse_from_rfc3339(&manifest.started).is_ok());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn resume_rejects_a_different_mode() {
    let server = MockServer::start(cot_handler).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(2);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let mut config = RunConfig {
        mode: PromptMode::Single,
        options: options(dir.path(), 2),
        resume: false,
    };
    pipeline::execute_run(&recs, &client, &config, dir.path())
        .await
        .unwrap();
    config.mode = PromptMode::Cot;
    config.resume = true;
    let err = pipeline::execute_run(&recs, &client, &config, dir.path())
        .await
        .unwrap_err();
    assert!(matches!(err, PipelineError::Resume(_)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn total_failure_still_writes_manifest() {
    let server = MockServer::start(|_| Reply::status(400)).await;
    let dir = tempfile::tempdir().unwrap();
    let recs = records(2);
    write_images(dir.path(), &recs);
    let client = server.client("m", ResponseCache::disabled());
    let config = RunConfig {
        mode: PromptMode::Cot,
        options: options(dir.path(), 2),
        resume: false,
    };
    let err = pipeline::execute_run(&recs, &client, &config, dir.path())
        .await
        .unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Run(RunError::AllFailed { .. })
    ));
    let manifest = pipeline::read_manifest(&dir.path().join(pipeline::MANIFEST_FILE)).unwrap();
    assert_eq!(
        (manifest.completed, manifest.failed, manifest.requests),
        (0, 2, 2)
    );
}
