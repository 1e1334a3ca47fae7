use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};

use figqa_core::backend::{BackendClient, Registry, ResponseCache};
use figqa_core::dataset::{self, QARecord, SplitStats};
use figqa_core::ensemble::{self, PredictionSet, RoutingTable};
use figqa_core::metrics::{self, EmbeddingBackend, HttpEmbedder, MetricOptions, MetricReport};
use figqa_core::orchestrator::RunOptions;
use figqa_core::pipeline::{self, PipelineError, RunConfig};
use figqa_core::prompt;

use crate::{
    BreakdownArgs, CmdResult, DumpArgs, EnsembleArgs, EvalArgs, ExitWith, Failure, GroupBy,
    RunArgs, StatsArgs, EXIT_INPUT, EXIT_PARTIAL, EXIT_TRANSPORT,
};

fn input_error(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_INPUT,
        error,
    }
}

fn load(path: &Path, gold: bool) -> Result<Vec<QARecord>, Failure> {
    dataset::load_split(path, gold)
        .with_context(|| format!("reading {}", path.display()))
        .or_exit(EXIT_INPUT)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .or_exit(EXIT_INPUT)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .or_exit(EXIT_INPUT)
}

fn split_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut chars = stem.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => stem,
    }
}

fn histogram(title: &str, rows: &[(String, usize)], total: usize) -> String {
    let w = rows
        .iter()
        .map(|(k, _)| k.len())
        .max()
        .unwrap_or(0)
        .max(title.len());
    let mut out = format!("{title:<w$}  {:>7}  {:>7}\n", "count", "share");
    for (k, n) in rows {
        let share = 100.0 * *n as f64 / total as f64;
        let _ = writeln!(out, "{k:<w$}  {n:>7}  {share:>6.2}%");
    }
    let _ = writeln!(out, "{:<w$}  {total:>7}  {:>6.2}%", "total", 100.0);
    out
}

fn grouped(stats: &SplitStats, by: GroupBy) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = match by {
        GroupBy::FigureType => stats
            .by_figure_type
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
        GroupBy::QaType => stats
            .by_category()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    };
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    rows
}

pub fn stats(args: &StatsArgs) -> CmdResult {
    let mut splits = Vec::new();
    for path in &args.dataset {
        let records = load(path, false)?;
        let stats = dataset::compute_stats(&records)
            .with_context(|| format!("{}", path.display()))
            .or_exit(EXIT_INPUT)?;
        splits.push((split_name(path), stats));
    }
    let mut out = String::new();
    match args.by {
        None => {
            let w = splits
                .iter()
                .map(|(n, _)| n.len())
                .max()
                .unwrap_or(0)
                .max(5);
            let _ = writeln!(out, "{:<w$}  {:>7}", "split", "records");
            for (name, s) in &splits {
                let _ = writeln!(out, "{name:<w$}  {:>7}", s.total);
            }
            if splits.len() > 1 {
                let total: usize = splits.iter().map(|(_, s)| s.total).sum();
                let _ = writeln!(out, "{:<w$}  {total:>7}", "total");
            }
        }
        Some(by) => {
            let title = match by {
                GroupBy::FigureType => "figure_type",
                GroupBy::QaType => "qa_type",
            };
            for (i, (name, s)) in splits.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "{name}");
                out.push_str(&histogram(title, &grouped(s, by), s.total));
            }
        }
    }
    print!("{out}");
    Ok(0)
}

pub fn run(args: &RunArgs) -> CmdResult {
    let registry = match &args.registry {
        Some(p) => Registry::load(p).or_exit(EXIT_INPUT)?,
        None => Registry::shipped(),
    };
    let config = registry.get(&args.backend).or_exit(EXIT_INPUT)?.clone();
    let records = load(&args.dataset, false)?;
    if records.is_empty() {
        return Err(input_error(anyhow!(
            "{} has no records",
            args.dataset.display()
        )));
    }
    let cache_dir = args.cache.clone().unwrap_or_else(|| args.out.join("cache"));
    let cache = ResponseCache::open(&cache_dir)
        .with_context(|| format!("opening cache {}", cache_dir.display()))
        .or_exit(EXIT_INPUT)?;
    let client = BackendClient::new(config, cache)
        .or_exit(EXIT_INPUT)?
        .offline(args.offline);
    let image_root = args.image_root.clone().or_else(|| {
        args.dataset.parent().map(|p| {
            if p.as_os_str().is_empty() {
                PathBuf::from(".")
            } else {
                p.to_path_buf()
            }
        })
    });
    let run_config = RunConfig {
        mode: args.mode,
        options: RunOptions {
            parallelism: args.parallelism.max(1),
            image_root,
        },
        resume: args.resume,
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
        .or_exit(EXIT_INPUT)?;
    let outcome = runtime.block_on(async {
        if !args.offline && !client.probe().await {
            return Err(Failure {
                code: EXIT_TRANSPORT,
                error: anyhow!(
                    "backend {} did not answer a probe at {}",
                    client.config().name,
                    client.config().completions_url()
                ),
            });
        }
        Ok(pipeline::execute_run(&records, &client, &run_config, &args.out).await)
    })?;

    match outcome {
        Ok(summary) => {
            let m = &summary.manifest;
            for f in &summary.failures {
                log::warn!("{} failed at {:?}: {}", f.instance_id, f.stage, f.error);
            }
            println!(
                "{} {}: {} completed, {} failed, {} resumed; {} requests ({} network, {} cached) -> {}",
                m.backend_name,
                m.mode,
                m.completed,
                m.failed,
                m.resumed,
                m.requests,
                m.network_requests,
                m.cache_hits,
                args.out.display()
            );
            Ok(if summary.failures.is_empty() {
                0
            } else {
                EXIT_PARTIAL
            })
        }
        Err(PipelineError::Run(e)) => {
            let code = if e.is_transport() {
                EXIT_TRANSPORT
            } else {
                EXIT_INPUT
            };
            Err(Failure {
                code,
                error: anyhow!(e),
            })
        }
        Err(e) => Err(input_error(e.into())),
    }
}

/// Parses `name=path`, or a bare path named after `default_name`.
fn named_path(spec: &str, default_name: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => (default_name.to_string(), PathBuf::from(spec)),
    }
}

fn load_predictions(specs: &[String]) -> Result<Vec<(String, PredictionSet)>, Failure> {
    let mut out: Vec<(String, PredictionSet)> = Vec::new();
    for spec in specs {
        let (name, path) = named_path(spec, "predictions");
        if out.iter().any(|(n, _)| *n == name) {
            return Err(input_error(anyhow!("backend {name} given twice")));
        }
        let preds = pipeline::read_predictions(&path, &name).or_exit(EXIT_INPUT)?;
        out.push((name, pipeline::prediction_set(preds)));
    }
    Ok(out)
}

pub fn ensemble(args: &EnsembleArgs) -> CmdResult {
    let records = load(&args.dataset, false)?;
    let named = load_predictions(&args.preds)?;
    let order: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let per_backend: HashMap<String, PredictionSet> = named.into_iter().collect();
    let combined = if args.vote {
        ensemble::majority_vote(&per_backend, &records, &order).or_exit(EXIT_INPUT)?
    } else {
        let table = match &args.routing {
            Some(p) => RoutingTable::load(p).or_exit(EXIT_INPUT)?,
            None => RoutingTable::shipped(),
        };
        let mut missing: Vec<String> = records
            .iter()
            .map(|r| ensemble::route(r, &table))
            .filter(|b| !per_backend.contains_key(*b))
            .map(str::to_string)
            .collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            return Err(input_error(
                ensemble::EnsembleError::UnknownBackends(missing).into(),
            ));
        }
        ensemble::ensemble_predictions(&per_backend, &records, &table).or_exit(EXIT_INPUT)?
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .or_exit(EXIT_INPUT)?;
    let path = args.out.join(pipeline::PREDICTIONS_FILE);
    pipeline::write_predictions(&path, &combined).or_exit(EXIT_INPUT)?;

    let mut sources = String::from("instance_id\tbackend\n");
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &combined {
        let _ = writeln!(sources, "{}\t{}", p.instance_id, p.backend_name);
        *counts.entry(p.backend_name.as_str()).or_default() += 1;
    }
    write(&args.out.join("sources.tsv"), &sources)?;
    let parts: Vec<String> = counts.iter().map(|(b, n)| format!("{b} {n}")).collect();
    println!(
        "{} predictions ({}) -> {}",
        combined.len(),
        parts.join(", "),
        path.display()
    );
    Ok(0)
}

struct Toggles {
    rouge: bool,
    exact: bool,
    bertscore: bool,
}

fn parse_toggles(spec: &str) -> anyhow::Result<Toggles> {
    let mut t = Toggles {
        rouge: false,
        exact: false,
        bertscore: false,
    };
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "rouge" => t.rouge = true,
            "exact" => t.exact = true,
            "bertscore" => t.bertscore = true,
            other => bail!("unknown metric {other:?}; expected rouge, bertscore or exact"),
        }
    }
    if !(t.rouge || t.exact || t.bertscore) {
        bail!("no metrics selected");
    }
    Ok(t)
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<(), Failure> {
    write(
        &dir.join("summary.tsv"),
        &metrics::render_summary_tsv(report),
    )?;
    write(
        &dir.join("instances.jsonl"),
        &metrics::render_instances_jsonl(report),
    )
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let toggles = parse_toggles(&args.metrics).or_exit(EXIT_INPUT)?;
    let embedder: Option<HttpEmbedder> = match (&args.embed_url, toggles.bertscore) {
        (Some(url), true) => {
            Some(HttpEmbedder::new(url, Duration::from_secs(300)).or_exit(EXIT_INPUT)?)
        }
        (None, true) => return Err(input_error(anyhow!("bertscore needs --embed-url"))),
        _ => None,
    };
    let options = MetricOptions {
        rouge: toggles.rouge,
        exact: toggles.exact,
        bertscore: toggles.bertscore,
        embedder: embedder.as_ref().map(|e| e as &dyn EmbeddingBackend),
        ..MetricOptions::default()
    };
    let gold = load(&args.gold, true)?;
    let named = load_predictions(&args.preds)?;
    let single = named.len() == 1;

    let mut per_backend: HashMap<String, PredictionSet> = HashMap::new();
    let mut out = String::new();
    for (name, set) in named {
        let mut preds: Vec<_> = set.values().cloned().collect();
        preds.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        let report = metrics::evaluate(&preds, &gold, &options).map_err(|e| {
            let code = if matches!(e, metrics::MetricsError::Embed(_)) {
                EXIT_TRANSPORT
            } else {
                EXIT_INPUT
            };
            Failure {
                code,
                error: anyhow!(e).context(format!("evaluating {name}")),
            }
        })?;
        let dir = if single {
            args.out.clone()
        } else {
            args.out.join(&name)
        };
        write_report(&dir, &report)?;
        if !single {
            let _ = writeln!(out, "== {name}");
        }
        out.push_str(&metrics::render_summary_text(&report));
        per_backend.insert(name, set);
    }

    if !single && toggles.exact {
        let cells = ensemble::exact_match_table(&per_backend, &gold).or_exit(EXIT_INPUT)?;
        let table = match &args.routing {
            Some(p) => Some(RoutingTable::load(p).or_exit(EXIT_INPUT)?),
            None => None,
        };
        write(
            &args.out.join("exact_match.tsv"),
            &ensemble::render_exact_match_tsv(&cells),
        )?;
        let _ = writeln!(out, "== exact match by figure type");
        out.push_str(&ensemble::render_exact_match_text(&cells, table.as_ref()));
    }
    print!("{out}");
    Ok(0)
}

pub fn breakdown(args: &BreakdownArgs) -> CmdResult {
    let path = if args.report.is_dir() {
        args.report.join("instances.jsonl")
    } else {
        args.report.clone()
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .or_exit(EXIT_INPUT)?;
    let instances = metrics::parse_instances_jsonl(&text)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
        .or_exit(EXIT_INPUT)?;
    let mut report = MetricReport::from_instances(instances);
    match args.by {
        Some(GroupBy::FigureType) => report.by_qa_type.clear(),
        Some(GroupBy::QaType) => report.by_figure_type.clear(),
        None => {}
    }
    let mismatches = metrics::render_mismatches_tsv(&report.instances);
    print!("{}", metrics::render_summary_text(&report));
    match &args.out {
        Some(dir) => {
            write(
                &dir.join("breakdown.tsv"),
                &metrics::render_summary_tsv(&report),
            )?;
            write(&dir.join("mismatches.tsv"), &mismatches)?;
            println!(
                "{} mismatches -> {}",
                metrics::mismatches(&report.instances).len(),
                dir.join("mismatches.tsv").display()
            );
        }
        None => {
            println!();
            print!("{mismatches}");
        }
    }
    Ok(0)
}

pub fn dump_prompts(args: &DumpArgs) -> CmdResult {
    let Some(path) = &args.dataset else {
        print!("{}", prompt::dump_templates());
        return Ok(0);
    };
    let records = load(path, false)?;
    let record = match &args.id {
        Some(id) => records.iter().find(|r| r.instance_id == *id),
        None => records.first(),
    }
    .ok_or_else(|| input_error(anyhow!("no matching record in {}", path.display())))?;
    let text = prompt::dump_record(record).or_exit(EXIT_INPUT)?;
    print!("{text}");
    Ok(0)
}
