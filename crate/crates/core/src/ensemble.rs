//! Figure-type routing, majority voting and per-type exact-match tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::answer::Prediction;
use crate::dataset::QARecord;

/// Predictions of one backend keyed by instance id.
pub type PredictionSet = HashMap<String, Prediction>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("routing line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("routing table has no default= line")]
    NoDefault,
    #[error("routing table refers to unknown backend(s): {}", .0.join(", "))]
    UnknownBackends(Vec<String>),
    #[error("no prediction for {instance_id} from routed backend {backend}")]
    MissingPrediction {
        instance_id: String,
        backend: String,
    },
    #[error("majority vote needs at least two backends, got {0}")]
    TooFewBackends(usize),
    #[error("no gold answer for {}", .0.join(", "))]
    MissingGold(Vec<String>),
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

/// Maps figure-type labels to backend names; unlisted labels go to the
/// default backend. Labels are matched exactly after trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    pub routes: BTreeMap<String, String>,
    pub default_backend: String,
}

impl RoutingTable {
    /// Parses `figure_type=backend` lines plus one `default=backend` line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, EnsembleError> {
        let mut routes = BTreeMap::new();
        let mut default_backend = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| EnsembleError::Parse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(err("empty key or value".into()));
            }
            if key == "default" {
                if default_backend.replace(value.to_string()).is_some() {
                    return Err(err("duplicate default".into()));
                }
            } else if routes.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err(format!("duplicate figure type {key}")));
            }
        }
        Ok(RoutingTable {
            routes,
            default_backend: default_backend.ok_or(EnsembleError::NoDefault)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnsembleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Routing shipped with the crate: Qwen2.5-VL, Bespoke MiniChart and
    /// Phi-4 on their assigned figure types, InternVL3 everywhere else.
    pub fn shipped() -> Self {
        Self::parse(include_str!("../config/routing.conf")).expect("shipped routing parses")
    }

    /// Every backend the table can route to, default included.
    pub fn backends(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.routes.values().map(String::as_str).collect();
        out.push(&self.default_backend);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks every routed backend against the known names.
    pub fn validate<'a>(
        &self,
        known: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), EnsembleError> {
        let known: Vec<&str> = known.into_iter().collect();
        let unknown: Vec<String> = self
            .backends()
            .into_iter()
            .filter(|b| !known.contains(b))
            .map(str::to_string)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(EnsembleError::UnknownBackends(unknown))
        }
    }

    pub fn route_type(&self, figure_type: &str) -> &str {
        self.routes
            .get(figure_type.trim())
            .unwrap_or(&self.default_backend)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.routes {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "default={}", self.default_backend);
        out
    }
}

pub fn route<'t>(record: &QARecord, table: &'t RoutingTable) -> &'t str {
    table.route_type(&record.figure_type)
}

/// One prediction per record, taken from the backend its figure type routes to.
pub fn ensemble_predictions(
    per_backend: &HashMap<String, PredictionSet>,
    records: &[QARecord],
    table: &RoutingTable,
) -> Result<Vec<Prediction>, EnsembleError> {
    records
        .iter()
        .map(|r| {
            let backend = route(r, table);
            per_backend
                .get(backend)
                .and_then(|set| set.get(&r.instance_id))
                .map(|p| Prediction {
                    backend_name: backend.to_string(),
                    ..p.clone()
                })
                .ok_or_else(|| EnsembleError::MissingPrediction {
                    instance_id: r.instance_id.clone(),
                    backend: backend.to_string(),
                })
        })
        .collect()
}

/// Normalization shared by voting and exact match: trim then case-fold.
pub fn normalize(answer: &str) -> String {
    answer.trim().to_lowercase()
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize(prediction) == normalize(gold)
}

/// Per record, the most common normalized answer among the backends in
/// `priority`. Ties go to the group containing the earliest backend in
/// `priority`, whose answer text is returned unchanged. Backends without a
/// prediction for a record abstain.
pub fn majority_vote(
    per_backend: &HashMap<String, PredictionSet>,
    records: &[QARecord],
    priority: &[String],
) -> Result<Vec<Prediction>, EnsembleError> {
    let voters: Vec<&String> = priority
        .iter()
        .filter(|b| per_backend.contains_key(*b))
        .collect();
    if voters.len() < 2 {
        return Err(EnsembleError::TooFewBackends(voters.len()));
    }
    records
        .iter()
        .map(|r| {
            // (normalized answer, votes, first voter rank, prediction of that voter)
            let mut groups: Vec<(String, usize, usize, &Prediction)> = Vec::new();
            for (rank, backend) in voters.iter().enumerate() {
                let Some(p) = per_backend[*backend].get(&r.instance_id) else {
                    continue;
                };
                let key = normalize(&p.answer);
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1 += 1,
                    None => groups.push((key, 1, rank, p)),
                }
            }
            let winner = groups
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
                .ok_or_else(|| EnsembleError::MissingPrediction {
                    instance_id: r.instance_id.clone(),
                    backend: "any".into(),
                })?;
            Ok(Prediction {
                backend_name: voters[winner.2].clone(),
                ..winner.3.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMatchCell {
    pub figure_type: String,
    pub backend_name: String,
    /// Percent, rounded to two decimals.
    pub accuracy_mean: f64,
    /// Population standard deviation of the 0/1 indicator, percent, two decimals.
    pub accuracy_std: f64,
    pub n: usize,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Mean and population standard deviation (both percent, unrounded) of a
/// match indicator with `hits` successes out of `n`.
pub fn indicator_stats(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (100.0 * p, 100.0 * (p * (1.0 - p)).max(0.0).sqrt())
}

/// Exact-match accuracy per (figure type, backend), sorted by figure type then
/// backend name.
pub fn exact_match_table(
    per_backend: &HashMap<String, PredictionSet>,
    gold_records: &[QARecord],
) -> Result<Vec<ExactMatchCell>, EnsembleError> {
    let by_id: HashMap<&str, &QARecord> = gold_records
        .iter()
        .map(|r| (r.instance_id.as_str(), r))
        .collect();
    let mut tallies: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut missing = Vec::new();
    let mut backends: Vec<&String> = per_backend.keys().collect();
    backends.sort();
    for backend in backends {
        let mut ids: Vec<&String> = per_backend[backend].keys().collect();
        ids.sort();
        for id in ids {
            let pred = &per_backend[backend][id];
            let Some(gold) = by_id
                .get(id.as_str())
                .and_then(|r| r.gold_answer.as_deref().map(|g| (r, g)))
            else {
                missing.push(id.clone());
                continue;
            };
            let cell = tallies
                .entry((gold.0.figure_type.clone(), backend.clone()))
                .or_insert((0, 0));
            cell.1 += 1;
            if exact_match(&pred.answer, gold.1) {
                cell.0 += 1;
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(EnsembleError::MissingGold(missing));
    }
    Ok(tallies
        .into_iter()
        .map(|((figure_type, backend_name), (hits, n))| {
            let (mean, std) = indicator_stats(hits, n);
            ExactMatchCell {
                figure_type,
                backend_name,
                accuracy_mean: round2(mean),
                accuracy_std: round2(std),
                n,
            }
        })
        .collect())
}

/// Per figure type: the backend with the best mean, and the routed backend
/// when it differs from the best one.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingAudit {
    pub figure_type: String,
    pub routed: String,
    pub best: String,
    pub routed_mean: Option<f64>,
    pub best_mean: f64,
}

pub fn routing_audit(cells: &[ExactMatchCell], table: &RoutingTable) -> Vec<RoutingAudit> {
    let mut by_type: BTreeMap<&str, Vec<&ExactMatchCell>> = BTreeMap::new();
    for c in cells {
        by_type.entry(&c.figure_type).or_default().push(c);
    }
    by_type
        .into_iter()
        .filter_map(|(ft, cs)| {
            let best = cs.iter().max_by(|a, b| {
                a.accuracy_mean
                    .total_cmp(&b.accuracy_mean)
                    .then(b.backend_name.cmp(&a.backend_name))
            })?;
            let routed = table.route_type(ft);
            Some(RoutingAudit {
                figure_type: ft.to_string(),
                routed: routed.to_string(),
                best: best.backend_name.clone(),
                routed_mean: cs
                    .iter()
                    .find(|c| c.backend_name == routed)
                    .map(|c| c.accuracy_mean),
                best_mean: best.accuracy_mean,
            })
        })
        .collect()
}

/// Aligned text rendering: one row per figure type, mean/std per backend,
/// plus the routed backend and a `*` where a better-scoring backend exists.
pub fn render_exact_match_text(cells: &[ExactMatchCell], table: Option<&RoutingTable>) -> String {
    let mut backends: Vec<&str> = cells.iter().map(|c| c.backend_name.as_str()).collect();
    backends.sort_unstable();
    backends.dedup();
    let mut types: Vec<&str> = cells.iter().map(|c| c.figure_type.as_str()).collect();
    types.sort_unstable();
    types.dedup();
    let audit: HashMap<String, RoutingAudit> = table
        .map(|t| {
            routing_audit(cells, t)
                .into_iter()
                .map(|a| (a.figure_type.clone(), a))
                .collect()
        })
        .unwrap_or_default();

    let type_w = types
        .iter()
        .map(|t| t.len())
        .max()
        .unwrap_or(0)
        .max("figure_type".len());
    let col_w = backends.iter().map(|b| b.len()).max().unwrap_or(0).max(15);
    let mut out = String::new();
    let _ = write!(out, "{:<type_w$}  {:>5}", "figure_type", "n");
    for b in &backends {
        let _ = write!(out, "  {b:>col_w$}");
    }
    if table.is_some() {
        out.push_str("  routed");
    }
    out.push('\n');
    for t in &types {
        let n = cells
            .iter()
            .find(|c| c.figure_type == *t)
            .map_or(0, |c| c.n);
        let _ = write!(out, "{t:<type_w$}  {n:>5}");
        for b in &backends {
            let cell = cells
                .iter()
                .find(|c| c.figure_type == *t && c.backend_name == *b)
                .map(|c| format!("{:.2} ± {:.2}", c.accuracy_mean, c.accuracy_std))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "  {cell:>col_w$}");
        }
        if let Some(a) = audit.get(*t) {
            let flag = match a.routed_mean {
                Some(m) if m < a.best_mean => format!(" * (best: {})", a.best),
                None => " (no predictions)".into(),
                _ => String::new(),
            };
            let _ = write!(out, "  {}{flag}", a.routed);
        }
        out.push('\n');
    }
    out
}

pub fn render_exact_match_tsv(cells: &[ExactMatchCell]) -> String {
    let mut out = String::from("figure_type\tbackend\tn\taccuracy_mean\taccuracy_std\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.2}\t{:.2}",
            c.figure_type, c.backend_name, c.n, c.accuracy_mean, c.accuracy_std
        );
    }
    out
}
