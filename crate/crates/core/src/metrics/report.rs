use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bertscore::{bertscore_pairs, EmbedError, EmbeddingBackend};
use super::rouge::{rouge1, rouge_l, Prf};
use super::tokenize::tokenize;
use crate::answer::Prediction;
use crate::dataset::QARecord;
use crate::ensemble::exact_match;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions without gold record: {}", .0.join(", "))]
    MissingGold(Vec<String>),
    #[error("gold records without prediction: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("gold record(s) lack a gold answer: {}", .0.join(", "))]
    NoGoldAnswer(Vec<String>),
    #[error("duplicate prediction for {0}")]
    DuplicatePrediction(String),
    #[error("bertscore requested but no embedding backend configured")]
    NoEmbedder,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Which metrics to compute.
pub struct MetricOptions<'a> {
    pub rouge: bool,
    pub exact: bool,
    pub bertscore: bool,
    pub embedder: Option<&'a dyn EmbeddingBackend>,
    pub batch_size: usize,
}

impl Default for MetricOptions<'_> {
    fn default() -> Self {
        MetricOptions {
            rouge: true,
            exact: true,
            bertscore: false,
            embedder: None,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub instance_id: String,
    pub figure_type: String,
    pub qa_type: String,
    pub prediction: String,
    pub gold: String,
    pub rouge1: Option<[f64; 3]>,
    pub rouge_l: Option<[f64; 3]>,
    pub bertscore: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bertscore_empty: bool,
    pub exact: Option<bool>,
}

fn triple(s: Prf) -> [f64; 3] {
    [s.p, s.r, s.f1]
}

/// Means over a group of instances. Metrics that were not computed are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub n: usize,
    pub rouge1: Option<Prf>,
    pub rouge_l: Option<Prf>,
    pub bertscore: Option<Prf>,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    /// Sorted by instance id.
    pub instances: Vec<InstanceScores>,
    pub overall: Aggregate,
    pub by_figure_type: BTreeMap<String, Aggregate>,
    pub by_qa_type: BTreeMap<String, Aggregate>,
}

fn mean_prf<'a>(items: impl Iterator<Item = &'a [f64; 3]>) -> Option<Prf> {
    let (mut sum, mut n) = ([0.0; 3], 0usize);
    for t in items {
        for k in 0..3 {
            sum[k] += t[k];
        }
        n += 1;
    }
    (n > 0).then(|| Prf {
        p: sum[0] / n as f64,
        r: sum[1] / n as f64,
        f1: sum[2] / n as f64,
    })
}

/// Means over `instances` in the order given. Callers pass id-sorted slices
/// so summation order is fixed.
pub fn aggregate(instances: &[&InstanceScores]) -> Aggregate {
    let exact: Vec<bool> = instances.iter().filter_map(|i| i.exact).collect();
    Aggregate {
        n: instances.len(),
        rouge1: mean_prf(instances.iter().filter_map(|i| i.rouge1.as_ref())),
        rouge_l: mean_prf(instances.iter().filter_map(|i| i.rouge_l.as_ref())),
        bertscore: mean_prf(instances.iter().filter_map(|i| i.bertscore.as_ref())),
        exact: (!exact.is_empty())
            .then(|| exact.iter().filter(|&&e| e).count() as f64 / exact.len() as f64),
    }
}

fn group_by<'a>(
    instances: &'a [InstanceScores],
    key: impl Fn(&InstanceScores) -> &str,
) -> BTreeMap<String, Aggregate> {
    let mut groups: BTreeMap<String, Vec<&'a InstanceScores>> = BTreeMap::new();
    for i in instances {
        groups.entry(key(i).to_string()).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, aggregate(&v)))
        .collect()
}

impl MetricReport {
    /// Builds the report from already-scored instances.
    pub fn from_instances(mut instances: Vec<InstanceScores>) -> Self {
        instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        let all: Vec<&InstanceScores> = instances.iter().collect();
        let overall = aggregate(&all);
        let by_figure_type = group_by(&instances, |i| &i.figure_type);
        let by_qa_type = group_by(&instances, |i| &i.qa_type);
        MetricReport {
            instances,
            overall,
            by_figure_type,
            by_qa_type,
        }
    }
}

fn check_ids<'a>(
    predictions: &'a [Prediction],
    gold_records: &'a [QARecord],
) -> Result<Vec<(&'a Prediction, &'a QARecord, &'a str)>, MetricsError> {
    let gold: HashMap<&str, &QARecord> = gold_records
        .iter()
        .map(|r| (r.instance_id.as_str(), r))
        .collect();
    let mut seen = HashSet::new();
    for p in predictions {
        if !seen.insert(p.instance_id.as_str()) {
            return Err(MetricsError::DuplicatePrediction(p.instance_id.clone()));
        }
    }
    let mut missing_gold: Vec<String> = predictions
        .iter()
        .filter(|p| !gold.contains_key(p.instance_id.as_str()))
        .map(|p| p.instance_id.clone())
        .collect();
    if !missing_gold.is_empty() {
        missing_gold.sort();
        return Err(MetricsError::MissingGold(missing_gold));
    }
    let mut missing_pred: Vec<String> = gold_records
        .iter()
        .filter(|r| !seen.contains(r.instance_id.as_str()))
        .map(|r| r.instance_id.clone())
        .collect();
    if !missing_pred.is_empty() {
        missing_pred.sort();
        return Err(MetricsError::MissingPredictions(missing_pred));
    }
    let mut no_answer = Vec::new();
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        let r = gold[p.instance_id.as_str()];
        match r.gold_answer.as_deref() {
            Some(g) => out.push((p, r, g)),
            None => no_answer.push(r.instance_id.clone()),
        }
    }
    if !no_answer.is_empty() {
        no_answer.sort();
        return Err(MetricsError::NoGoldAnswer(no_answer));
    }
    out.sort_by(|a, b| a.0.instance_id.cmp(&b.0.instance_id));
    Ok(out)
}

/// Scores every prediction against its gold record. Prediction and gold id
/// sets must coincide.
pub fn evaluate(
    predictions: &[Prediction],
    gold_records: &[QARecord],
    options: &MetricOptions<'_>,
) -> Result<MetricReport, MetricsError> {
    let pairs = check_ids(predictions, gold_records)?;
    let bert = if options.bertscore {
        let embedder = options.embedder.ok_or(MetricsError::NoEmbedder)?;
        let texts: Vec<(&str, &str)> = pairs
            .iter()
            .map(|(p, _, g)| (p.answer.as_str(), *g))
            .collect();
        Some(bertscore_pairs(&texts, embedder, options.batch_size)?)
    } else {
        None
    };
    let instances = pairs
        .iter()
        .enumerate()
        .map(|(idx, (p, r, g))| {
            let (cand, reference) = (tokenize(&p.answer), tokenize(g));
            let bs = bert.as_ref().map(|b| b[idx]);
            InstanceScores {
                instance_id: p.instance_id.clone(),
                figure_type: r.figure_type.clone(),
                qa_type: r.qa_flags.category().to_string(),
                prediction: p.answer.clone(),
                gold: g.to_string(),
                rouge1: options.rouge.then(|| triple(rouge1(&cand, &reference))),
                rouge_l: options.rouge.then(|| triple(rouge_l(&cand, &reference))),
                bertscore: bs.map(|b| triple(b.prf)),
                bertscore_empty: bs.is_some_and(|b| b.empty),
                exact: options.exact.then(|| exact_match(&p.answer, g)),
            }
        })
        .collect();
    Ok(MetricReport::from_instances(instances))
}

const COLUMNS: [&str; 10] = [
    "R1-F1", "R1-P", "R1-R", "RL-F1", "RL-P", "RL-R", "BS-F1", "BS-P", "BS-R", "EM",
];

fn cells(a: &Aggregate) -> [Option<f64>; 10] {
    let prf = |s: Option<Prf>| s.map_or([None; 3], |s| [Some(s.f1), Some(s.p), Some(s.r)]);
    let [a1, a2, a3] = prf(a.rouge1);
    let [b1, b2, b3] = prf(a.rouge_l);
    let [c1, c2, c3] = prf(a.bertscore);
    [a1, a2, a3, b1, b2, b3, c1, c2, c3, a.exact]
}

fn rows(report: &MetricReport) -> Vec<(&'static str, &str, &Aggregate)> {
    let mut out = vec![("overall", "all", &report.overall)];
    out.extend(
        report
            .by_figure_type
            .iter()
            .map(|(k, a)| ("figure_type", k.as_str(), a)),
    );
    out.extend(
        report
            .by_qa_type
            .iter()
            .map(|(k, a)| ("qa_type", k.as_str(), a)),
    );
    out
}

/// Tab-separated summary: one row per group, columns in the order
/// R1-F1 R1-P R1-R RL-F1 RL-P RL-R BS-F1 BS-P BS-R EM. Absent metrics are `-`.
pub fn render_summary_tsv(report: &MetricReport) -> String {
    let mut out = format!("group\tkey\tn\t{}\n", COLUMNS.join("\t"));
    for (group, key, agg) in rows(report) {
        let _ = write!(out, "{group}\t{key}\t{}", agg.n);
        for c in cells(agg) {
            match c {
                Some(v) => {
                    let _ = write!(out, "\t{v:.6}");
                }
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

/// Aligned text version of [`render_summary_tsv`] with three decimals.
pub fn render_summary_text(report: &MetricReport) -> String {
    let all = rows(report);
    let key_w = all
        .iter()
        .map(|(g, k, _)| g.len() + k.len() + 1)
        .max()
        .unwrap_or(0);
    let mut out = format!("{:<key_w$}  {:>5}", "group", "n");
    for c in COLUMNS {
        let _ = write!(out, "  {c:>6}");
    }
    out.push('\n');
    for (group, key, agg) in all {
        let label = format!("{group}:{key}");
        let _ = write!(out, "{label:<key_w$}  {:>5}", agg.n);
        for c in cells(agg) {
            match c {
                Some(v) => {
                    let _ = write!(out, "  {v:>6.3}");
                }
                None => {
                    let _ = write!(out, "  {:>6}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_instances_jsonl(report: &MetricReport) -> String {
    let mut out = String::new();
    for i in &report.instances {
        out.push_str(&serde_json::to_string(i).expect("instance serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_instances_jsonl(text: &str) -> Result<Vec<InstanceScores>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Instances whose prediction does not exactly match gold, sorted by figure
/// type then id, for manual error categorization.
pub fn mismatches(instances: &[InstanceScores]) -> Vec<&InstanceScores> {
    let mut out: Vec<&InstanceScores> = instances
        .iter()
        .filter(|i| {
            !i.exact
                .unwrap_or_else(|| exact_match(&i.prediction, &i.gold))
        })
        .collect();
    out.sort_by(|a, b| {
        a.figure_type
            .cmp(&b.figure_type)
            .then(a.instance_id.cmp(&b.instance_id))
    });
    out
}

/// Error categories used when triaging mismatches by hand.
pub const ERROR_CATEGORIES: &[&str] = &[
    "visual_misinterpretation",
    "numerical_misalignment",
    "flawed_reasoning",
];

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Mismatch list as TSV with an empty `category` column to fill in.
pub fn render_mismatches_tsv(instances: &[InstanceScores]) -> String {
    let mut out = format!(
        "# category: one of {}\nfigure_type\tqa_type\tinstance_id\tgold\tprediction\tcategory\n",
        ERROR_CATEGORIES.join(", ")
    );
    for i in mismatches(instances) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t",
            tsv_field(&i.figure_type),
            i.qa_type,
            i.instance_id,
            tsv_field(&i.gold),
            tsv_field(&i.prediction)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AnswerSet, QaFlags};
    use crate::fixtures;
    use crate::metrics::OneHotEmbedder;

    const FLAGS: QaFlags = QaFlags {
        answer_set: AnswerSet::Infinite,
        binary: false,
        visual: true,
        unanswerable: false,
    };

    fn gold(id: &str, ft: &str, answer: &str) -> QARecord {
        let mut r = fixtures::record(id, ft, FLAGS);
        r.gold_answer = Some(answer.into());
        r
    }

    fn pred(id: &str, answer: &str) -> Prediction {
        Prediction {
            instance_id: id.into(),
            answer: answer.into(),
            backend_name: "m".into(),
            had_reasoning_tags: false,
            standardized_unanswerable: false,
        }
    }

    #[test]
    fn identical_predictions_score_one() {
        let g = vec![gold("b", "tree", "the cat"), gold("a", "pie_chart", "42")];
        let p = vec![pred("a", "42"), pred("b", "the cat")];
        let r = evaluate(&p, &g, &MetricOptions::default()).unwrap();
        assert_eq!(r.overall.rouge1, Some(Prf::ONE));
        assert_eq!(r.overall.rouge_l, Some(Prf::ONE));
        assert_eq!(r.overall.exact, Some(1.0));
        assert_eq!(r.overall.bertscore, None);
        assert_eq!(r.instances[0].instance_id, "a");
        assert_eq!(r.by_figure_type.len(), 2);
    }

    #[test]
    fn single_pair_equals_pairwise() {
        let g = vec![gold("a", "tree", "a b d")];
        let p = vec![pred("a", "a b c")];
        let e = OneHotEmbedder::new(8);
        let opts = MetricOptions {
            bertscore: true,
            embedder: Some(&e),
            ..MetricOptions::default()
        };
        let r = evaluate(&p, &g, &opts).unwrap();
        let (c, rf) = (tokenize("a b c"), tokenize("a b d"));
        assert_eq!(r.overall.rouge1, Some(rouge1(&c, &rf)));
        assert_eq!(r.overall.rouge_l, Some(rouge_l(&c, &rf)));
        let bs = crate::metrics::bertscore("a b c", "a b d", &OneHotEmbedder::new(8)).unwrap();
        assert_eq!(r.overall.bertscore, Some(bs.prf));
        assert_eq!(r.overall.exact, Some(0.0));
    }

    #[test]
    fn id_mismatch_lists_ids() {
        let g = vec![gold("a", "tree", "x")];
        let err = evaluate(
            &[pred("a", "x"), pred("z", "y")],
            &g,
            &MetricOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(&err, MetricsError::MissingGold(ids) if ids == &["z".to_string()]));
        let g2 = vec![gold("a", "tree", "x"), gold("b", "tree", "y")];
        let err = evaluate(&[pred("a", "x")], &g2, &MetricOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "gold records without prediction: b");
    }

    #[test]
    fn bertscore_without_embedder_is_error() {
        let g = vec![gold("a", "tree", "x")];
        let opts = MetricOptions {
            bertscore: true,
            ..MetricOptions::default()
        };
        assert!(matches!(
            evaluate(&[pred("a", "x")], &g, &opts),
            Err(MetricsError::NoEmbedder)
        ));
    }

    #[test]
    fn mismatch_list_sorted_by_type() {
        let g = vec![
            gold("1", "tree", "x"),
            gold("2", "bar_chart", "y"),
            gold("3", "bar_chart", "z"),
            gold("0", "tree", "ok"),
        ];
        let p = vec![
            pred("1", "no"),
            pred("2", "no"),
            pred("3", "no"),
            pred("0", "OK"),
        ];
        let r = evaluate(&p, &g, &MetricOptions::default()).unwrap();
        let ids: Vec<_> = mismatches(&r.instances)
            .iter()
            .map(|i| i.instance_id.as_str())
            .collect();
        assert_eq!(ids, ["2", "3", "1"]);
        let tsv = render_mismatches_tsv(&r.instances);
        assert_eq!(tsv.lines().count(), 5);
        let back = parse_instances_jsonl(&render_instances_jsonl(&r)).unwrap();
        assert_eq!(back, r.instances);
    }

    #[test]
    fn summary_columns_follow_table_layout() {
        let g = vec![gold("a", "tree", "x")];
        let r = evaluate(&[pred("a", "x")], &g, &MetricOptions::default()).unwrap();
        let tsv = render_summary_tsv(&r);
        let header = tsv.lines().next().unwrap();
        assert_eq!(
            header,
            "group\tkey\tn\tR1-F1\tR1-P\tR1-R\tRL-F1\tRL-P\tRL-R\tBS-F1\tBS-P\tBS-R\tEM"
        );
        assert!(tsv.contains("overall\tall\t1\t1.000000\t1.000000\t1.000000\t1.000000\t1.000000\t1.000000\t-\t-\t-\t1.000000"));
        assert!(render_summary_text(&r).contains("figure_type:tree"));
    }
}
