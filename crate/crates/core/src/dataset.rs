//! Question/answer records over scientific figures: loading, validation and
//! split statistics.
//!
//! The on-disk format is one JSON object per line with a fixed set of keys.
//! Gold answers are carried as raw strings; nothing is normalized at load time.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate instance_id: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("no records")]
    Empty,
}

impl DatasetError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        DatasetError::Malformed {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSet {
    Infinite,
    Finite,
}

impl AnswerSet {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerSet::Infinite => "infinite",
            AnswerSet::Finite => "finite",
        }
    }
}

/// The QA-pair type axes of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QaFlags {
    pub answer_set: AnswerSet,
    pub binary: bool,
    pub visual: bool,
    pub unanswerable: bool,
}

impl QaFlags {
    /// True for multiple-choice questions that carry lettered options.
    pub fn is_choice(&self) -> bool {
        self.answer_set == AnswerSet::Finite && !self.binary
    }

    /// Coarse category label used in breakdown tables.
    pub fn category(&self) -> &'static str {
        if self.unanswerable {
            return "unanswerable";
        }
        match (self.answer_set, self.binary, self.visual) {
            (AnswerSet::Infinite, _, true) => "infinite/visual",
            (AnswerSet::Infinite, _, false) => "infinite/non-visual",
            (AnswerSet::Finite, true, true) => "finite/binary/visual",
            (AnswerSet::Finite, true, false) => "finite/binary/non-visual",
            (AnswerSet::Finite, false, true) => "finite/non-binary/visual",
            (AnswerSet::Finite, false, false) => "finite/non-binary/non-visual",
        }
    }
}

impl fmt::Display for QaFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} binary={} visual={} unanswerable={}",
            self.answer_set.as_str(),
            self.binary,
            self.visual,
            self.unanswerable
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QARecord {
    pub instance_id: String,
    pub figure_path: PathBuf,
    pub caption: String,
    pub figure_type: String,
    pub is_compound: bool,
    /// Sub-figure designator, kept exactly as written in the dataset.
    pub fig_numb: Option<String>,
    pub qa_flags: QaFlags,
    pub question: String,
    pub answer_options: Vec<AnswerOption>,
    pub gold_answer: Option<String>,
}

impl QARecord {
    /// Checks the per-record invariants that do not depend on other records.
    pub fn validate(&self) -> Result<(), String> {
        if self.instance_id.is_empty() {
            return Err("empty instance_id".into());
        }
        if self.qa_flags.binary && !self.answer_options.is_empty() {
            return Err("binary question must not carry answer_options".into());
        }
        if self.qa_flags.is_choice() && self.answer_options.is_empty() {
            return Err("finite non-binary question requires answer_options".into());
        }
        if !self.qa_flags.is_choice() && !self.answer_options.is_empty() {
            return Err("answer_options are only allowed on finite non-binary questions".into());
        }
        for (i, opt) in self.answer_options.iter().enumerate() {
            let expected = char::from(b'A' + (i as u8 % 26));
            if i >= 26 || opt.letter.len() != 1 || !opt.letter.starts_with(expected) {
                return Err(format!(
                    "answer_options letter {:?} at position {} (expected {:?})",
                    opt.letter, i, expected
                ));
            }
        }
        if self.fig_numb.is_some() && !self.is_compound {
            return Err("fig_numb is only allowed on compound figures".into());
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("instance_id".into(), self.instance_id.clone().into());
        map.insert(
            "figure_path".into(),
            self.figure_path.to_string_lossy().into_owned().into(),
        );
        map.insert("caption".into(), self.caption.clone().into());
        map.insert("figure_type".into(), self.figure_type.clone().into());
        map.insert("is_compound".into(), self.is_compound.into());
        map.insert(
            "fig_numb".into(),
            self.fig_numb
                .clone()
                .map(Value::from)
                .unwrap_or(Value::Null),
        );
        map.insert(
            "answer_set".into(),
            self.qa_flags.answer_set.as_str().into(),
        );
        map.insert("binary".into(), self.qa_flags.binary.into());
        map.insert("visual".into(), self.qa_flags.visual.into());
        map.insert("unanswerable".into(), self.qa_flags.unanswerable.into());
        map.insert("question".into(), self.question.clone().into());
        map.insert(
            "answer_options".into(),
            serde_json::to_value(&self.answer_options).expect("options serialize"),
        );
        if let Some(gold) = &self.gold_answer {
            map.insert("gold_answer".into(), gold.clone().into());
        }
        Value::Object(map)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "instance_id",
    "figure_path",
    "caption",
    "figure_type",
    "is_compound",
    "fig_numb",
    "answer_set",
    "binary",
    "visual",
    "unanswerable",
    "question",
    "answer_options",
    "gold_answer",
];

struct LineFields<'a> {
    line: usize,
    map: &'a Map<String, Value>,
}

impl LineFields<'_> {
    fn get(&self, key: &str) -> Result<&Value, DatasetError> {
        self.map
            .get(key)
            .ok_or_else(|| DatasetError::at(self.line, format!("missing field {key}")))
    }

    fn string(&self, key: &str) -> Result<String, DatasetError> {
        match self.get(key)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.wrong_type(key, "a string")),
        }
    }

    fn boolean(&self, key: &str) -> Result<bool, DatasetError> {
        match self.get(key)? {
            Value::Bool(b) => Ok(*b),
            _ => Err(self.wrong_type(key, "a boolean")),
        }
    }

    fn optional_string(&self, key: &str) -> Result<Option<String>, DatasetError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.wrong_type(key, "a string or null")),
        }
    }

    fn wrong_type(&self, key: &str, expected: &str) -> DatasetError {
        DatasetError::at(self.line, format!("field {key} must be {expected}"))
    }
}

fn parse_line(line: usize, text: &str, keep_gold: bool) -> Result<QARecord, DatasetError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| DatasetError::at(line, format!("invalid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(DatasetError::at(line, "record must be a JSON object"));
    };
    if let Some(unknown) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(DatasetError::at(line, format!("unknown field {unknown}")));
    }
    let fields = LineFields { line, map: &map };

    let instance_id = fields.string("instance_id")?;
    let figure_path = PathBuf::from(fields.string("figure_path")?);
    let caption = fields.string("caption")?;
    let figure_type = fields.string("figure_type")?;
    let is_compound = fields.boolean("is_compound")?;
    let fig_numb = fields.optional_string("fig_numb")?;
    let answer_set = match fields.string("answer_set")?.as_str() {
        "infinite" => AnswerSet::Infinite,
        "finite" => AnswerSet::Finite,
        other => {
            return Err(DatasetError::at(
                line,
                format!("field answer_set must be \"infinite\" or \"finite\", got {other:?}"),
            ))
        }
    };
    let qa_flags = QaFlags {
        answer_set,
        binary: fields.boolean("binary")?,
        visual: fields.boolean("visual")?,
        unanswerable: fields.boolean("unanswerable")?,
    };
    let question = fields.string("question")?;
    let answer_options: Vec<AnswerOption> =
        serde_json::from_value(fields.get("answer_options")?.clone())
            .map_err(|_| fields.wrong_type("answer_options", "a list of {letter, text}"))?;
    let gold = fields.optional_string("gold_answer")?;

    let record = QARecord {
        instance_id,
        figure_path,
        caption,
        figure_type,
        is_compound,
        fig_numb,
        qa_flags,
        question,
        answer_options,
        gold_answer: if keep_gold { gold } else { None },
    };
    record
        .validate()
        .map_err(|message| DatasetError::at(line, message))?;
    Ok(record)
}

/// Parses records from line-delimited text. Blank lines are skipped; line
/// numbers in errors are 1-based positions in the input.
pub fn parse_split(text: &str, gold: bool) -> Result<Vec<QARecord>, DatasetError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(idx + 1, line, gold)?);
    }
    check_unique(&records)?;
    Ok(records)
}

pub fn load_split(path: &Path, gold: bool) -> Result<Vec<QARecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_split(&text, gold)
}

fn check_unique(records: &[QARecord]) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    let mut dupes = Vec::new();
    for r in records {
        if !seen.insert(r.instance_id.as_str()) && !dupes.contains(&r.instance_id) {
            dupes.push(r.instance_id.clone());
        }
    }
    if dupes.is_empty() {
        Ok(())
    } else {
        Err(DatasetError::DuplicateIds(dupes))
    }
}

pub fn write_split<W: Write>(mut out: W, records: &[QARecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_split(path: &Path, records: &[QARecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    write_split(&mut out, records)?;
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitStats {
    pub total: usize,
    pub by_figure_type: BTreeMap<String, usize>,
    pub by_qa_flags: BTreeMap<QaFlags, usize>,
}

impl SplitStats {
    pub fn fraction(&self, figure_type: &str) -> f64 {
        let count = self.by_figure_type.get(figure_type).copied().unwrap_or(0);
        count as f64 / self.total as f64
    }

    /// Counts folded onto the coarse QA categories of [`QaFlags::category`].
    pub fn by_category(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for (flags, n) in &self.by_qa_flags {
            *out.entry(flags.category()).or_insert(0) += n;
        }
        out
    }
}

pub fn compute_stats(records: &[QARecord]) -> Result<SplitStats, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut stats = SplitStats {
        total: records.len(),
        ..SplitStats::default()
    };
    for r in records {
        *stats
            .by_figure_type
            .entry(r.figure_type.clone())
            .or_insert(0) += 1;
        *stats.by_qa_flags.entry(r.qa_flags).or_insert(0) += 1;
    }
    Ok(stats)
}
