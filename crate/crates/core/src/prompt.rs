//! Prompt templates and their composition for the four prompting modes.
//!
//! Templates are stored with bracketed placeholders (`[caption]`,
//! `[question]`, ...) and filled in a single left-to-right pass, so text
//! interpolated from a record is never itself re-scanned for placeholders.
//! Blocks are joined with one blank line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::QARecord;

pub const BASELINE_1: &str = "You are a helpful assistant. Give the concise answer for the context given below. The caption of the figure is mentioned as, [caption]. The question for the figure is, [question]";

pub const BASELINE_2: &str = "Answer the question with only the raw numerical value or single word/phrase, omitting all units, context words, and explanatory text. The caption of the figure is mentioned as, [caption]. The question for the figure is, [question]";

pub const BASE: &str = "Answer the question with only the raw numerical value or single word/phrase, omitting all units, context words, and explanatory text. The caption of the figure is mentioned as, [caption].";

pub const COMPOUND: &str = "This is a compound figure containing multiple subfigures. Navigate to [fig_numb] graph in the compound figure to answer the question.";

pub const QUESTION: &str = "Question: [question]";

pub const BINARY: &str = "This is a binary question. Answer with \u{2018}Yes\u{2019} or \u{2018}No\u{2019} based on [visual/textual] evidence. Respond affirmatively only if supported.";

pub const CHOICE: &str = "Return only the corresponding letter(s) of the correct answer(s). Only output the letter(s) corresponding to the correct choice.\n[answer_choices]";

pub const COT_STEP1: &str = "STEP 1: INITIAL ANALYSIS

Given the figure, caption, and question, analyze and answer step by step.
Regularly perform self-questioning, self-verification, self-correction to check your ongoing reasoning, using connectives such as \"Wait a moment\", \"Wait, does it seem right?\" etc.

Caption: [caption]

Question: [question]

Analyse the key visual elements (lines, shapes, colors) that address the question and analyze the relationships between elements. Then, extract the specific numerical/positional information from the figure and caption to answer the question.";

pub const COT_STEP2: &str = "STEP 2: COT INFERENCE

Answer the question with only the raw numerical value or single word/phrase, omitting all units, context words, and explanatory text. Approximations in the scale are allowed.";

pub const COT_CHOICE: &str =
    "Based on the reasoning above, match it to one or more of the provided answer options:
[answer_choices]

Return only the corresponding letter(s) of the correct answer(s).
Do not explain your choice, do not rephrase the answer, and do not repeat the option text.
Only output the letter(s) corresponding to the correct choice.
If multiple letters are correct, separate them by commas without spaces (for example: B,C).
If all options are correct, return A,B,C,D.
Do not add anything else.";

/// Focus blocks keyed by figure type. The last entry is the fallback.
const FIGURE_FOCUS: &[(&str, &str, &[&str])] = &[
    (
        "line_chart",
        "line chart",
        &[
            "Colors of different lines and their meanings",
            "X and Y axis labels and their units",
            "Scale and range of values",
            "Trends and patterns in the lines",
        ],
    ),
    (
        "bar_chart",
        "bar chart",
        &[
            "Colors of different bars and their meanings",
            "X and Y axis labels and their units",
            "Scale and range of values",
            "Height and position of bars",
        ],
    ),
    (
        "box_plot",
        "box plot",
        &[
            "Median line position",
            "Box boundaries (Q1 and Q3)",
            "Whisker extent",
            "Outliers if present",
        ],
    ),
    (
        "confusion_matrix",
        "confusion matrix",
        &[
            "Row and column labels",
            "Numerical values in each cell",
            "Color intensity if present",
            "Overall distribution of values",
        ],
    ),
    (
        "pie_chart",
        "pie chart",
        &[
            "Segments and their labels",
            "Percentage or proportion values",
            "Colors of different segments",
            "Size of each segment relative to others",
        ],
    ),
];

const OTHERS_FOCUS: &[&str] = &[
    "Colors and the labels present in the figure",
    "Any other relevant information present in the figure",
];

const PLACEHOLDERS: &[&str] = &[
    "[caption]",
    "[question]",
    "[fig_numb]",
    "[answer_choices]",
    "[visual/textual]",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0}: finite non-binary question has no answer options")]
    MissingOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Baseline1,
    Baseline2,
    Single,
    Cot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::Baseline1,
        PromptMode::Baseline2,
        PromptMode::Single,
        PromptMode::Cot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Baseline1 => "baseline1",
            PromptMode::Baseline2 => "baseline2",
            PromptMode::Single => "single",
            PromptMode::Cot => "cot",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline1" | "baseline-1" => Ok(PromptMode::Baseline1),
            "baseline2" | "baseline-2" => Ok(PromptMode::Baseline2),
            "single" => Ok(PromptMode::Single),
            "cot" => Ok(PromptMode::Cot),
            other => Err(format!(
                "unknown mode {other:?} (expected baseline1, baseline2, single or cot)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub mode: PromptMode,
    /// Present only for [`PromptMode::Cot`].
    pub step1_text: Option<String>,
    pub step2_text: String,
    pub image_ref: PathBuf,
}

/// Replaces each known placeholder in `template` with its value in one pass.
/// Unknown bracketed text is copied through unchanged.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('[') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        match values.iter().find(|(key, _)| tail.starts_with(key)) {
            Some((key, value)) => {
                out.push_str(value);
                rest = &tail[key.len()..];
            }
            None => {
                out.push('[');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn join_blocks(blocks: &[String]) -> String {
    blocks.join("\n\n")
}

fn primary_figure_type(figure_type: &str) -> &str {
    figure_type.split(',').next().unwrap_or("").trim()
}

/// Focus block for a figure type. Compound labels use their first listed
/// type; labels without a dedicated block get the generic one.
pub fn figure_type_block(figure_type: &str) -> String {
    let primary = primary_figure_type(figure_type);
    let (subject, bullets) = FIGURE_FOCUS
        .iter()
        .find(|(key, _, _)| *key == primary)
        .map(|(_, subject, bullets)| (*subject, *bullets))
        .unwrap_or(("figure", OTHERS_FOCUS));
    let mut block = format!("Focus on the following aspects of the {subject}:");
    for bullet in bullets {
        block.push_str("\n- ");
        block.push_str(bullet);
    }
    block
}

fn answer_choices(record: &QARecord) -> String {
    record
        .answer_options
        .iter()
        .map(|o| format!("{}. {}", o.letter, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn compound_block(record: &QARecord) -> Option<String> {
    record.is_compound.then(|| {
        fill(
            COMPOUND,
            &[("[fig_numb]", record.fig_numb.as_deref().unwrap_or(""))],
        )
    })
}

fn binary_block(record: &QARecord) -> Option<String> {
    record.qa_flags.binary.then(|| {
        let evidence = if record.qa_flags.visual {
            "visual"
        } else {
            "textual"
        };
        fill(BINARY, &[("[visual/textual]", evidence)])
    })
}

fn choice_block(record: &QARecord, template: &str) -> Result<Option<String>, PromptError> {
    if !record.qa_flags.is_choice() {
        return Ok(None);
    }
    if record.answer_options.is_empty() {
        return Err(PromptError::MissingOptions(record.instance_id.clone()));
    }
    Ok(Some(fill(
        template,
        &[("[answer_choices]", &answer_choices(record))],
    )))
}

pub fn render_baseline(record: &QARecord, variant: u8) -> PromptBundle {
    let (template, mode) = match variant {
        1 => (BASELINE_1, PromptMode::Baseline1),
        _ => (BASELINE_2, PromptMode::Baseline2),
    };
    PromptBundle {
        mode,
        step1_text: None,
        step2_text: fill(
            template,
            &[
                ("[caption]", &record.caption),
                ("[question]", &record.question),
            ],
        ),
        image_ref: record.figure_path.clone(),
    }
}

/// Base, compound, figure type, question, binary, choice; absent blocks are
/// skipped.
pub fn render_single(record: &QARecord) -> Result<PromptBundle, PromptError> {
    let choice = choice_block(record, CHOICE)?;
    let blocks: Vec<String> = [
        Some(fill(BASE, &[("[caption]", &record.caption)])),
        compound_block(record),
        Some(figure_type_block(&record.figure_type)),
        Some(fill(QUESTION, &[("[question]", &record.question)])),
        binary_block(record),
        choice,
    ]
    .into_iter()
    .flatten()
    .collect();
    Ok(PromptBundle {
        mode: PromptMode::Single,
        step1_text: None,
        step2_text: join_blocks(&blocks),
        image_ref: record.figure_path.clone(),
    })
}

/// Step 1 is analysis plus the compound block; step 2 is the inference
/// instruction with figure type, binary and the extended choice block.
pub fn render_cot(record: &QARecord) -> Result<PromptBundle, PromptError> {
    let choice = choice_block(record, COT_CHOICE)?;
    let step1: Vec<String> = [
        Some(fill(
            COT_STEP1,
            &[
                ("[caption]", &record.caption),
                ("[question]", &record.question),
            ],
        )),
        compound_block(record),
    ]
    .into_iter()
    .flatten()
    .collect();
    let step2: Vec<String> = [
        Some(COT_STEP2.to_string()),
        Some(figure_type_block(&record.figure_type)),
        binary_block(record),
        choice,
    ]
    .into_iter()
    .flatten()
    .collect();
    Ok(PromptBundle {
        mode: PromptMode::Cot,
        step1_text: Some(join_blocks(&step1)),
        step2_text: join_blocks(&step2),
        image_ref: record.figure_path.clone(),
    })
}

pub fn render(record: &QARecord, mode: PromptMode) -> Result<PromptBundle, PromptError> {
    match mode {
        PromptMode::Baseline1 => Ok(render_baseline(record, 1)),
        PromptMode::Baseline2 => Ok(render_baseline(record, 2)),
        PromptMode::Single => render_single(record),
        PromptMode::Cot => render_cot(record),
    }
}

/// Returns the first unresolved placeholder marker in `text`, if any.
pub fn unresolved_placeholder(text: &str) -> Option<&'static str> {
    PLACEHOLDERS.iter().copied().find(|p| text.contains(p))
}

fn focus_templates() -> String {
    let mut blocks: Vec<String> = FIGURE_FOCUS
        .iter()
        .map(|(key, _, _)| format!("[{key}]\n{}", figure_type_block(key)))
        .collect();
    blocks.push(format!("[others]\n{}", figure_type_block("other")));
    join_blocks(&blocks)
}

/// Every template in its raw form, one titled section per prompt, for
/// snapshot auditing.
pub fn dump_templates() -> String {
    let single = join_blocks(&[
        BASE.to_string(),
        COMPOUND.to_string(),
        focus_templates(),
        QUESTION.to_string(),
        BINARY.to_string(),
        CHOICE.to_string(),
    ]);
    let step1 = join_blocks(&[COT_STEP1.to_string(), COMPOUND.to_string()]);
    let step2 = join_blocks(&[
        COT_STEP2.to_string(),
        focus_templates(),
        BINARY.to_string(),
        COT_CHOICE.to_string(),
    ]);
    dump_sections(&[
        ("baseline1", BASELINE_1),
        ("baseline2", BASELINE_2),
        ("single", &single),
        ("cot-step1", &step1),
        ("cot-step2", &step2),
    ])
}

/// Rendered prompts of one record under every mode.
pub fn dump_record(record: &QARecord) -> Result<String, PromptError> {
    let b1 = render_baseline(record, 1).step2_text;
    let b2 = render_baseline(record, 2).step2_text;
    let single = render_single(record)?.step2_text;
    let cot = render_cot(record)?;
    let step1 = cot.step1_text.unwrap_or_default();
    Ok(dump_sections(&[
        ("baseline1", &b1),
        ("baseline2", &b2),
        ("single", &single),
        ("cot-step1", &step1),
        ("cot-step2", &cot.step2_text),
    ]))
}

fn dump_sections(sections: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (title, body) in sections {
        out.push_str("===== ");
        out.push_str(title);
        out.push_str(" =====\n");
        out.push_str(body);
        out.push_str("\n\n");
    }
    out
}

/// Splits the output of [`dump_templates`] or [`dump_record`] back into
/// (title, body) sections.
pub fn split_dump(dump: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in dump.split_inclusive('\n') {
        let trimmed = line.trim_end_matches('\n');
        if let Some(title) = trimmed
            .strip_prefix("===== ")
            .and_then(|t| t.strip_suffix(" ====="))
        {
            out.push((title.to_string(), String::new()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
        }
    }
    for (_, body) in &mut out {
        let trimmed = body.trim_end_matches('\n').len();
        body.truncate(trimmed);
    }
    out
}
