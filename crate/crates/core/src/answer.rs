//! Turning raw model text into submitted answers.

use serde::{Deserialize, Serialize};

use crate::dataset::QARecord;

/// Canonical answer for questions the model judged unanswerable.
pub const UNANSWERABLE: &str =
    "It is not possible to answer this question based only on the provided data.";

const END_TAG: &str = "|end|";
const TAGS: &[&str] = &["<answer>", "</answer>", "<reasoning>", "</reasoning>"];

/// Lowercased phrases that mark an answer as a refusal for lack of data.
const UNANSWERABLE_TRIGGERS: &[&str] = &[
    "not possible to answer",
    "cannot be determined",
    "insufficient information",
    "cannot answer",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub answer: String,
    #[serde(skip)]
    pub backend_name: String,
    #[serde(skip)]
    pub had_reasoning_tags: bool,
    #[serde(skip)]
    pub standardized_unanswerable: bool,
}

fn span<'a>(text: &'a str, open: &str, close: &str) -> Option<(usize, &'a str, usize)> {
    let start = text.find(open)?;
    let inner_start = start + open.len();
    let inner_len = text[inner_start..].find(close)?;
    let end = inner_start + inner_len + close.len();
    Some((start, &text[inner_start..inner_start + inner_len], end))
}

/// Returns the trimmed contents of the first closed `<answer>` span, or the
/// whole text with closed `<reasoning>` spans removed. The flag reports
/// whether any structured span was found. Never fails.
pub fn extract_answer(raw: &str) -> (String, bool) {
    if let Some((_, inner, _)) = span(raw, "<answer>", "</answer>") {
        return (inner.trim().to_string(), true);
    }
    let mut text = raw.to_string();
    let mut tagged = false;
    while let Some((start, _, end)) = span(&text, "<reasoning>", "</reasoning>") {
        text.replace_range(start..end, "");
        tagged = true;
    }
    (text.trim().to_string(), tagged)
}

/// Removes `|end|` markers and stray answer/reasoning tags until none remain.
/// Repeats because a removal can splice a new marker together.
fn strip_markers(text: &str) -> String {
    let mut out = text.to_string();
    loop {
        let before = out.len();
        out = out.replace(END_TAG, "");
        for tag in TAGS {
            out = out.replace(tag, "");
        }
        if out.len() == before {
            return out;
        }
    }
}

pub fn is_unanswerable(answer: &str) -> bool {
    let lower = answer.to_lowercase();
    UNANSWERABLE_TRIGGERS.iter().any(|t| lower.contains(t))
}

/// Normalizes a choice answer like `"b, c"` to `"B,C"`. Returns `None` when
/// the answer is not purely a list of the record's option letters. Letters
/// keep their first-occurrence order; repeats are dropped.
fn normalize_letters(answer: &str, record: &QARecord) -> Option<String> {
    let mut letters: Vec<char> = Vec::new();
    for piece in answer
        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|p| !p.is_empty())
    {
        let piece = piece
            .trim_matches(|c| c == '(' || c == ')')
            .trim_end_matches(['.', ')']);
        let mut chars = piece.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return None;
        };
        let c = c.to_ascii_uppercase();
        if !record
            .answer_options
            .iter()
            .any(|o| o.letter.starts_with(c))
        {
            return None;
        }
        if !letters.contains(&c) {
            letters.push(c);
        }
    }
    if letters.is_empty() {
        return None;
    }
    Some(
        letters
            .iter()
            .map(char::to_string)
            .collect::<Vec<_>>()
            .join(","),
    )
}

/// Applies post-processing to an extracted answer: marker removal, the
/// unanswerable standardization, and letter normalization for
/// multiple-choice records. Idempotent.
pub fn postprocess(answer: &str, record: &QARecord, backend_name: &str) -> Prediction {
    let cleaned = strip_markers(answer).trim().to_string();
    let (answer, standardized) = if is_unanswerable(&cleaned) {
        (UNANSWERABLE.to_string(), true)
    } else if record.qa_flags.is_choice() {
        (
            normalize_letters(&cleaned, record).unwrap_or(cleaned),
            false,
        )
    } else {
        (cleaned, false)
    };
    Prediction {
        instance_id: record.instance_id.clone(),
        answer,
        backend_name: backend_name.to_string(),
        had_reasoning_tags: false,
        standardized_unanswerable: standardized,
    }
}

/// Extraction followed by post-processing.
pub fn finalize(raw: &str, record: &QARecord, backend_name: &str) -> Prediction {
    let (answer, tagged) = extract_answer(raw);
    Prediction {
        had_reasoning_tags: tagged,
        ..postprocess(&answer, record, backend_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AnswerSet, QaFlags};
    use crate::fixtures;
    use proptest::prelude::*;

    fn open() -> QARecord {
        fixtures::record(
            "o",
            "line_chart",
            QaFlags {
                answer_set: AnswerSet::Infinite,
                binary: false,
                visual: false,
                unanswerable: false,
            },
        )
    }

    fn choice() -> QARecord {
        fixtures::record(
            "c",
            "bar_chart",
            QaFlags {
                answer_set: AnswerSet::Finite,
                binary: false,
                visual: true,
                unanswerable: false,
            },
        )
    }

    #[test]
    fn extraction_cases() {
        assert_eq!(
            extract_answer("<reasoning>r</reasoning><answer>42</answer>"),
            ("42".into(), true)
        );
        assert_eq!(extract_answer("just text"), ("just text".into(), false));
        assert_eq!(
            extract_answer("<answer>A,B</answer> trailing"),
            ("A,B".into(), true)
        );
        assert_eq!(
            extract_answer("<answer> x </answer><answer>y</answer>"),
            ("x".into(), true)
        );
    }

    #[test]
    fn unclosed_answer_falls_back() {
        assert_eq!(
            extract_answer("  <answer>42 "),
            ("<answer>42".into(), false)
        );
        assert_eq!(postprocess("<answer>42", &open(), "m").answer, "42");
    }

    #[test]
    fn reasoning_spans_dropped_without_answer_tag() {
        assert_eq!(
            extract_answer("<reasoning>long\nthought</reasoning>\n 7 "),
            ("7".into(), true)
        );
    }

    #[test]
    fn end_tags_removed() {
        assert_eq!(postprocess("42|end|", &open(), "m").answer, "42");
        assert_eq!(postprocess("|end|4|end|2|end|", &open(), "m").answer, "42");
        // A removal that splices a new marker is handled.
        assert_eq!(postprocess("|en|end|d|x", &open(), "m").answer, "x");
    }

    #[test]
    fn unanswerable_standardized() {
        let p = postprocess("cannot be determined from the figure", &open(), "m");
        assert_eq!(p.answer, UNANSWERABLE);
        assert!(p.standardized_unanswerable);
        assert_eq!(
            UNANSWERABLE.as_bytes(),
            b"It is not possible to answer this question based only on the provided data."
        );
        assert_eq!(
            postprocess("Insufficient Information.", &choice(), "m").answer,
            UNANSWERABLE
        );
        assert!(!postprocess("42", &open(), "m").standardized_unanswerable);
    }

    #[test]
    fn letters_normalized() {
        assert_eq!(postprocess("b, c", &choice(), "m").answer, "B,C");
        assert_eq!(postprocess("C and A", &choice(), "m").answer, "C and A");
        assert_eq!(postprocess("(d) a", &choice(), "m").answer, "D,A");
        assert_eq!(postprocess("c,a,c", &choice(), "m").answer, "C,A");
        // Letters outside the options are left alone.
        assert_eq!(postprocess("e", &choice(), "m").answer, "e");
        // Open questions keep their text.
        assert_eq!(postprocess("b, c", &open(), "m").answer, "b, c");
    }

    #[test]
    fn finalize_sets_flags() {
        let p = finalize(
            "<reasoning>x</reasoning><answer>b|end|</answer>",
            &choice(),
            "m",
        );
        assert_eq!(p.answer, "B");
        assert!(p.had_reasoning_tags);
        assert_eq!(p.backend_name, "m");
        assert_eq!(p.instance_id, "c");
    }

    proptest! {
        #[test]
        fn postprocess_idempotent(s in "(\\|end\\||<answer>|</answer>|[abcdABCD ,;()|.]|cannot answer|x|\\n){0,24}") {
            for rec in [open(), choice()] {
                let once = postprocess(&s, &rec, "m").answer;
                let twice = postprocess(&once, &rec, "m").answer;
                prop_assert_eq!(&once, &twice);
                prop_assert!(!once.contains(END_TAG));
                prop_assert!(TAGS.iter().all(|t| !once.contains(t)));
            }
        }

        #[test]
        fn letter_order_follows_first_occurrence(letters in proptest::collection::vec(0u8..4, 1..8)) {
            let raw: Vec<String> = letters.iter().map(|i| char::from(b'a' + i).to_string()).collect();
            let out = postprocess(&raw.join(", "), &choice(), "m").answer;
            let mut expected: Vec<String> = Vec::new();
            for l in &raw {
                let up = l.to_uppercase();
                if !expected.contains(&up) {
                    expected.push(up);
                }
            }
            prop_assert_eq!(out, expected.join(","));
        }
    }
}
