//! Input generators shared by the criterion benches.

use figqa_core::dataset::{AnswerSet, QARecord, QaFlags};
use figqa_core::fixtures;

const WORDS: &[&str] = &[
    "the", "line", "peaks", "at", "forty", "two", "in", "2019", "bar", "value", "higher", "than",
    "blue", "red", "series", "axis", "shows", "growth", "of", "percent",
];

/// Deterministic pseudo-random sentence of `len` words.
pub fn sentence(seed: u64, len: usize) -> String {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            WORDS[(state >> 33) as usize % WORDS.len()]
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Candidate/reference pairs of the given word length.
pub fn pairs(count: usize, len: usize) -> Vec<(String, String)> {
    (0..count as u64)
        .map(|i| (sentence(2 * i, len), sentence(2 * i + 1, len)))
        .collect()
}

/// A compound multiple-choice record, the longest single-step prompt shape.
pub fn choice_record() -> QARecord {
    let mut r = fixtures::record(
        "bench-1",
        "line_chart",
        QaFlags {
            answer_set: AnswerSet::Finite,
            binary: false,
            visual: true,
            unanswerable: false,
        },
    );
    r.is_compound = true;
    r.fig_numb = Some("2".into());
    r
}
