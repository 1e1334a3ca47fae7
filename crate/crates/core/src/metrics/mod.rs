//! ROUGE-1, ROUGE-L, BERTScore and exact-match scoring.

mod bertscore;
mod report;
mod rouge;
mod tokenize;

pub use bertscore::{
    bertscore, bertscore_pairs, greedy_match, BertScore, EmbedError, EmbeddingBackend,
    HttpEmbedder, OneHotEmbedder, TokenEmbeddings,
};
pub use report::{
    aggregate, evaluate, mismatches, parse_instances_jsonl, render_instances_jsonl,
    render_mismatches_tsv, render_summary_text, render_summary_tsv, Aggregate, InstanceScores,
    MetricOptions, MetricReport, MetricsError, ERROR_CATEGORIES,
};
pub use rouge::{lcs_len, rouge1, rouge_l, Prf};
pub use tokenize::{tokenize, TokenSeq};
