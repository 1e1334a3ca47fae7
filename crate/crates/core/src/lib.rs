//! Chart and figure question answering over remote vision-language models:
//! dataset handling, prompt composition, OpenAI-compatible inference with a
//! replayable cache, chain-of-thought orchestration, answer post-processing,
//! figure-type ensembling, and ROUGE/BERTScore/exact-match evaluation.

pub mod answer;
pub mod backend;
pub mod dataset;
pub mod ensemble;
pub mod fixtures;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod prompt;

pub use answer::{extract_answer, finalize, postprocess, Prediction, UNANSWERABLE};
pub use backend::{BackendClient, BackendConfig, ModelResponse, Registry, ResponseCache, Turn};
pub use dataset::{compute_stats, load_split, AnswerSet, QARecord, QaFlags, SplitStats};
pub use ensemble::{ExactMatchCell, PredictionSet, RoutingTable};
pub use metrics::{MetricReport, Prf, TokenSeq};
pub use prompt::{PromptBundle, PromptMode};
