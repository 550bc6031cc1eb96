//! Deterministic lexical scores for generated captions and answers.
//!
//! Five generative scores on a 0–5 scale (correctness, detail,
//! understanding, temporal order, consistency), their mean, and
//! question-answering accuracy. Every scorer is generic over [`Score`] so
//! the same code yields exact rationals in tests and `f64` in reports.

mod harness;
mod report;
mod score;
mod scorers;
mod text;

pub use harness::{
    evaluate, gold_predictions, predict, score_predictions, EvalSettings, PredictionRecord, QA_DATASET,
};
pub use report::{build_report, EvalReport, ItemBreakdown, SkipCounts, Weights};
pub use score::{round_half_up, Score};
pub use scorers::{
    answer_correct, c_score, ci_item, ci_score, consistency_item, consistency_level, cu_level, cu_score, do_item,
    do_score, event_order, mean_score, overlap_f1, similarity, tu_level, tu_score, zsqa_accuracy, Accuracy,
    EvalItem, MetricResult, Paraphrase, SimilarityBreakdown,
};
pub use text::{content_words, lcs_len, multiset_overlap, normalize_answer, words, STOP_WORDS};
