use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::score::round_half_up;
use super::scorers::{
    answer_correct, c_score, ci_score, cu_score, do_score, mean_score, tu_score, zsqa_accuracy, Accuracy, EvalItem,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_c: f64,
    pub w_s: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { w_c: 0.5, w_s: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBreakdown {
    pub video_id: String,
    pub question: String,
    pub answer: String,
    pub prediction: String,
    pub ci: Option<f64>,
    #[serde(rename = "do")]
    pub do_: Option<f64>,
    pub cu: Option<f64>,
    pub tu: Option<f64>,
    pub c: Option<f64>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub ci: usize,
    pub cu: usize,
    pub tu: usize,
    pub c: usize,
    pub do_flagged: usize,
    pub tu_single_event: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ci: f64,
    #[serde(rename = "do")]
    pub do_: f64,
    pub cu: f64,
    pub tu: f64,
    pub c: f64,
    pub mean: f64,
    /// Per-dataset question-answering accuracy in `[0, 1]`.
    pub accuracy: BTreeMap<String, f64>,
    pub accuracy_detail: BTreeMap<String, Accuracy<f64>>,
    pub weights: Weights,
    pub skipped: SkipCounts,
    pub items: Vec<ItemBreakdown>,
}

/// `qa` maps a dataset name to per-video lists of answer correctness.
pub fn build_report(items: &[EvalItem], qa: &BTreeMap<String, Vec<Vec<bool>>>, weights: Weights) -> Result<EvalReport> {
    let ci = ci_score::<f64>(items);
    let do_ = do_score::<f64>(items, weights.w_c, weights.w_s)?;
    let cu = cu_score::<f64>(items);
    let tu = tu_score::<f64>(items);
    let c = c_score::<f64>(items);
    let mean = mean_score(ci.score, do_.score, cu.score, tu.score, c.score);
    let accuracy_detail: BTreeMap<String, Accuracy<f64>> =
        qa.iter().map(|(k, v)| (k.clone(), zsqa_accuracy::<f64>(v))).collect();
    let breakdown = items
        .iter()
        .enumerate()
        .map(|(i, it)| ItemBreakdown {
            video_id: it.video_id.clone(),
            question: it.question.clone(),
            answer: it.answer.clone(),
            prediction: it.prediction.clone(),
            ci: ci.per_item[i],
            do_: do_.per_item[i],
            cu: cu.per_item[i],
            tu: tu.per_item[i],
            c: c.per_item[i],
            correct: (!it.question.is_empty()).then(|| answer_correct(&it.prediction, &it.answer)),
        })
        .collect();
    Ok(EvalReport {
        ci: ci.score,
        do_: do_.score,
        cu: cu.score,
        tu: tu.score,
        c: c.score,
        mean,
        accuracy: accuracy_detail.iter().map(|(k, a)| (k.clone(), a.accuracy)).collect(),
        accuracy_detail,
        weights,
        skipped: SkipCounts {
            ci: ci.skipped,
            cu: cu.skipped,
            tu: tu.skipped,
            c: c.skipped,
            do_flagged: do_.flagged,
            tu_single_event: tu.flagged,
        },
        items: breakdown,
    })
}

impl EvalReport {
    /// Generative scores (CI, DO, CU, TU, C, Mean) and accuracy tables, two decimals.
    pub fn to_markdown(&self, model: &str) -> String {
        let r = |v: f64| format!("{:.2}", round_half_up(v, 2));
        let mut s = String::new();
        s.push_str("| Model | CI | DO | CU | TU | C | Mean |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        let _ = writeln!(
            s,
            "| {model} | {} | {} | {} | {} | {} | {} |",
            r(self.ci),
            r(self.do_),
            r(self.cu),
            r(self.tu),
            r(self.c),
            r(self.mean)
        );
        if !self.accuracy.is_empty() {
            s.push('\n');
            s.push_str("| Model |");
            for k in self.accuracy.keys() {
                let _ = write!(s, " {k} accuracy |");
            }
            s.push_str("\n|---|");
            s.push_str(&"---|".repeat(self.accuracy.len()));
            let _ = write!(s, "\n| {model} |");
            for v in self.accuracy.values() {
                let _ = write!(s, " {} |", r(100.0 * v));
            }
            s.push('\n');
        }
        s
    }
}
