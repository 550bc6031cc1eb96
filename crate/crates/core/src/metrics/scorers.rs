use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::score::Score;
use super::text::{content_words, lcs_len, multiset_overlap, normalize_answer, words};
use crate::data::SyntheticVideoSpec;
use crate::error::{Error, Result};

/// Answers to a reworded question pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paraphrase {
    pub question_alt: String,
    /// Answer to the original question.
    pub prediction: String,
    /// Answer to the reworded question.
    pub prediction_alt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub video_id: String,
    pub question: String,
    pub answer: String,
    pub prediction: String,
    pub paraphrase: Option<Paraphrase>,
    pub keywords: BTreeSet<String>,
    pub details: BTreeSet<String>,
    /// Ordered event tokens of the gold answer.
    pub events: Vec<String>,
}

impl EvalItem {
    /// Derives keyword, detail and event sets from the gold answer. Details
    /// are the answer's attribute words when a video spec is known, else its
    /// content words.
    pub fn new(
        video_id: &str,
        question: &str,
        answer: &str,
        prediction: &str,
        paraphrase: Option<Paraphrase>,
        spec: Option<&SyntheticVideoSpec>,
    ) -> Self {
        let content = content_words(answer);
        let keywords: BTreeSet<String> = content.iter().cloned().collect();
        let details = match spec {
            Some(s) => {
                let attrs = [s.color.word(), s.shape.word(), s.motion.word()];
                let d: BTreeSet<String> = content.iter().filter(|w| attrs.contains(&w.as_str())).cloned().collect();
                if d.is_empty() {
                    keywords.clone()
                } else {
                    d
                }
            }
            None => keywords.clone(),
        };
        Self {
            video_id: video_id.to_string(),
            question: question.to_string(),
            answer: answer.to_string(),
            prediction: prediction.to_string(),
            paraphrase,
            keywords,
            details,
            events: content,
        }
    }
}

/// Content-word overlap F1 between two texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown<S> {
    pub f1: S,
    pub matched: Vec<String>,
    pub missing: Vec<String>,
}

/// `2·|A∩B| / (|A|+|B|)` over content-word multisets; 0 when either is empty.
pub fn overlap_f1<S: Score>(prediction: &str, reference: &str) -> S {
    similarity::<S>(prediction, reference).f1
}

pub fn similarity<S: Score>(prediction: &str, reference: &str) -> SimilarityBreakdown<S> {
    let p = content_words(prediction);
    let r = content_words(reference);
    let overlap = multiset_overlap(&p, &r);
    let f1 = if p.is_empty() || r.is_empty() {
        S::zero()
    } else {
        S::ratio(2 * overlap, p.len() + r.len())
    };
    let mut pool = p.clone();
    let mut matched = Vec::new();
    let mut missing = Vec::new();
    for w in r {
        if let Some(i) = pool.iter().position(|x| *x == w) {
            pool.swap_remove(i);
            matched.push(w);
        } else {
            missing.push(w);
        }
    }
    SimilarityBreakdown { f1, matched, missing }
}

/// A generative score on the 0–5 scale with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult<S> {
    pub score: S,
    /// Per-item values in input order; `None` for skipped items.
    pub per_item: Vec<Option<S>>,
    pub skipped: usize,
    /// Items scored with a degenerate definition (e.g. an empty detail set).
    pub flagged: usize,
}

fn ge<S: Score>(v: &S, num: usize, den: usize) -> bool {
    *v >= S::ratio(num, den)
}

/// Macro average: per-video mean, then mean over videos.
fn macro_mean<S: Score>(items: &[EvalItem], per_item: &[Option<S>]) -> S {
    let mut groups: BTreeMap<&str, Vec<S>> = BTreeMap::new();
    for (it, v) in items.iter().zip(per_item) {
        if let Some(v) = v {
            groups.entry(it.video_id.as_str()).or_default().push(v.clone());
        }
    }
    let means: Vec<S> = groups.values().map(|v| S::mean(v)).collect();
    S::mean(&means)
}

fn finish<S: Score>(items: &[EvalItem], per_item: Vec<Option<S>>, scale: S, flagged: usize) -> MetricResult<S> {
    let skipped = per_item.iter().filter(|v| v.is_none()).count();
    MetricResult {
        score: scale * macro_mean(items, &per_item),
        per_item,
        skipped,
        flagged,
    }
}

/// Fraction of expected words produced, counted with multiplicity.
pub fn ci_item<S: Score>(prediction: &str, answer: &str) -> Option<S> {
    let a = words(answer);
    if a.is_empty() {
        return None;
    }
    Some(S::ratio(multiset_overlap(&words(prediction), &a), a.len()))
}

/// Correctness of information: 5 × mean word recall.
pub fn ci_score<S: Score>(items: &[EvalItem]) -> MetricResult<S> {
    let per = items.iter().map(|it| ci_item(&it.prediction, &it.answer)).collect();
    finish(items, per, S::ratio(5, 1), 0)
}

fn set_recall<S: Score>(gold: &BTreeSet<String>, predicted: &BTreeSet<String>) -> Option<S> {
    if gold.is_empty() {
        return None;
    }
    Some(S::ratio(gold.intersection(predicted).count(), gold.len()))
}

/// `w_c·completeness + w_s·specificity`, plus whether a term was degenerate.
pub fn do_item<S: Score>(item: &EvalItem, w_c: &S, w_s: &S) -> (S, bool) {
    let pred: BTreeSet<String> = words(&item.prediction).into_iter().collect();
    let c = set_recall::<S>(&item.keywords, &pred);
    let s = set_recall::<S>(&item.details, &pred);
    let flagged = c.is_none() || s.is_none();
    let v = w_c.clone() * c.unwrap_or_else(S::zero) + w_s.clone() * s.unwrap_or_else(S::zero);
    (v, flagged)
}

/// Detail orientation with completeness and specificity weights summing to one.
pub fn do_score<S: Score>(items: &[EvalItem], w_c: f64, w_s: f64) -> Result<MetricResult<S>> {
    if w_c < 0.0 || w_s < 0.0 || (w_c + w_s - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights {w_c} and {w_s} must be non-negative and sum to 1")));
    }
    let (wc, ws) = (S::from_f64(w_c), S::from_f64(w_s));
    let mut flagged = 0;
    let per = items
        .iter()
        .map(|it| {
            let (v, f) = do_item(it, &wc, &ws);
            flagged += f as usize;
            Some(v)
        })
        .collect();
    Ok(finish(items, per, S::ratio(5, 1), flagged))
}

/// 5 at F1 ≥ 0.9, 4 at ≥ 0.7, 3 at ≥ 0.5, 2 at ≥ 0.3, 1 above 0, else 0.
pub fn cu_level<S: Score>(f1: &S) -> u8 {
    if ge(f1, 9, 10) {
        5
    } else if ge(f1, 7, 10) {
        4
    } else if ge(f1, 1, 2) {
        3
    } else if ge(f1, 3, 10) {
        2
    } else if *f1 > S::zero() {
        1
    } else {
        0
    }
}

/// Contextual understanding: rubric level of the content-word F1.
pub fn cu_score<S: Score>(items: &[EvalItem]) -> MetricResult<S> {
    let per = items
        .iter()
        .map(|it| {
            if words(&it.answer).is_empty() {
                return None;
            }
            Some(S::ratio(cu_level(&overlap_f1::<S>(&it.prediction, &it.answer)) as usize, 1))
        })
        .collect();
    finish(items, per, S::one(), 0)
}

/// 5 when every event appears in order, 4 at ≥ 3/4, 3 at ≥ 1/2, 2 at ≥ 1/4, 1 above 0.
pub fn tu_level<S: Score>(o: &S) -> u8 {
    if *o >= S::one() {
        5
    } else if ge(o, 3, 4) {
        4
    } else if ge(o, 1, 2) {
        3
    } else if ge(o, 1, 4) {
        2
    } else if *o > S::zero() {
        1
    } else {
        0
    }
}

/// Share of gold events the prediction mentions in the gold order.
pub fn event_order<S: Score>(events: &[String], prediction: &str) -> Option<S> {
    if events.is_empty() {
        return None;
    }
    let mentioned: Vec<String> = words(prediction).into_iter().filter(|w| events.contains(w)).collect();
    Some(S::ratio(lcs_len(events, &mentioned), events.len()))
}

/// Temporal understanding. A single-event gold answer can only score 0 or 5.
pub fn tu_score<S: Score>(items: &[EvalItem]) -> MetricResult<S> {
    let mut flagged = 0;
    let per = items
        .iter()
        .map(|it| {
            let o = event_order::<S>(&it.events, &it.prediction)?;
            flagged += (it.events.len() == 1) as usize;
            Some(S::ratio(tu_level(&o) as usize, 1))
        })
        .collect();
    finish(items, per, S::one(), flagged)
}

pub fn consistency_level<S: Score>(pair: &S, gold: &S) -> u8 {
    if ge(pair, 9, 10) && ge(gold, 9, 10) {
        5
    } else if ge(pair, 7, 10) && ge(gold, 1, 2) {
        4
    } else if ge(pair, 1, 2) {
        3
    } else if ge(pair, 3, 10) {
        2
    } else if *gold > S::zero() {
        1
    } else {
        0
    }
}

/// Consistency between answers to a question and its rewording.
pub fn consistency_item<S: Score>(answer: &str, p: &Paraphrase) -> u8 {
    let pair = overlap_f1::<S>(&p.prediction, &p.prediction_alt);
    let a = overlap_f1::<S>(&p.prediction, answer);
    let b = overlap_f1::<S>(&p.prediction_alt, answer);
    let gold = if a < b { a } else { b };
    consistency_level(&pair, &gold)
}

/// Items without a paraphrase pair are skipped.
pub fn c_score<S: Score>(items: &[EvalItem]) -> MetricResult<S> {
    let per = items
        .iter()
        .map(|it| {
            it.paraphrase
                .as_ref()
                .map(|p| S::ratio(consistency_item::<S>(&it.answer, p) as usize, 1))
        })
        .collect();
    finish(items, per, S::one(), 0)
}

/// Arithmetic mean of the five generative scores.
pub fn mean_score<S: Score>(ci: S, do_: S, cu: S, tu: S, c: S) -> S {
    (ci + do_ + cu + tu + c) / S::ratio(5, 1)
}

pub fn answer_correct(prediction: &str, answer: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(answer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy<S> {
    pub accuracy: S,
    /// Unnormalized count of correct answers over all videos.
    pub correct_total: usize,
    pub videos: usize,
    /// Videos with no questions, left out of the mean.
    pub excluded: usize,
}

/// Mean over videos of each video's fraction of correct answers.
pub fn zsqa_accuracy<S: Score>(videos: &[Vec<bool>]) -> Accuracy<S> {
    let mut fractions = Vec::new();
    let mut correct_total = 0;
    let mut excluded = 0;
    for answers in videos {
        if answers.is_empty() {
            excluded += 1;
            continue;
        }
        let c = answers.iter().filter(|&&b| b).count();
        correct_total += c;
        fractions.push(S::ratio(c, answers.len()));
    }
    Accuracy {
        accuracy: S::mean(&fractions),
        correct_total,
        videos: fractions.len(),
        excluded,
    }
}
