use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{build_report, EvalReport, Weights};
use super::scorers::{answer_correct, EvalItem, Paraphrase};
use crate::data::{sample_clip, VideoRecord};
use crate::error::{Error, Result};
use crate::language::generate_from_features;
use crate::model::ModelBundle;
use crate::scalar::Scalar;

/// Name under which synthetic question-answering accuracy is reported.
pub const QA_DATASET: &str = "synthetic-qa";

/// One generated answer. Captions have an empty question and no reworded answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub prediction: String,
    #[serde(default)]
    pub prediction_alt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Clips whose features are averaged per video.
    pub test_clips: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub weights: Weights,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            test_clips: 25,
            max_new_tokens: 12,
            seed: 0,
            weights: Weights::default(),
        }
    }
}

/// Caption and question answers for every video, from clip-averaged features.
pub fn predict<T: Scalar>(
    bundle: &ModelBundle<T>,
    videos: &[&VideoRecord],
    settings: &EvalSettings,
) -> Result<Vec<PredictionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let system = bundle.config.system_text.as_str();
    let max_new = settings.max_new_tokens;
    let mut out = Vec::new();
    for v in videos {
        let clips = (0..settings.test_clips.max(1))
            .map(|_| sample_clip(v, &bundle.config.sampler, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let features = bundle.encode_clips(&clips)?;
        let caption = generate_from_features(bundle, &features, system, "", max_new)?;
        out.push(PredictionRecord {
            id: v.id.clone(),
            question: String::new(),
            answer: v.caption.clone(),
            prediction: caption.text,
            prediction_alt: None,
        });
        for qa in &v.qa_pairs {
            let a = generate_from_features(bundle, &features, system, &qa.question, max_new)?;
            let b = generate_from_features(bundle, &features, system, &qa.question_alt, max_new)?;
            out.push(PredictionRecord {
                id: v.id.clone(),
                question: qa.question.clone(),
                answer: qa.answer.clone(),
                prediction: a.text,
                prediction_alt: Some(b.text),
            });
        }
    }
    Ok(out)
}

/// Scores predictions against the gold videos they name.
pub fn score_predictions(predictions: &[PredictionRecord], videos: &[&VideoRecord], weights: Weights) -> Result<EvalReport> {
    let by_id: HashMap<&str, &VideoRecord> = videos.iter().map(|v| (v.id.as_str(), *v)).collect();
    let mut items = Vec::with_capacity(predictions.len());
    let mut per_video: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for p in predictions {
        let v = by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::invalid(format!("prediction for unknown video `{}`", p.id)))?;
        let paraphrase = match &p.prediction_alt {
            Some(alt) => {
                let question_alt = v
                    .qa_pairs
                    .iter()
                    .find(|q| q.question == p.question)
                    .map(|q| q.question_alt.clone())
                    .unwrap_or_default();
                Some(Paraphrase {
                    question_alt,
                    prediction: p.prediction.clone(),
                    prediction_alt: alt.clone(),
                })
            }
            None => None,
        };
        items.push(EvalItem::new(&p.id, &p.question, &p.answer, &p.prediction, paraphrase, Some(&v.spec)));
        if !p.question.is_empty() {
            per_video
                .entry(p.id.as_str())
                .or_default()
                .push(answer_correct(&p.prediction, &p.answer));
        }
    }
    let mut qa = BTreeMap::new();
    qa.insert(QA_DATASET.to_string(), per_video.into_values().collect());
    build_report(&items, &qa, weights)
}

/// Oracle predictions: every gold answer repeated verbatim.
pub fn gold_predictions(videos: &[&VideoRecord]) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for v in videos {
        out.push(PredictionRecord {
            id: v.id.clone(),
            question: String::new(),
            answer: v.caption.clone(),
            prediction: v.caption.clone(),
            prediction_alt: None,
        });
        for qa in &v.qa_pairs {
            out.push(PredictionRecord {
                id: v.id.clone(),
                question: qa.question.clone(),
                answer: qa.answer.clone(),
                prediction: qa.answer.clone(),
                prediction_alt: Some(qa.answer.clone()),
            });
        }
    }
    out
}

/// Generates predictions and scores them.
pub fn evaluate<T: Scalar>(
    bundle: &ModelBundle<T>,
    videos: &[&VideoRecord],
    settings: &EvalSettings,
) -> Result<(Vec<PredictionRecord>, EvalReport)> {
    let preds = predict(bundle, videos, settings)?;
    let report = score_predictions(&preds, videos, settings.weights)?;
    Ok((preds, report))
}
