use super::lm::{lm_head, lm_hidden, project_visual};
use super::prompt::assemble_ids;
use super::vocab::EOS;
use crate::data::FrameBatch;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::ModelBundle;
use crate::scalar::Scalar;
use crate::vision::FrameFeatures;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    /// Generated ids, without the terminating `EOS`.
    pub ids: Vec<usize>,
    /// Decoding stopped because the context was full.
    pub truncated: bool,
}

/// Greedy decoding from a single clip.
pub fn generate<T: Scalar>(
    bundle: &ModelBundle<T>,
    video: &FrameBatch,
    system_text: &str,
    question: &str,
    max_new_tokens: usize,
) -> Result<Generation> {
    let features = bundle.encode_clips(std::slice::from_ref(video))?;
    generate_from_features(bundle, &features, system_text, question, max_new_tokens)
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from precomputed frame features; stops at `EOS`,
/// after `max_new_tokens`, or when the context is full.
pub fn generate_from_features<T: Scalar>(
    bundle: &ModelBundle<T>,
    features: &FrameFeatures<T>,
    system_text: &str,
    question: &str,
    max_new_tokens: usize,
) -> Result<Generation> {
    if max_new_tokens == 0 {
        return Err(Error::invalid("max_new_tokens must be at least 1"));
    }
    let cfg = &bundle.config.lm;
    let system = bundle.vocab.tokenize(system_text);
    let question = bundle.vocab.tokenize(question);
    let mut ids: Vec<usize> = Vec::new();
    let mut truncated = false;
    for _ in 0..max_new_tokens {
        let prompt_len = 1 + features.frame_count() + system.len() + question.len() + ids.len();
        if prompt_len > cfg.max_context {
            if ids.is_empty() {
                return Err(Error::ContextOverflow {
                    len: prompt_len,
                    max: cfg.max_context,
                });
            }
            truncated = true;
            break;
        }
        let mut g = Graph::inference(&bundle.store);
        let f = g.tape.constant(features.values.clone());
        let visual = project_visual(&mut g, f)?;
        let prompt = assemble_ids(&mut g, visual, &system, &question, Some(&ids), cfg.max_context)?;
        let hidden = lm_hidden(&mut g, cfg, prompt.embeddings)?;
        let last = g.tape.rows(hidden, prompt_len - 1, 1)?;
        let logits = lm_head(&mut g, last)?;
        let next = argmax(g.tape.values(logits));
        if next == EOS {
            break;
        }
        ids.push(next);
    }
    Ok(Generation {
        text: bundle.vocab.detokenize(&ids),
        ids,
        truncated,
    })
}
