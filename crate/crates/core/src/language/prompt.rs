use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, CLS, EOS, PAD, VIS};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Cls,
    Visual,
    System,
    Question,
    Answer,
}

impl Segment {
    pub const ORDER: [Segment; 5] = [
        Segment::Cls,
        Segment::Visual,
        Segment::System,
        Segment::Question,
        Segment::Answer,
    ];
}

/// Source of each position in `[CLS][visual×T][system][question][answer]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub sources: Vec<Segment>,
}

impl PromptLayout {
    pub fn new(visual: usize, system: usize, question: usize, answer: usize) -> Self {
        let counts = [1, visual, system, question, answer];
        let sources = Segment::ORDER
            .iter()
            .zip(counts)
            .flat_map(|(&s, n)| std::iter::repeat_n(s, n))
            .collect();
        Self { sources }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Position counts in slot order: CLS, visual, system, question, answer.
    pub fn lengths(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for s in &self.sources {
            out[Segment::ORDER.iter().position(|o| o == s).expect("known segment")] += 1;
        }
        out
    }

    pub fn answer_start(&self) -> usize {
        self.len() - self.lengths()[4]
    }
}

/// Token ids of every position plus teacher-forcing targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTokens {
    pub layout: PromptLayout,
    /// `CLS` at 0, `VIS` on visual slots, word ids elsewhere.
    pub ids: Vec<usize>,
    /// Next-token target per position; `PAD` where the mask is off.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PromptTokens {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// First masked position; masked positions are contiguous to the end.
    pub fn mask_start(&self) -> Option<usize> {
        self.mask.iter().position(|&m| m)
    }

    pub fn masked_targets(&self) -> Vec<usize> {
        self.targets
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Lays out one sequence. With an answer, the mask covers the position
/// before the answer and every answer position; the final target is `EOS`.
pub fn layout_tokens(
    visual_len: usize,
    system: &[usize],
    question: &[usize],
    answer: Option<&[usize]>,
    max_context: usize,
) -> Result<PromptTokens> {
    let ans = answer.unwrap_or(&[]);
    let layout = PromptLayout::new(visual_len, system.len(), question.len(), ans.len());
    let len = layout.len();
    if len > max_context {
        return Err(Error::ContextOverflow { len, max: max_context });
    }
    let mut ids = vec![CLS];
    ids.extend(std::iter::repeat_n(VIS, visual_len));
    ids.extend_from_slice(system);
    ids.extend_from_slice(question);
    ids.extend_from_slice(ans);
    let mut targets = vec![PAD; len];
    let mut mask = vec![false; len];
    if answer.is_some() {
        let start = layout.answer_start() - 1;
        for p in start..len {
            mask[p] = true;
            targets[p] = if p + 1 < len { ids[p + 1] } else { EOS };
        }
    }
    Ok(PromptTokens {
        layout,
        ids,
        targets,
        mask,
    })
}

pub struct Prompt {
    /// `L×d_model` input embeddings.
    pub embeddings: Var,
    pub tokens: PromptTokens,
}

/// Builds the embedding sequence from projected visual rows and text.
pub fn assemble_prompt<T: Scalar>(
    g: &mut Graph<'_, T>,
    visual: Var,
    system_text: &str,
    question: &str,
    answer: Option<&str>,
    vocab: &Vocabulary,
    max_context: usize,
) -> Result<Prompt> {
    let ans = answer.map(|a| vocab.tokenize(a));
    assemble_ids(
        g,
        visual,
        &vocab.tokenize(system_text),
        &vocab.tokenize(question),
        ans.as_deref(),
        max_context,
    )
}

pub fn assemble_ids<T: Scalar>(
    g: &mut Graph<'_, T>,
    visual: Var,
    system: &[usize],
    question: &[usize],
    answer: Option<&[usize]>,
    max_context: usize,
) -> Result<Prompt> {
    let (t, _) = g.tape.value(visual).dims2()?;
    let tokens = layout_tokens(t, system, question, answer, max_context)?;
    let cls = g.p("lm.cls")?;
    let mut parts = vec![cls, visual];
    let text = &tokens.ids[1 + t..];
    if !text.is_empty() {
        let table = g.p("lm.token_embedding")?;
        parts.push(g.tape.embedding_lookup(table, text)?);
    }
    let embeddings = g.tape.concat_rows(&parts)?;
    Ok(Prompt { embeddings, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_counts() {
        let v = Vocabulary::from_grammar();
        let sys = v.tokenize("describe");
        let p = layout_tokens(2, &sys, &[], Some(&[]), 256).unwrap();
        assert_eq!(p.layout.lengths(), [1, 2, 1, 0, 0]);
        assert_eq!(p.masked_count(), 1);
        assert_eq!(p.masked_targets(), vec![EOS]);
    }

    #[test]
    fn answer_mask_is_shifted_by_one() {
        let v = Vocabulary::from_grammar();
        let ans = v.tokenize("a red square moves right");
        let p = layout_tokens(8, &v.tokenize("describe the video"), &[], Some(&ans), 256).unwrap();
        assert_eq!(p.masked_count(), 6);
        let mut expected = ans.clone();
        expected.push(EOS);
        assert_eq!(p.masked_targets(), expected);
        assert_eq!(p.mask_start(), Some(p.layout.answer_start() - 1));
    }

    #[test]
    fn no_answer_no_mask() {
        let p = layout_tokens(3, &[7], &[8, 9], None, 256).unwrap();
        assert_eq!(p.masked_count(), 0);
        assert_eq!(p.ids, vec![CLS, VIS, VIS, VIS, 7, 8, 9]);
    }

    #[test]
    fn overflow_is_explicit() {
        let err = layout_tokens(10, &[7; 5], &[], Some(&[8; 5]), 12).unwrap_err();
        assert!(matches!(err, Error::ContextOverflow { len: 21, max: 12 }));
    }
}
