//! Tokenizer, prompt assembly, the decoder-only transformer and greedy decoding.

mod generate;
mod lm;
mod prompt;
mod vocab;

pub use generate::{argmax, generate, generate_from_features, Generation};
pub use lm::{init_lm, init_projector, lm_forward, lm_head, lm_hidden, project_visual, LmConfig, EMBED_INIT_STD};
pub use prompt::{assemble_ids, assemble_prompt, layout_tokens, Prompt, PromptLayout, PromptTokens, Segment};
pub use vocab::{
    normalize_text, split_words, Vocabulary, BOS, CLS, EOS, PAD, SYSTEM_PROMPT, UNK, VIS,
};
