//! The full captioning model: frame encoder, visual projector and decoder.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::{FrameBatch, SamplerConfig, VideoRecord};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::language::{
    assemble_ids, init_lm, init_projector, lm_head, lm_hidden, project_visual, LmConfig, Vocabulary, PAD,
    SYSTEM_PROMPT,
};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::{encode_frames, encoder_forward, init_encoder, EncoderConfig, FrameFeatures, NormMode, NormStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lm: LmConfig,
    pub sampler: SamplerConfig,
    pub system_text: String,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig::toy(),
            lm: LmConfig::toy(Vocabulary::from_grammar().len()),
            sampler: SamplerConfig::toy(),
            system_text: SYSTEM_PROMPT.to_string(),
        }
    }

    /// 100 frames at stride 6 and 224-pixel crops.
    pub fn paper() -> Self {
        Self {
            encoder: EncoderConfig::paper_input(),
            sampler: SamplerConfig::paper(),
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lm.validate()?;
        if self.sampler.crop != self.encoder.input_size {
            return Err(Error::invalid(format!(
                "crop size {} differs from encoder input size {}",
                self.sampler.crop, self.encoder.input_size
            )));
        }
        if 1 + self.sampler.count >= self.lm.max_context {
            return Err(Error::invalid(format!(
                "{} visual slots leave no room in a context of {}",
                self.sampler.count, self.lm.max_context
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model in one store, named under
/// `encoder.`, `projector.` and `lm.`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<T>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::from_grammar();
        if config.lm.vocab_size != vocab.len() {
            return Err(Error::invalid(format!(
                "vocab_size {} does not match the {}-token vocabulary",
                config.lm.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = init_encoder(&config.encoder, rng.next_u64())?;
        store.extend(init_projector(config.encoder.feature_dim(), config.lm.d_model, rng.next_u64())?)?;
        store.extend(init_lm(&config.lm, rng.next_u64())?)?;
        Ok(Self { config, vocab, store })
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
        }
    }

    /// Eval-mode features of each clip, averaged element-wise across clips.
    pub fn encode_clips(&self, clips: &[FrameBatch]) -> Result<FrameFeatures<T>> {
        let first = clips.first().ok_or_else(|| Error::invalid("no clips to encode"))?;
        let mut acc = encode_frames(&self.store, &self.config.encoder, &first.to_tensor()?)?.values;
        for clip in &clips[1..] {
            let f = encode_frames(&self.store, &self.config.encoder, &clip.to_tensor()?)?.values;
            if f.shape() != acc.shape() {
                return Err(Error::dim(format!(
                    "clip features {:?} and {:?} differ",
                    f.shape(),
                    acc.shape()
                )));
            }
            acc.values_mut().iter_mut().zip(f.values()).for_each(|(a, &b)| *a += b);
        }
        let n = T::from_usize(clips.len()).expect("usize");
        acc.values_mut().iter_mut().for_each(|a| *a /= n);
        Ok(FrameFeatures { values: acc })
    }
}

/// One question/answer sequence over a video. Captions use an empty question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextItem {
    pub question: String,
    pub answer: String,
}

/// Caption, each question and each reworded question of a video.
pub fn training_items(video: &VideoRecord) -> Vec<TextItem> {
    let mut out = vec![TextItem {
        question: String::new(),
        answer: video.caption.clone(),
    }];
    for qa in &video.qa_pairs {
        for q in [&qa.question, &qa.question_alt] {
            out.push(TextItem {
                question: q.clone(),
                answer: qa.answer.clone(),
            });
        }
    }
    out
}

pub struct BatchLoss<T> {
    /// Mean next-token cross-entropy over every masked position.
    pub loss: Var,
    pub stats: NormStats<T>,
    pub tokens: usize,
}

/// Loss of a batch of clips, `items[i]` holding the sequences of clip `i`.
/// All clips are encoded in one pass.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    config: &ModelConfig,
    vocab: &Vocabulary,
    clips: &[FrameBatch],
    items: &[Vec<TextItem>],
    mode: NormMode,
) -> Result<BatchLoss<T>> {
    if clips.is_empty() || clips.len() != items.len() {
        return Err(Error::invalid(format!(
            "{} clips need as many item lists, got {}",
            clips.len(),
            items.len()
        )));
    }
    let dims = clips[0].dims();
    let mut data = Vec::with_capacity(clips.len() * clips[0].data().len());
    for c in clips {
        if c.dims() != dims {
            return Err(Error::dim(format!("clip shapes {:?} and {:?} differ", c.dims(), dims)));
        }
        data.extend(c.data().iter().map(|&v| T::from_f32(v).expect("f32 converts")));
    }
    let t = dims[0];
    let frames = Tensor::new(&[clips.len() * t, dims[1], dims[2], dims[3]], data)?;
    let x = g.tape.constant(frames);
    let enc = encoder_forward(g, &config.encoder, x, mode)?;
    let visual = project_visual(g, enc.features)?;

    let system = vocab.tokenize(&config.system_text);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, list) in items.iter().enumerate() {
        let vis = g.tape.rows(visual, i * t, t)?;
        for item in list {
            let answer = vocab.tokenize(&item.answer);
            let prompt = assemble_ids(
                g,
                vis,
                &system,
                &vocab.tokenize(&item.question),
                Some(&answer),
                config.lm.max_context,
            )?;
            let hidden = lm_hidden(g, &config.lm, prompt.embeddings)?;
            let start = prompt.tokens.mask_start().expect("answer present");
            rows.push(g.tape.rows(hidden, start, prompt.tokens.masked_count())?);
            targets.extend(prompt.tokens.masked_targets());
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("batch holds no text items"));
    }
    let hidden = g.tape.concat_rows(&rows)?;
    let logits = lm_head(g, hidden)?;
    let loss = g.tape.cross_entropy(logits, &targets, PAD)?;
    Ok(BatchLoss {
        loss,
        stats: enc.stats,
        tokens: targets.len(),
    })
}
