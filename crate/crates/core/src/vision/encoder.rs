use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, BatchStats, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running-statistics momentum for every batch-norm layer.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Square input side in pixels.
    pub input_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl EncoderConfig {
    /// Three-stage CIFAR-style network on 32×32 inputs.
    pub fn toy() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
            input_size: 32,
        }
    }

    /// Same family on 224×224 crops.
    pub fn paper_input() -> Self {
        Self {
            input_size: 224,
            ..Self::toy()
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.stage_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return Err(Error::invalid(
                "encoder needs at least one stage and one block count per stage",
            ));
        }
        if self.stage_widths.contains(&0)
            || self.blocks_per_stage.contains(&0)
            || self.stem_channels == 0
            || self.in_channels == 0
        {
            return Err(Error::invalid("encoder widths and block counts must be positive"));
        }
        if self.input_size == 0 {
            return Err(Error::invalid("encoder input size must be positive"));
        }
        Ok(())
    }

    /// `(prefix, stride)` of every residual block in forward order.
    pub fn blocks(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (s, &n) in self.blocks_per_stage.iter().enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push((format!("encoder.stage{}.block{b}", s + 1), stride));
            }
        }
        out
    }
}

/// Per-frame global features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures<T> {
    pub values: Tensor<T>,
}

impl<T: Scalar> FrameFeatures<T> {
    pub fn frame_count(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

fn he_kernel<T: Scalar>(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
    Tensor::new(&shape, values).expect("kernel shape")
}

fn add_bn<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<()> {
    store.insert_param(format!("{prefix}.weight"), Tensor::ones(&[c]))?;
    store.insert_param(format!("{prefix}.bias"), Tensor::zeros(&[c]))?;
    store.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[c]))?;
    store.insert_buffer(format!("{prefix}.running_var"), Tensor::ones(&[c]))?;
    Ok(())
}

/// Fresh encoder parameters: He fan-in normal kernels, unit norm scales,
/// zero norm shifts. Deterministic per seed; nothing is loaded from disk.
pub fn init_encoder<T: Scalar>(config: &EncoderConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert_param(
        "encoder.stem.conv.weight",
        he_kernel(&mut rng, [config.stem_channels, config.in_channels, 3, 3]),
    )?;
    add_bn(&mut store, "encoder.stem.bn", config.stem_channels)?;

    let mut in_ch = config.stem_channels;
    let mut blocks = config.blocks().into_iter();
    for (&width, &count) in config.stage_widths.iter().zip(&config.blocks_per_stage) {
        for _ in 0..count {
            let (prefix, stride) = blocks.next().expect("one entry per block");
            store.insert_param(format!("{prefix}.conv1.weight"), he_kernel(&mut rng, [width, in_ch, 3, 3]))?;
            add_bn(&mut store, &format!("{prefix}.bn1"), width)?;
            store.insert_param(format!("{prefix}.conv2.weight"), he_kernel(&mut rng, [width, width, 3, 3]))?;
            add_bn(&mut store, &format!("{prefix}.bn2"), width)?;
            if stride != 1 || in_ch != width {
                store.insert_param(
                    format!("{prefix}.shortcut.conv.weight"),
                    he_kernel(&mut rng, [width, in_ch, 1, 1]),
                )?;
                add_bn(&mut store, &format!("{prefix}.shortcut.bn"), width)?;
            }
            in_ch = width;
        }
    }
    Ok(store)
}

/// Batch statistics gathered in train mode, keyed by norm-layer prefix.
pub type NormStats<T> = Vec<(String, BatchStats<T>)>;

fn norm<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    prefix: &str,
    mode: NormMode,
    stats: &mut NormStats<T>,
) -> Result<Var> {
    let gamma = g.p(&format!("{prefix}.weight"))?;
    let beta = g.p(&format!("{prefix}.bias"))?;
    let (y, batch) = match mode {
        NormMode::Train => g.tape.batch_norm_2d(x, gamma, beta, BatchNormMode::Train)?,
        NormMode::Eval => {
            let rm = g.store.buffer(&format!("{prefix}.running_mean"))?.values();
            let rv = g.store.buffer(&format!("{prefix}.running_var"))?.values();
            g.tape.batch_norm_2d(
                x,
                gamma,
                beta,
                BatchNormMode::Eval {
                    running_mean: rm,
                    running_var: rv,
                },
            )?
        }
    };
    if let Some(b) = batch {
        stats.push((prefix.to_string(), b));
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn conv_norm<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    conv: &str,
    bn: &str,
    stride: usize,
    padding: usize,
    mode: NormMode,
    stats: &mut NormStats<T>,
) -> Result<Var> {
    let k = g.p(&format!("{conv}.weight"))?;
    let y = g.tape.conv2d(x, k, stride, padding)?;
    norm(g, y, bn, mode, stats)
}

/// `relu(shortcut(x) + F(x))` with `F = conv→norm→relu→conv→norm`; the
/// shortcut is a strided 1×1 conv + norm when the block has one, else identity.
pub fn residual_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    prefix: &str,
    stride: usize,
    mode: NormMode,
    stats: &mut NormStats<T>,
) -> Result<Var> {
    let h = conv_norm(g, x, &format!("{prefix}.conv1"), &format!("{prefix}.bn1"), stride, 1, mode, stats)?;
    let h = g.tape.relu(h)?;
    let h = conv_norm(g, h, &format!("{prefix}.conv2"), &format!("{prefix}.bn2"), 1, 1, mode, stats)?;
    let shortcut = if g.has_param(&format!("{prefix}.shortcut.conv.weight")) {
        conv_norm(
            g,
            x,
            &format!("{prefix}.shortcut.conv"),
            &format!("{prefix}.shortcut.bn"),
            stride,
            0,
            mode,
            stats,
        )?
    } else {
        x
    };
    if g.tape.shape(h) != g.tape.shape(shortcut) {
        return Err(Error::dim(format!(
            "residual block {prefix}: branch {:?} and shortcut {:?} differ",
            g.tape.shape(h),
            g.tape.shape(shortcut)
        )));
    }
    let sum = g.tape.add(h, shortcut)?;
    g.tape.relu(sum)
}

pub struct EncoderOutput<T> {
    /// `N×D_v` pooled features.
    pub features: Var,
    pub stats: NormStats<T>,
}

/// Runs the encoder over an `N×C×H×W` image batch already on the tape.
pub fn encoder_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    config: &EncoderConfig,
    images: Var,
    mode: NormMode,
) -> Result<EncoderOutput<T>> {
    let (_, c, h, w) = g.tape.value(images).dims4()?;
    if c != config.in_channels || h != config.input_size || w != config.input_size {
        return Err(Error::dim(format!(
            "encoder expects {}×{}×{} frames, got {c}×{h}×{w}",
            config.in_channels, config.input_size, config.input_size
        )));
    }
    let mut stats = Vec::new();
    let x = conv_norm(g, images, "encoder.stem.conv", "encoder.stem.bn", 1, 1, mode, &mut stats)?;
    let mut x = g.tape.relu(x)?;
    for (prefix, stride) in config.blocks() {
        x = residual_block(g, x, &prefix, stride, mode, &mut stats)?;
    }
    let features = g.tape.global_avg_pool_2d(x)?;
    Ok(EncoderOutput { features, stats })
}

/// Eval-mode features for a `T×C×H×W` frame tensor; frames are independent
/// and row order follows frame order.
pub fn encode_frames<T: Scalar>(
    store: &ParamStore<T>,
    config: &EncoderConfig,
    frames: &Tensor<T>,
) -> Result<FrameFeatures<T>> {
    let mut g = Graph::inference(store);
    let x = g.tape.constant(frames.clone());
    let out = encoder_forward(&mut g, config, x, NormMode::Eval)?;
    Ok(FrameFeatures {
        values: g.tape.value(out.features).clone(),
    })
}
