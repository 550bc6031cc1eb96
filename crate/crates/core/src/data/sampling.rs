use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::VideoRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A stack of RGB frames, `frames × channels × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FrameBatch {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if frames * channels * height * width != data.len() {
            return Err(Error::dim(format!(
                "frame batch {frames}×{channels}×{height}×{width} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            if i >= self.frames {
                return Err(Error::dim(format!("frame index {i} out of range for {} frames", self.frames)));
            }
            data.extend_from_slice(self.frame(i));
        }
        Self::new(indices.len(), self.channels, self.height, self.width, data)
    }

    /// Spatial window `[top, top+size) × [left, left+size)` of every frame.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::dim(format!(
                "crop {size}×{size} at ({top}, {left}) exceeds {}×{} frames",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.frames * self.channels * size * size);
        for plane in self.data.chunks_exact(self.height * self.width) {
            for y in top..top + size {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + size]);
            }
        }
        Self::new(self.frames, self.channels, size, size, data)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::new(
            &self.dims(),
            self.data.iter().map(|&v| T::from_f32(v).expect("f32 converts")).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// `count` frames at a fixed stride from a random start, wrapping modulo the length.
    Stride,
    /// `count` frames spread evenly over the whole video.
    Even,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub count: usize,
    pub stride: usize,
    pub crop: usize,
    /// Clips drawn per training video per epoch.
    pub train_clips: usize,
    /// Clips whose features are averaged per test video.
    pub test_clips: usize,
}

impl SamplerConfig {
    pub fn toy() -> Self {
        Self {
            mode: SamplerMode::Stride,
            count: 8,
            stride: 6,
            crop: 32,
            train_clips: 1,
            test_clips: 25,
        }
    }

    pub fn paper() -> Self {
        Self {
            count: 100,
            crop: 224,
            ..Self::toy()
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// `(start + k·stride) mod raw_length` for `k < count`.
pub fn stride_indices(start: usize, count: usize, stride: usize, raw_length: usize) -> Vec<usize> {
    (0..count).map(|k| (start + k * stride) % raw_length).collect()
}

fn even_indices(count: usize, raw_length: usize) -> Vec<usize> {
    (0..count).map(|k| k * raw_length / count).collect()
}

/// Frame indices for one clip; the stride mode draws its start uniformly from `[0, raw_length)`.
pub fn sample_indices<R: Rng + ?Sized>(
    raw_length: usize,
    mode: SamplerMode,
    count: usize,
    stride: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if raw_length == 0 {
        return Err(Error::invalid("cannot sample frames from an empty video"));
    }
    if count == 0 || stride == 0 {
        return Err(Error::invalid("frame count and stride must be at least 1"));
    }
    Ok(match mode {
        SamplerMode::Stride => {
            let start = rng.random_range(0..raw_length);
            stride_indices(start, count, stride, raw_length)
        }
        SamplerMode::Even => even_indices(count, raw_length),
    })
}

pub fn sample_frames<R: Rng + ?Sized>(video: &VideoRecord, count: usize, stride: usize, rng: &mut R) -> Result<FrameBatch> {
    let idx = sample_indices(video.frames.frames(), SamplerMode::Stride, count, stride, rng)?;
    video.frames.select(&idx)
}

/// One offset per call, shared by every frame of the batch.
pub fn random_crop<R: Rng + ?Sized>(frames: &FrameBatch, size: usize, rng: &mut R) -> Result<FrameBatch> {
    if size == 0 || size > frames.height() || size > frames.width() {
        return Err(Error::dim(format!(
            "crop size {size} does not fit {}×{} frames",
            frames.height(),
            frames.width()
        )));
    }
    let top = rng.random_range(0..=frames.height() - size);
    let left = rng.random_range(0..=frames.width() - size);
    frames.crop(top, left, size)
}

/// Frame selection followed by a crop, as used for every training and test clip.
pub fn sample_clip<R: Rng + ?Sized>(video: &VideoRecord, cfg: &SamplerConfig, rng: &mut R) -> Result<FrameBatch> {
    let idx = sample_indices(video.frames.frames(), cfg.mode, cfg.count, cfg.stride, rng)?;
    random_crop(&video.frames.select(&idx)?, cfg.crop, rng)
}
