//! Synthetic moving-shape videos, clip sampling and dataset persistence.

mod dataset;
pub mod rvf;
mod sampling;
mod synthetic;

pub use dataset::{load_dataset, make_dataset, save_dataset, Dataset, DatasetEntry, Split, MANIFEST_VERSION};
pub use sampling::{
    random_crop, sample_clip, sample_frames, sample_indices, stride_indices, FrameBatch,
    SamplerConfig, SamplerMode,
};
pub use synthetic::{
    generate_video, Color, Motion, QaPair, ShapeKind, SyntheticVideoSpec, VideoMeta, VideoRecord, SHAPE_SIZE,
};
