use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rvf;
use super::synthetic::{generate_video, Color, Motion, QaPair, ShapeKind, SyntheticVideoSpec, VideoMeta, VideoRecord};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub record: VideoRecord,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub version: u32,
    pub seed: u64,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn empty(seed: u64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&VideoRecord> {
        self.entries.iter().filter(|e| e.split == split).map(|e| &e.record).collect()
    }

    pub fn train(&self) -> Vec<&VideoRecord> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&VideoRecord> {
        self.split(Split::Test)
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.entries.iter().map(|e| &e.record).find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.record.id.as_str()) {
                return Err(Error::format(format!("duplicate record id `{}`", e.record.id)));
            }
        }
        Ok(())
    }
}

/// The i-th attribute combination. The first twelve have pairwise distinct
/// (color, shape) and (color, motion) pairs.
fn combination(i: usize) -> (ShapeKind, Color, Motion) {
    (
        ShapeKind::ALL[i % 3],
        Color::ALL[i % 4],
        Motion::ALL[(i + i / 4 + i / 12) % 4],
    )
}

/// `n_train` training videos followed by `n_test` test videos.
pub fn make_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::empty(seed);
    for i in 0..n_train + n_test {
        let (shape, color, motion) = combination(i);
        let spec = SyntheticVideoSpec::toy(shape, color, motion);
        let record = generate_video(&spec, rng.next_u64())?;
        let split = if i < n_train { Split::Train } else { Split::Test };
        ds.entries.push(DatasetEntry { record, split });
    }
    ds.validate()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct ManifestQa {
    q: String,
    a: String,
    q_alt: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    file: String,
    caption: String,
    qa: Vec<ManifestQa>,
    split: Split,
    spec: SyntheticVideoSpec,
    meta: VideoMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    records: Vec<ManifestRecord>,
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir.join(FRAMES_DIR))?;
    let mut records = Vec::with_capacity(ds.len());
    for e in &ds.entries {
        let r = &e.record;
        let file = format!("{FRAMES_DIR}/{}.rvf", r.id);
        rvf::write(&dir.join(&file), &r.frames)?;
        records.push(ManifestRecord {
            id: r.id.clone(),
            file,
            caption: r.caption.clone(),
            qa: r
                .qa_pairs
                .iter()
                .map(|p| ManifestQa {
                    q: p.question.clone(),
                    a: p.answer.clone(),
                    q_alt: p.question_alt.clone(),
                })
                .collect(),
            split: e.split,
            spec: r.spec.clone(),
            meta: r.meta.clone(),
        });
    }
    let manifest = Manifest {
        version: ds.version,
        seed: ds.seed,
        records,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }
    let mut entries = Vec::with_capacity(manifest.records.len());
    for m in manifest.records {
        let frames = rvf::read(&dir.join(&m.file))?;
        if frames.frames() != m.spec.raw_length {
            return Err(Error::format(format!(
                "record `{}` has {} frames, spec says {}",
                m.id,
                frames.frames(),
                m.spec.raw_length
            )));
        }
        let record = VideoRecord {
            id: m.id,
            frames,
            caption: m.caption,
            qa_pairs: m
                .qa
                .into_iter()
                .map(|q| QaPair {
                    question: q.q,
                    answer: q.a,
                    question_alt: q.q_alt,
                })
                .collect(),
            spec: m.spec,
            meta: m.meta,
        };
        entries.push(DatasetEntry { record, split: m.split });
    }
    let ds = Dataset {
        version: manifest.version,
        seed: manifest.seed,
        entries,
    };
    ds.validate()?;
    Ok(ds)
}
