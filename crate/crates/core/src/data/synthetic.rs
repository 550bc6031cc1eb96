use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::FrameBatch;
use crate::error::{Error, Result};

/// Side length in pixels of every rendered object.
pub const SHAPE_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }

    fn covers(self, dy: usize, dx: usize) -> bool {
        let s = SHAPE_SIZE as f64;
        let (y, x) = (dy as f64 + 0.5, dx as f64 + 0.5);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => (y - s / 2.0).powi(2) + (x - s / 2.0).powi(2) <= (s / 2.0).powi(2),
            // apex at the top, base along the bottom row
            ShapeKind::Triangle => (x - s / 2.0).abs() <= y / 2.0,
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Left, Motion::Right, Motion::Up, Motion::Down];

    pub fn word(self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Right => "right",
            Motion::Up => "up",
            Motion::Down => "down",
        }
    }

    /// Unit step as `(dy, dx)`.
    fn step(self) -> (i64, i64) {
        match self {
            Motion::Left => (0, -1),
            Motion::Right => (0, 1),
            Motion::Up => (-1, 0),
            Motion::Down => (1, 0),
        }
    }
}

macro_rules! display_word {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    )*};
}
display_word!(ShapeKind, Color, Motion);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticVideoSpec {
    pub shape: ShapeKind,
    pub color: Color,
    pub motion: Motion,
    /// Pixels per frame.
    pub speed: u32,
    pub raw_length: usize,
    pub canvas_height: usize,
    pub canvas_width: usize,
}

impl SyntheticVideoSpec {
    pub fn toy(shape: ShapeKind, color: Color, motion: Motion) -> Self {
        Self {
            shape,
            color,
            motion,
            speed: 1,
            raw_length: 64,
            canvas_height: 40,
            canvas_width: 40,
        }
    }

    pub fn caption(&self) -> String {
        format!("the {} {} moves {}", self.color, self.shape, self.motion)
    }

    pub fn qa_pairs(&self) -> Vec<QaPair> {
        vec![
            QaPair {
                question: "what color is the shape?".into(),
                answer: self.color.word().into(),
                question_alt: "which color does the object have?".into(),
            },
            QaPair {
                question: "what shape is it?".into(),
                answer: self.shape.word().into(),
                question_alt: "which shape is shown in the video?".into(),
            },
            QaPair {
                question: "which direction does the shape move?".into(),
                answer: self.motion.word().into(),
                question_alt: "where is the object moving?".into(),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    /// A rewording of `question` with the same answer.
    pub question_alt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub seed: u64,
    /// Top-left object position `(y, x)` in frame 0.
    pub start: (usize, usize),
    /// The object crossed a canvas edge and was wrapped around.
    pub wrapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `raw_length × 3 × H × W`, values in `[0, 1]`.
    pub frames: FrameBatch,
    pub caption: String,
    pub qa_pairs: Vec<QaPair>,
    pub spec: SyntheticVideoSpec,
    pub meta: VideoMeta,
}

impl VideoRecord {
    /// `(question, question_alt)` per QA pair.
    pub fn paraphrase_pairs(&self) -> Vec<(String, String)> {
        self.qa_pairs
            .iter()
            .map(|q| (q.question.clone(), q.question_alt.clone()))
            .collect()
    }
}

/// Renders one video. A pure function of `(spec, seed)`.
pub fn generate_video(spec: &SyntheticVideoSpec, seed: u64) -> Result<VideoRecord> {
    let (h, w) = (spec.canvas_height, spec.canvas_width);
    if h < SHAPE_SIZE || w < SHAPE_SIZE {
        return Err(Error::invalid(format!(
            "canvas {h}×{w} is smaller than the {SHAPE_SIZE}-pixel shape"
        )));
    }
    if spec.raw_length == 0 {
        return Err(Error::invalid("raw_length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (rng.random_range(0..=h - SHAPE_SIZE), rng.random_range(0..=w - SHAPE_SIZE));
    let (dy, dx) = spec.motion.step();
    let rgb = spec.color.rgb();
    let plane = h * w;
    let mut data = vec![0.0f32; spec.raw_length * 3 * plane];
    let mut wrapped = false;
    for f in 0..spec.raw_length {
        let travel = spec.speed as i64 * f as i64;
        let py = start.0 as i64 + dy * travel;
        let px = start.1 as i64 + dx * travel;
        if py < 0 || px < 0 || py as usize + SHAPE_SIZE > h || px as usize + SHAPE_SIZE > w {
            wrapped = true;
        }
        let frame = &mut data[f * 3 * plane..(f + 1) * 3 * plane];
        for oy in 0..SHAPE_SIZE {
            for ox in 0..SHAPE_SIZE {
                if !spec.shape.covers(oy, ox) {
                    continue;
                }
                let y = (py + oy as i64).rem_euclid(h as i64) as usize;
                let x = (px + ox as i64).rem_euclid(w as i64) as usize;
                for (ch, &v) in rgb.iter().enumerate() {
                    frame[ch * plane + y * w + x] = v;
                }
            }
        }
    }
    Ok(VideoRecord {
        id: format!("video-{seed:016x}"),
        frames: FrameBatch::new(spec.raw_length, 3, h, w, data)?,
        caption: spec.caption(),
        qa_pairs: spec.qa_pairs(),
        spec: spec.clone(),
        meta: VideoMeta { seed, start, wrapped },
    })
}
