use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{Color, Motion, ShapeKind, SyntheticVideoSpec};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const CLS: usize = 3;
pub const VIS: usize = 4;
pub const UNK: usize = 5;

/// Default instruction placed before the question.
pub const SYSTEM_PROMPT: &str = "describe the video";

const SPECIALS: [(&str, &str); 6] = [
    ("pad", "<pad>"),
    ("bos", "<bos>"),
    ("eos", "<eos>"),
    ("cls", "<cls>"),
    ("vis", "<vis>"),
    ("unk", "<unk>"),
];

/// Closed word-level vocabulary. Ids 0–5 are the specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical spacing of `text`: its tokens joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    split_words(text).join(" ")
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|(_, t)| t.to_string()).collect();
        let extra: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        tokens.extend(extra.into_iter().filter(|w| !SPECIALS.iter().any(|(_, t)| t == w)));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Every word the synthetic captions, questions and the default
    /// instruction can produce, plus a few filler words.
    pub fn from_grammar() -> Self {
        let mut words = BTreeSet::new();
        let mut add = |s: &str| words.extend(split_words(s));
        add(SYSTEM_PROMPT);
        add("a an and of . ? , video frame object");
        for shape in ShapeKind::ALL {
            for color in Color::ALL {
                for motion in Motion::ALL {
                    let spec = SyntheticVideoSpec::toy(shape, color, motion);
                    add(&spec.caption());
                    for qa in spec.qa_pairs() {
                        add(&qa.question);
                        add(&qa.question_alt);
                        add(&qa.answer);
                    }
                }
            }
        }
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id <= UNK
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Joins non-special tokens with single spaces.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `{"tokens": [...], "specials": {...}}`
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    fn from_file(file: VocabFile) -> Result<Self> {
        for (i, (key, tok)) in SPECIALS.iter().enumerate() {
            if file.specials.get(*key) != Some(&i) || file.tokens.get(i).map(String::as_str) != Some(*tok) {
                return Err(Error::format(format!("vocabulary special `{key}` is not at id {i}")));
            }
        }
        let mut index = HashMap::with_capacity(file.tokens.len());
        for (i, t) in file.tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self {
            tokens: file.tokens,
            index,
        })
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabFile {
            tokens: self.tokens.clone(),
            specials: SPECIALS.iter().enumerate().map(|(i, (k, _))| (k.to_string(), i)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Self::from_file(VocabFile::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    specials: BTreeMap<String, usize>,
}
