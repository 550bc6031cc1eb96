use std::collections::HashMap;

use crate::language::split_words;

/// Words ignored by content-word similarity: articles, copulas and
/// prepositions. `up` and `down` are kept because they name directions.
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "am", "in", "on", "at", "of", "to",
    "from", "by", "with", "into", "onto", "for", "over", "under", "through", "across", "toward", "towards",
];

pub fn is_stop_word(w: &str) -> bool {
    STOP_WORDS.contains(&w)
}

fn is_word(w: &str) -> bool {
    w.chars().any(char::is_alphanumeric)
}

/// Lowercased words of `text`, punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    split_words(text).into_iter().filter(|w| is_word(w)).collect()
}

/// [`words`] without stop words, in order.
pub fn content_words(text: &str) -> Vec<String> {
    words(text).into_iter().filter(|w| !is_stop_word(w)).collect()
}

/// Answer form used for exact-match correctness: lowercase, no punctuation, no articles.
pub fn normalize_answer(text: &str) -> String {
    words(text)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn counts(words: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for w in words {
        *m.entry(w.as_str()).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset intersection.
pub fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let cb = counts(b);
    counts(a).iter().map(|(w, &n)| n.min(cb.get(w).copied().unwrap_or(0))).sum()
}

/// Longest common subsequence length.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}
