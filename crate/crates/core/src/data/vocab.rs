//! Fixed synthetic vocabulary. Tokens are lowercase words plus sentence
//! punctuation; the word list is static so checkpoints built against it stay
//! valid for any dataset.

use std::collections::HashMap;

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

/// Every word the question/answer/chain templates can emit, plus the target
/// lexicon. Order is the token id assignment and must stay append-only.
const WORDS: &[&str] = &[
    ".", ",", "?",
    // question scaffolding
    "is", "the", "visible", "in", "image", "what", "organ", "finding",
    "shown", "main", "where", "located", "describe", "appearance", "of",
    "analyze", "visual", "findings", "or",
    // answers
    "yes", "no", "not", "left", "right", "center", "part", "upper",
    "middle", "lower", "appears", "bright", "dark", "and", "small",
    "large", "lies",
    // chain vocabulary
    "a", "region", "stands", "out", "against", "background", "it", "its",
    "intensity", "level", "matches", "this", "rectangular", "horizontally",
    "vertically", "sits", "present", "matching",
    // target lexicon
    "pancreas", "liver", "spleen", "kidney", "heart", "nodule", "tumor",
    "cyst", "polyp",
];

#[derive(Debug, Clone)]
pub struct SynthVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for SynthVocab {
    fn default() -> Self {
        Self::standard()
    }
}

impl SynthVocab {
    pub fn standard() -> Self {
        let mut words = vec!["<pad>".to_string(), "<eos>".to_string(), "<unk>".to_string()];
        words.extend(WORDS.iter().map(|w| w.to_string()));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    /// Lowercases, splits punctuation into standalone tokens, splits on
    /// whitespace. Unknown words map to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        canonical_words(text)
            .into_iter()
            .map(|w| self.id(&w))
            .collect()
    }

    /// Canonical text for a token sequence: words joined by single spaces,
    /// punctuation as standalone tokens. Stops at the first `<eos>`.
    pub fn detokenize(&self, tokens: &[usize]) -> String {
        let mut words = Vec::new();
        for &t in tokens {
            if t == EOS {
                break;
            }
            if t == PAD {
                continue;
            }
            words.push(self.word(t));
        }
        words.join(" ")
    }
}

/// Lowercased canonical word stream: punctuation `. , ?` separated out,
/// whitespace collapsed.
pub fn canonical_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            if ch == '.' || ch == ',' || ch == '?' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Canonical normalization used by exact-match evaluation: lowercase plus
/// whitespace/punctuation canonicalization.
pub fn normalize_text(text: &str) -> String {
    canonical_words(text).join(" ")
}
