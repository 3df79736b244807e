//! Word-level tokenization, seed input representation and stop-word filtering.
//!
//! Tokens are produced by splitting on whitespace and then peeling leading and
//! trailing punctuation off each word, one character per punctuation token.
//! The resulting sequence defines the perturbable surface of a seed.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Prompt,
    Example,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Position in the full prompt ++ example sequence.
    pub index: usize,
    pub is_stopword: bool,
    pub is_punct: bool,
    pub segment: Segment,
}

fn is_punct_char(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits `text` into word and punctuation surfaces.
///
/// Leading and trailing punctuation characters become their own tokens;
/// punctuation inside a word (`don't`, `e-mail`) stays attached.
pub fn tokenize_surfaces(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|c| !is_punct_char(*c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| (c.to_string(), true)));
            continue;
        };
        let end = chars.iter().rposition(|c| !is_punct_char(*c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| (c.to_string(), true)));
        out.push((chars[start..end].iter().collect(), false));
        out.extend(chars[end..].iter().map(|c| (c.to_string(), true)));
    }
    out
}

/// Tokenizes free text into a single segment numbered from 0.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_segment(text, Segment::Example, 0)
}

fn tokenize_segment(text: &str, segment: Segment, offset: usize) -> Vec<Token> {
    tokenize_surfaces(text)
        .into_iter()
        .enumerate()
        .map(|(i, (surface, is_punct))| Token {
            surface,
            index: offset + i,
            is_stopword: false,
            is_punct,
            segment,
        })
        .collect()
}

/// Joins token surfaces: one space before every word token, none before
/// punctuation tokens.
pub fn render_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 && !tok.is_punct {
            out.push(' ');
        }
        out.push_str(&tok.surface);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopwordSet {
    pub language: String,
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn new(language: impl Into<String>, words: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        Self {
            language: language.into(),
            words: words
                .into_iter()
                .map(|w| w.as_ref().nfc().collect::<String>().to_lowercase())
                .collect(),
        }
    }

    /// Parses a stop-word file: one word per line, `#` comments, blank lines ignored.
    pub fn parse(language: impl Into<String>, contents: &str) -> Self {
        let words = contents
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(language, words)
    }

    /// Loads a stop-word file; the language tag is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let language = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::parse(language, &contents))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn extend(&mut self, other: &StopwordSet) {
        self.words.extend(other.words.iter().cloned());
        if self.language.is_empty() {
            self.language = other.language.clone();
        } else if !other.language.is_empty() && other.language != self.language {
            self.language = format!("{}+{}", self.language, other.language);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// A seed input: prompt and example tokens plus the expected output (or the
/// original label, for classification runs).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzInput {
    pub seed_id: String,
    pub prompt_tokens: Vec<Token>,
    pub example_tokens: Vec<Token>,
    pub reference: String,
}

impl FuzzInput {
    pub fn new(
        seed_id: impl Into<String>,
        prompt: &str,
        example: &str,
        reference: impl Into<String>,
        stops: &StopwordSet,
    ) -> Self {
        let prompt = prompt.nfc().collect::<String>();
        let example = example.nfc().collect::<String>();
        let mut prompt_tokens = tokenize_segment(&prompt, Segment::Prompt, 0);
        let mut example_tokens = tokenize_segment(&example, Segment::Example, prompt_tokens.len());
        for tok in prompt_tokens.iter_mut().chain(example_tokens.iter_mut()) {
            tok.is_stopword = stops.contains(&tok.surface);
        }
        Self {
            seed_id: seed_id.into(),
            prompt_tokens,
            example_tokens,
            reference: reference.into(),
        }
    }

    /// The full token sequence, prompt first.
    pub fn tokens(&self) -> Vec<Token> {
        self.prompt_tokens
            .iter()
            .chain(&self.example_tokens)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.prompt_tokens.len() + self.example_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Indices of tokens that may be substituted: not punctuation and not a stop word.
pub fn filter_perturbable(input: &FuzzInput, stops: &StopwordSet) -> Vec<usize> {
    input
        .prompt_tokens
        .iter()
        .chain(&input.example_tokens)
        .filter(|t| !t.is_punct && !stops.contains(&t.surface))
        .map(|t| t.index)
        .collect()
}

/// The string sent to the threat model.
pub fn render(input: &FuzzInput) -> String {
    render_tokens(&input.tokens())
}

/// Copies the capitalization pattern of `original` onto `replacement`:
/// all-caps words stay all-caps, initial capitals stay initial capitals.
pub fn match_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match original.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut chars = replacement.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
        _ => replacement.to_string(),
    }
}
