//! The perturbation space: lexical relation retrieval, embedding-based
//! ranking and top-K candidate selection, plus single-token substitution.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::error::Error;
use crate::text::{match_case, Token};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("position {0} is not perturbable")]
    NotPerturbable(usize),
}

/// Lexical relation tag, ordered by retrieval priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    Synonym,
    NearSynonym,
    HyperHypo,
}

impl Relation {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "syn" => Some(Relation::Synonym),
            "near" => Some(Relation::NearSynonym),
            "hyp" => Some(Relation::HyperHypo),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub candidate: String,
    /// Every relation under which the pair was listed.
    pub relations: BTreeSet<Relation>,
}

/// Word to candidate multimap. Lookups are case-insensitive on the word.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    entries: HashMap<String, BTreeMap<String, BTreeSet<Relation>>>,
}

impl Lexicon {
    pub fn parse(contents: &str, path: &Path) -> Result<Self, Error> {
        let mut lex = Lexicon::default();
        for (lineno, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let err = |m: &str| Error::parse(path, lineno + 1, m);
            if fields.len() != 3 {
                return Err(err("expected `word<TAB>relation<TAB>candidate`"));
            }
            let word: String = fields[0].trim().nfc().collect();
            let candidate: String = fields[2].trim().nfc().collect();
            let relation = Relation::parse(fields[1].trim())
                .ok_or_else(|| err("relation must be one of syn, near, hyp"))?;
            if word.is_empty() || candidate.is_empty() {
                return Err(err("empty word or candidate"));
            }
            if candidate.chars().any(char::is_whitespace) {
                return Err(err("candidate contains whitespace"));
            }
            lex.insert(&word, &candidate, relation);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents, path)
    }

    pub fn insert(&mut self, word: &str, candidate: &str, relation: Relation) {
        if word.to_lowercase() == candidate.to_lowercase() {
            return;
        }
        self.entries
            .entry(word.to_lowercase())
            .or_default()
            .entry(candidate.to_string())
            .or_default()
            .insert(relation);
    }

    pub fn lookup(&self, word: &str) -> Vec<LexiconEntry> {
        let key = word.to_lowercase();
        self.entries
            .get(&key)
            .map(|cands| {
                cands
                    .iter()
                    .map(|(c, rels)| LexiconEntry {
                        word: key.clone(),
                        candidate: c.clone(),
                        relations: rels.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Words that appeared more than once; the last vector wins.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn parse(contents: &str, path: &Path) -> Result<Self, Error> {
        let mut table = EmbeddingTable::default();
        for (lineno, line) in contents.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 0 && fields.len() == 2 {
                if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    table.dim = dim;
                    continue;
                }
            }
            let word: String = fields[0].nfc().collect();
            let vector = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::parse(path, lineno + 1, format!("non-numeric component for `{word}`")))?;
            table
                .insert(word.clone(), vector)
                .map_err(|m| Error::parse(path, lineno + 1, m))?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents, path)
    }

    pub fn insert(&mut self, word: String, vector: Vec<f64>) -> Result<(), String> {
        if vector.is_empty() {
            return Err(format!("no vector components for `{word}`"));
        }
        if self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(format!(
                "dimension mismatch for `{word}`: expected {}, got {}",
                self.dim,
                vector.len()
            ));
        }
        if self.vectors.insert(word.clone(), vector).is_some() {
            log::warn!("duplicate embedding for `{word}`; keeping the last one");
            self.duplicates += 1;
        }
        Ok(())
    }

    /// Exact match first, then the lowercase form.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, PerturbError> {
    if a.len() != b.len() {
        return Err(PerturbError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(PerturbError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub word: String,
    /// `None` when the original word has no embedding and candidates are
    /// kept in lexicon order.
    pub similarity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub original: String,
    pub candidates: Vec<Candidate>,
    pub k: usize,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.word.as_str())
    }
}

/// Top-`k` substitution candidates for `word`.
pub fn candidate_set(word: &str, lexicon: &Lexicon, table: &EmbeddingTable, k: usize) -> CandidateSet {
    assert!(k >= 1, "k must be at least 1");
    let original = word.to_lowercase();
    let entries: Vec<LexiconEntry> = lexicon
        .lookup(word)
        .into_iter()
        .filter(|e| e.candidate.to_lowercase() != original)
        .collect();

    let candidates = match table.get(word) {
        Some(anchor) => {
            let mut scored: Vec<Candidate> = entries
                .iter()
                .filter_map(|e| {
                    let v = table.get(&e.candidate)?;
                    let sim = cosine(anchor, v).ok()?;
                    Some(Candidate {
                        word: e.candidate.clone(),
                        similarity: Some(sim),
                    })
                })
                .collect();
            scored.sort_by(|a, b| {
                b.similarity
                    .partial_cmp(&a.similarity)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.word.cmp(&b.word))
            });
            scored
        }
        None => {
            let mut ordered = entries;
            ordered.sort_by(|a, b| {
                a.relations
                    .first()
                    .cmp(&b.relations.first())
                    .then_with(|| a.candidate.cmp(&b.candidate))
            });
            ordered
                .into_iter()
                .map(|e| Candidate {
                    word: e.candidate,
                    similarity: None,
                })
                .collect()
        }
    };

    CandidateSet {
        original,
        candidates: candidates.into_iter().take(k).collect(),
        k,
    }
}

/// Replaces the surface at `position`, copying the displaced word's
/// capitalization onto `replacement`.
pub fn substitute(variant: &[Token], position: usize, replacement: &str) -> Result<Vec<Token>, PerturbError> {
    let tok = variant
        .get(position)
        .ok_or(PerturbError::NotPerturbable(position))?;
    if tok.is_punct || tok.is_stopword {
        return Err(PerturbError::NotPerturbable(position));
    }
    let mut out = variant.to_vec();
    out[position].surface = match_case(&tok.surface, replacement);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{FuzzInput, StopwordSet};

    fn lex(tsv: &str) -> Lexicon {
        Lexicon::parse(tsv, Path::new("lex.tsv")).unwrap()
    }

    fn emb(text: &str) -> EmbeddingTable {
        EmbeddingTable::parse(text, Path::new("emb.txt")).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(PerturbError::ZeroVector));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(PerturbError::LengthMismatch(1, 2)));
    }

    #[test]
    fn lexicon_union_and_case() {
        let l = lex("# comment\nVertrag\tsyn\tAbkommen\nvertrag\tnear\tAbkommen\nvertrag\thyp\tDokument\n");
        let entries = l.lookup("VERTRAG");
        assert_eq!(entries.len(), 2);
        let abk = entries.iter().find(|e| e.candidate == "Abkommen").unwrap();
        assert_eq!(
            abk.relations.iter().copied().collect::<Vec<_>>(),
            vec![Relation::Synonym, Relation::NearSynonym]
        );
        assert!(lex("").is_empty());
    }

    #[test]
    fn lexicon_errors_carry_line_numbers() {
        let err = Lexicon::parse("a\tsyn\tb\nbad line\n", Path::new("x.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Lexicon::parse("a\tfoo\tb\n", Path::new("x.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Lexicon::parse("a\tsyn\tb c\n", Path::new("x.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn embeddings_header_duplicates_and_mismatch() {
        let t = emb("3 2\na 1 0\nb 0 1\na 2 0\n");
        assert_eq!(t.dim, 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.get("a").unwrap(), &[2.0, 0.0]);
        assert_eq!(t.get("A").unwrap(), &[2.0, 0.0]);

        let err = EmbeddingTable::parse("a 1 0\nodd 1 2 3\n", Path::new("e")).unwrap_err();
        assert!(err.to_string().contains("odd"), "{err}");
        assert!(EmbeddingTable::parse("a 1 nan\n", Path::new("e")).is_err());
    }

    #[test]
    fn absent_word_yields_empty_set() {
        let set = candidate_set("missing", &lex("a\tsyn\tb\n"), &emb("a 1 0\nb 0 1\n"), 10);
        assert!(set.is_empty());
    }

    #[test]
    fn top_k_by_similarity() {
        let l = lex("w\tsyn\tfar\nw\tsyn\tnear\n");
        let t = emb("w 1 0\nnear 0.9 0.1\nfar 0.2 0.9\n");
        let set = candidate_set("w", &l, &t, 1);
        assert_eq!(set.words().collect::<Vec<_>>(), ["near"]);
        let all = candidate_set("w", &l, &t, 10);
        assert_eq!(all.words().collect::<Vec<_>>(), ["near", "far"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let l = lex("w\tsyn\tzeta\nw\tsyn\talpha\n");
        let t = emb("w 1 0\nzeta 0.5 0.5\nalpha 0.5 0.5\n");
        let set = candidate_set("w", &l, &t, 10);
        assert_eq!(set.words().collect::<Vec<_>>(), ["alpha", "zeta"]);
    }

    #[test]
    fn candidates_without_vectors_are_dropped() {
        let l = lex("w\tsyn\tknown\nw\tsyn\tunknown\nw\tsyn\tzero\nw\tsyn\tW\n");
        let t = emb("w 1 0\nknown 1 1\nzero 0 0\n");
        let set = candidate_set("w", &l, &t, 10);
        assert_eq!(set.words().collect::<Vec<_>>(), ["known"]);
    }

    #[test]
    fn unembedded_original_uses_relation_priority() {
        let l = lex("w\thyp\taaa\nw\tnear\tbbb\nw\tsyn\tccc\nw\tsyn\tddd\n");
        let set = candidate_set("w", &l, &EmbeddingTable::default(), 3);
        assert_eq!(set.words().collect::<Vec<_>>(), ["ccc", "ddd", "bbb"]);
        assert!(set.candidates.iter().all(|c| c.similarity.is_none()));
    }

    #[test]
    fn substitute_changes_one_token() {
        let stops = StopwordSet::new("en", ["the"]);
        let input = FuzzInput::new("s", "", "The Contract is signed.", "x", &stops);
        let toks = input.tokens();
        let out = substitute(&toks, 1, "agreement").unwrap();
        assert_eq!(out[1].surface, "Agreement");
        let diff = toks.iter().zip(&out).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 1);
        assert_eq!(toks[1].surface, "Contract");
        assert_eq!(substitute(&toks, 0, "a"), Err(PerturbError::NotPerturbable(0)));
        assert_eq!(substitute(&toks, 4, "a"), Err(PerturbError::NotPerturbable(4)));
        assert_eq!(substitute(&toks, 99, "a"), Err(PerturbError::NotPerturbable(99)));
    }
}
