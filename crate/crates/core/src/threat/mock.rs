//! Deterministic stand-ins for live systems: a dictionary translator with
//! planted faults and a keyword-vote classifier.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ResponseKind, ThreatError, ThreatModel};
use crate::error::Error;
use crate::text::{render_tokens, tokenize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCondition {
    /// Every listed token is present.
    AllOf(Vec<String>),
    /// At least `m` distinct tokens from the set are present.
    AtLeast { m: usize, of: Vec<String> },
}

impl TriggerCondition {
    fn matches(&self, present: &HashSet<String>) -> bool {
        match self {
            TriggerCondition::AllOf(words) => words.iter().all(|w| present.contains(&w.to_lowercase())),
            TriggerCondition::AtLeast { m, of } => {
                let distinct: HashSet<String> = of.iter().map(|w| w.to_lowercase()).collect();
                distinct.iter().filter(|w| present.contains(*w)).count() >= *m
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Keep only the first `keep` output tokens.
    Truncate { keep: usize },
    Reverse,
    Phrase(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub when: TriggerCondition,
    pub effect: Corruption,
}

fn default_separator() -> String {
    ":".to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslatorSpec {
    /// Token that ends the prompt; only what follows it is translated.
    #[serde(default = "default_separator")]
    pub separator: String,
    pub dictionary: BTreeMap<String, String>,
    #[serde(default)]
    pub triggers: Vec<TriggerRule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub labels: Vec<String>,
    pub weights: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub bias: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockSpec {
    Translator(TranslatorSpec),
    Classifier(ClassifierSpec),
}

impl MockSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn build(self) -> Arc<dyn ThreatModel> {
        match self {
            MockSpec::Translator(s) => Arc::new(MockTranslator::new(s)),
            MockSpec::Classifier(s) => Arc::new(MockClassifier::new(s)),
        }
    }
}

/// Word-by-word dictionary translator. A matching trigger rule corrupts the
/// output; unknown words pass through unchanged.
#[derive(Debug)]
pub struct MockTranslator {
    spec: TranslatorSpec,
    dictionary: BTreeMap<String, String>,
    calls: AtomicU64,
}

impl MockTranslator {
    pub fn new(spec: TranslatorSpec) -> Self {
        let dictionary = spec
            .dictionary
            .iter()
            .map(|(k, v)| (k.to_lowercase(), v.clone()))
            .collect();
        Self {
            spec,
            dictionary,
            calls: AtomicU64::new(0),
        }
    }

    /// Number of times the model was actually invoked.
    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn translate(&self, input: &str) -> String {
        let tokens = tokenize(input);
        let present: HashSet<String> = tokens.iter().map(|t| t.surface.to_lowercase()).collect();
        let start = tokens
            .iter()
            .position(|t| t.surface == self.spec.separator)
            .map_or(0, |i| i + 1);

        let mut out = Vec::new();
        for tok in &tokens[start..] {
            match self.dictionary.get(&tok.surface.to_lowercase()) {
                Some(target) if !tok.is_punct => out.extend(tokenize(target)),
                _ => out.push(tok.clone()),
            }
        }

        if let Some(rule) = self.spec.triggers.iter().find(|r| r.when.matches(&present)) {
            match &rule.effect {
                Corruption::Truncate { keep } => out.truncate(*keep),
                Corruption::Reverse => out.reverse(),
                Corruption::Phrase(p) => return p.clone(),
            }
        }
        render_tokens(&out)
    }
}

impl ThreatModel for MockTranslator {
    fn respond(&self, input: &str) -> Result<ResponseKind, ThreatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ResponseKind::Generation {
            text: self.translate(input),
        })
    }
}

/// Keyword-vote classifier with softmax confidences over the vote scores.
#[derive(Debug)]
pub struct MockClassifier {
    spec: ClassifierSpec,
    calls: AtomicU64,
}

impl MockClassifier {
    pub fn new(spec: ClassifierSpec) -> Self {
        Self {
            spec,
            calls: AtomicU64::new(0),
        }
    }

    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn classify(&self, input: &str) -> (String, BTreeMap<String, f64>) {
        let words: Vec<String> = tokenize(input).into_iter().map(|t| t.surface.to_lowercase()).collect();
        let scores: Vec<f64> = self
            .spec
            .labels
            .iter()
            .map(|label| {
                let weights = self.spec.weights.get(label);
                let votes: f64 = words
                    .iter()
                    .filter_map(|w| weights.and_then(|m| m.get(w)))
                    .sum();
                self.spec.bias.get(label).copied().unwrap_or(0.0) + votes
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let confidences = self
            .spec
            .labels
            .iter()
            .zip(&exps)
            .map(|(l, e)| (l.clone(), e / total))
            .collect();
        // First label wins ties.
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, s)| if *s > scores[best] { i } else { best });
        (self.spec.labels[best].clone(), confidences)
    }
}

impl ThreatModel for MockClassifier {
    fn respond(&self, input: &str) -> Result<ResponseKind, ThreatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (label, confidences) = self.classify(input);
        Ok(ResponseKind::Classification { label, confidences })
    }
}
