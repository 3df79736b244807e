//! Search objective: BLEU-based loss for generation targets and
//! label-confidence loss for classification targets.
//!
//! Losses live in `[0, 1]` and grow as the target output degrades, so a
//! larger loss is always a better fuzzing result.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize_surfaces, FuzzInput};
use crate::threat::{ResponseKind, ThreatResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("invalid BLEU configuration: {0}")]
    InvalidConfig(String),
    #[error("response kind does not match the objective: expected {expected}")]
    KindMismatch { expected: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// Any zero n-gram precision makes the score zero.
    Strict,
    /// Zero precisions are replaced by `eps` before taking the log.
    Floor(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub weights: Vec<f64>,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::uniform(4, Smoothing::Floor(1e-9)).expect("default BLEU config is valid")
    }
}

impl BleuConfig {
    pub fn uniform(max_n: usize, smoothing: Smoothing) -> Result<Self, ObjectiveError> {
        if max_n == 0 {
            return Err(ObjectiveError::InvalidConfig("max_n must be at least 1".into()));
        }
        Self::new(max_n, vec![1.0 / max_n as f64; max_n], smoothing)
    }

    pub fn new(max_n: usize, weights: Vec<f64>, smoothing: Smoothing) -> Result<Self, ObjectiveError> {
        let cfg = Self {
            max_n,
            weights,
            smoothing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::InvalidConfig(m));
        if self.max_n == 0 {
            return bad("max_n must be at least 1".into());
        }
        if self.weights.len() != self.max_n {
            return bad(format!("expected {} weights, got {}", self.max_n, self.weights.len()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be non-negative".into());
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("weights sum to {sum}, not 1"));
        }
        if let Smoothing::Floor(eps) = self.smoothing {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad("floor epsilon must be positive".into());
            }
        }
        Ok(())
    }
}

/// Clipped n-gram precision of `hypothesis` against `reference`.
pub fn ngram_precision<S: AsRef<str>>(hypothesis: &[S], reference: &[S], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if hypothesis.len() < n {
        return 0.0;
    }
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let refs: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
    for g in refs.windows(n) {
        *ref_counts.entry(g).or_default() += 1;
    }
    let mut hyp_counts: HashMap<&[&str], usize> = HashMap::new();
    for g in hyp.windows(n) {
        *hyp_counts.entry(g).or_default() += 1;
    }
    let clipped: usize = hyp_counts
        .iter()
        .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    clipped as f64 / (hyp.len() - n + 1) as f64
}

pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence BLEU over [`tokenize_surfaces`] tokens, case-sensitive.
///
/// Orders above the reference length are dropped and the remaining weights
/// renormalized, so any non-empty text scores 1 against itself.
pub fn bleu(hypothesis: &str, reference: &str, cfg: &BleuConfig) -> Result<f64, ObjectiveError> {
    let hyp: Vec<String> = tokenize_surfaces(hypothesis).into_iter().map(|(s, _)| s).collect();
    let refs: Vec<String> = tokenize_surfaces(reference).into_iter().map(|(s, _)| s).collect();
    if refs.is_empty() {
        return Err(ObjectiveError::EmptyReference);
    }
    let bp = brevity_penalty(hyp.len(), refs.len());
    if bp == 0.0 {
        return Ok(0.0);
    }
    let order = cfg.max_n.min(refs.len());
    let weight_sum: f64 = cfg.weights[..order].iter().sum();
    let mut log_sum = 0.0;
    for n in 1..=order {
        let w = if weight_sum > 0.0 { cfg.weights[n - 1] / weight_sum } else { 1.0 / order as f64 };
        let p = ngram_precision(&hyp, &refs, n);
        let p = match cfg.smoothing {
            Smoothing::Strict if p == 0.0 => return Ok(0.0),
            Smoothing::Strict => p,
            Smoothing::Floor(eps) => p.max(eps),
        };
        log_sum += w * p.ln();
    }
    Ok((bp * log_sum.exp()).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub value: f64,
    pub raw_bleu: Option<f64>,
}

impl Loss {
    pub fn from_bleu(bleu: f64) -> Self {
        Self {
            value: 1.0 - bleu,
            raw_bleu: Some(bleu),
        }
    }

    pub fn from_confidence(confidence: f64) -> Self {
        Self {
            value: (1.0 - confidence).clamp(0.0, 1.0),
            raw_bleu: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCriterion {
    BleuBelow { threshold: f64 },
    LabelFlipped,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        SuccessCriterion::BleuBelow { threshold: 0.2 }
    }
}

impl SuccessCriterion {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        match *self {
            SuccessCriterion::BleuBelow { threshold } if !(threshold > 0.0 && threshold < 1.0) => Err(
                ObjectiveError::InvalidConfig(format!("threshold {threshold} outside (0, 1)")),
            ),
            _ => Ok(()),
        }
    }
}

/// Success criterion plus the BLEU settings it is scored with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub criterion: SuccessCriterion,
    pub bleu: BleuConfig,
}

impl Objective {
    pub fn evaluate(&self, output: &ThreatResponse, reference: &str) -> Result<(Loss, bool), ObjectiveError> {
        evaluate(output, reference, &self.criterion, &self.bleu)
    }
}

/// Loss and success verdict for one response, sharing a single BLEU evaluation.
pub fn evaluate(
    output: &ThreatResponse,
    reference: &str,
    criterion: &SuccessCriterion,
    cfg: &BleuConfig,
) -> Result<(Loss, bool), ObjectiveError> {
    match (criterion, &output.kind) {
        (SuccessCriterion::BleuBelow { threshold }, ResponseKind::Generation { text }) => {
            let score = bleu(text, reference, cfg)?;
            Ok((Loss::from_bleu(score), score < *threshold))
        }
        (SuccessCriterion::LabelFlipped, ResponseKind::Classification { label, confidences }) => {
            let conf = confidences.get(reference).copied().unwrap_or(0.0);
            Ok((Loss::from_confidence(conf), label != reference))
        }
        (SuccessCriterion::BleuBelow { .. }, _) => Err(ObjectiveError::KindMismatch {
            expected: "generation",
        }),
        (SuccessCriterion::LabelFlipped, _) => Err(ObjectiveError::KindMismatch {
            expected: "classification",
        }),
    }
}

pub fn loss(
    output: &ThreatResponse,
    input: &FuzzInput,
    criterion: &SuccessCriterion,
    cfg: &BleuConfig,
) -> Result<Loss, ObjectiveError> {
    evaluate(output, &input.reference, criterion, cfg).map(|(l, _)| l)
}

pub fn is_success(
    output: &ThreatResponse,
    input: &FuzzInput,
    criterion: &SuccessCriterion,
    cfg: &BleuConfig,
) -> Result<bool, ObjectiveError> {
    evaluate(output, &input.reference, criterion, cfg).map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::StopwordSet;
    use std::collections::BTreeMap;

    fn strict4() -> BleuConfig {
        BleuConfig::uniform(4, Smoothing::Strict).unwrap()
    }

    fn gen(text: &str) -> ThreatResponse {
        ThreatResponse::generation(text)
    }

    fn seed(reference: &str) -> FuzzInput {
        FuzzInput::new("s", "Translate:", "Hallo Welt", reference, &StopwordSet::default())
    }

    #[test]
    fn clipped_unigram_precision() {
        // "the" occurs three times in the hypothesis but once in the reference.
        assert_eq!(ngram_precision(&["the", "the", "the"], &["the", "cat"], 1), 1.0 / 3.0);
        assert_eq!(ngram_precision(&["a", "b"], &["c", "d"], 1), 0.0);
        let s = ["x", "y", "z"];
        for n in 1..=3 {
            assert_eq!(ngram_precision(&s, &s, n), 1.0);
        }
        assert_eq!(ngram_precision(&s, &s, 4), 0.0);
    }

    #[test]
    fn brevity_penalty_branches() {
        assert_eq!(brevity_penalty(10, 5), 1.0);
        assert_eq!(brevity_penalty(7, 7), 1.0);
        assert!((brevity_penalty(5, 10) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(brevity_penalty(0, 3), 0.0);
    }

    #[test]
    fn bleu_extremes() {
        let cfg = BleuConfig::default();
        assert_eq!(bleu("the cat sat on the mat", "the cat sat on the mat", &cfg).unwrap(), 1.0);
        assert_eq!(bleu("a", "a", &cfg).unwrap(), 1.0);
        assert_eq!(bleu("x y z w", "a b c d", &strict4()).unwrap(), 0.0);
        assert!(bleu("x y z w", "a b c d", &cfg).unwrap() < 1e-8);
        assert_eq!(bleu("", "a b", &cfg).unwrap(), 0.0);
        assert_eq!(bleu("a b", "", &cfg), Err(ObjectiveError::EmptyReference));
    }

    #[test]
    fn short_hypothesis_is_zero_under_strict() {
        // Three tokens cannot contain a 4-gram.
        assert_eq!(bleu("the cat sat", "the cat sat on the mat", &strict4()).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(BleuConfig::new(2, vec![0.5, 0.4], Smoothing::Strict).is_err());
        assert!(BleuConfig::new(2, vec![1.0], Smoothing::Strict).is_err());
        assert!(BleuConfig::uniform(0, Smoothing::Strict).is_err());
        assert!(BleuConfig::uniform(3, Smoothing::Floor(0.0)).is_err());
        assert!(SuccessCriterion::BleuBelow { threshold: 1.0 }.validate().is_err());
    }

    #[test]
    fn generation_loss_and_success() {
        let cfg = BleuConfig::default();
        let crit = SuccessCriterion::default();
        let input = seed("hello big world today");
        let same = gen("hello big world today");
        let l = loss(&same, &input, &crit, &cfg).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.value, 1.0 - l.raw_bleu.unwrap());
        assert!(!is_success(&same, &input, &crit, &cfg).unwrap());
        assert!(is_success(&gen("nothing in common here"), &input, &crit, &cfg).unwrap());
    }

    #[test]
    fn classification_loss_and_success() {
        let crit = SuccessCriterion::LabelFlipped;
        let cfg = BleuConfig::default();
        let input = seed("positive");
        let conf = BTreeMap::from([("positive".to_string(), 0.7), ("negative".to_string(), 0.3)]);
        let resp = ThreatResponse::classification("positive", conf.clone());
        assert!((loss(&resp, &input, &crit, &cfg).unwrap().value - 0.3).abs() < 1e-12);
        assert!(!is_success(&resp, &input, &crit, &cfg).unwrap());
        let flipped = ThreatResponse::classification("negative", conf);
        assert!(is_success(&flipped, &input, &crit, &cfg).unwrap());
    }

    #[test]
    fn mismatched_kind_is_an_error() {
        let input = seed("positive");
        let err = loss(&gen("x"), &input, &SuccessCriterion::LabelFlipped, &BleuConfig::default());
        assert!(matches!(err, Err(ObjectiveError::KindMismatch { .. })));
    }
}
