//! Word importance ranking: masks each perturbable word in turn and orders
//! positions by the softmax-weighted loss change the mask causes.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::objective::{Loss, Objective};
use crate::text::{render_tokens, FuzzInput};
use crate::threat::Session;

pub const MASK_TOKEN: &str = "[UNK]";

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceRanking {
    pub scores: BTreeMap<usize, f64>,
    /// Positions by descending score, ties by ascending index.
    pub order: Vec<usize>,
    /// Loss of the unmasked seed.
    pub baseline: Loss,
    pub baseline_success: bool,
}

/// Queries `text` and scores the response against `reference`.
pub(crate) fn probe(
    session: &mut Session<'_>,
    text: &str,
    reference: &str,
    objective: &Objective,
) -> Result<(Loss, bool), Error> {
    let resp = session.query(text)?;
    Ok(objective.evaluate(&resp, reference)?)
}

/// `softmax(delta)_i * delta_i` for every entry.
pub fn importance_scores(deltas: &[f64]) -> Vec<f64> {
    if deltas.is_empty() {
        return Vec::new();
    }
    let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = deltas.iter().map(|d| (d - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    deltas.iter().zip(&exps).map(|(d, e)| e / total * d).collect()
}

/// Sorts positions by score descending; equal scores keep ascending index.
pub fn order_by_score(positions: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut pairs: Vec<(usize, f64)> = positions.iter().copied().zip(scores.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.into_iter().map(|(i, _)| i).collect()
}

/// Issues one query for the seed and one per masked position.
pub fn rank(
    input: &FuzzInput,
    perturbable: &[usize],
    session: &mut Session<'_>,
    objective: &Objective,
) -> Result<ImportanceRanking, Error> {
    let tokens = input.tokens();
    let (baseline, baseline_success) = probe(session, &render_tokens(&tokens), &input.reference, objective)?;
    let mut deltas = Vec::with_capacity(perturbable.len());
    for &i in perturbable {
        let mut masked = tokens.clone();
        masked[i].surface = MASK_TOKEN.to_string();
        let (loss, _) = probe(session, &render_tokens(&masked), &input.reference, objective)?;
        deltas.push(loss.value - baseline.value);
    }
    let scores = importance_scores(&deltas);
    Ok(ImportanceRanking {
        order: order_by_score(perturbable, &scores),
        scores: perturbable.iter().copied().zip(scores).collect(),
        baseline,
        baseline_success,
    })
}
