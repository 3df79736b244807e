//! The beam-annealing fuzzing loop.
//!
//! Each iteration perturbs one position (in word-importance order) across the
//! whole beam, admits candidates by simulated annealing against the seed's
//! loss, adapts the beam width to the entropy of the admitted losses, carries
//! the best variant over with probability `p_e`, and fills the rest of the
//! beam by loss-weighted sampling without replacement.
//!
//! Random draws come from the per-run stream in a fixed order: one draw per
//! candidate with a non-positive loss delta (in candidate order), then one
//! elitism draw, then one draw per soft-sampled slot.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{FuzzReport, TraceEntry};
use crate::objective::{Loss, Objective};
use crate::perturb::{candidate_set, substitute, CandidateSet, EmbeddingTable, Lexicon};
use crate::text::{filter_perturbable, render_tokens, FuzzInput, StopwordSet, Token};
use crate::threat::Session;
use crate::wir::{self, probe};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    /// Admit only candidates that strictly increase the loss over the seed.
    pub disable_sa: bool,
    /// Keep the beam width fixed at `b0`.
    pub disable_entropy_pruning: bool,
    /// Single-path greedy search: width 1, keep only the best candidate.
    pub greedy_mode: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoSa,
    NoEp,
    NoSaEp,
    Greedy,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::NoSa,
        AblationMode::NoEp,
        AblationMode::NoSaEp,
        AblationMode::Greedy,
    ];

    pub fn flags(self) -> Ablation {
        let (disable_sa, disable_entropy_pruning, greedy_mode) = match self {
            AblationMode::Full => (false, false, false),
            AblationMode::NoSa => (true, false, false),
            AblationMode::NoEp => (false, true, false),
            AblationMode::NoSaEp => (true, true, false),
            AblationMode::Greedy => (false, false, true),
        };
        Ablation {
            disable_sa,
            disable_entropy_pruning,
            greedy_mode,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoSa => "no_sa",
            AblationMode::NoEp => "no_ep",
            AblationMode::NoSaEp => "no_sa_ep",
            AblationMode::Greedy => "greedy",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown ablation mode `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub b0: usize,
    pub b_min: usize,
    pub b_max: usize,
    pub sigma: usize,
    pub p0_elite: f64,
    pub tem0: f64,
    pub ablation: Ablation,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            epsilon: 1e-10,
            b0: 2,
            b_min: 2,
            b_max: 6,
            sigma: 1,
            p0_elite: 0.9,
            tem0: 1.0,
            ablation: Ablation::default(),
        }
    }
}

impl SearchParams {
    pub fn with_mode(mut self, mode: AblationMode) -> Self {
        self.ablation = mode.flags();
        self
    }

    /// The named mode these flags correspond to, if any.
    pub fn mode(&self) -> Option<AblationMode> {
        AblationMode::ALL.into_iter().find(|m| m.flags() == self.ablation)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.b_min <= self.b0 && self.b0 <= self.b_max) {
            return bad("beam widths must satisfy b_min <= b0 <= b_max");
        }
        if self.b_min == 0 {
            return bad("b_min must be at least 1");
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return bad("gamma must be positive");
        }
        if !(0.0..=1.0).contains(&self.p0_elite) {
            return bad("p0_elite must lie in [0, 1]");
        }
        if self.tem0.is_nan() || self.tem0 <= 0.0 {
            return bad("tem0 must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return bad("epsilon must be non-negative");
        }
        Ok(())
    }

    /// Plain beam search: no annealing, fixed width, top-b selection.
    fn is_beam_search(&self) -> bool {
        self.ablation.disable_sa && self.ablation.disable_entropy_pruning
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub original: String,
    pub replacement: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub tokens: Vec<Token>,
    pub loss: Loss,
    pub success: bool,
    pub substitutions: Vec<Substitution>,
}

impl Variant {
    pub fn text(&self) -> String {
        render_tokens(&self.tokens)
    }
}

/// Loop state between iterations.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub beam: Vec<Variant>,
    pub width: usize,
    pub temperature: f64,
    pub iter: usize,
    pub best: Variant,
}

/// Logarithmic cooling: `tem0 / (1 + gamma * ln(1 + iter))`.
pub fn cool(iter: usize, params: &SearchParams) -> f64 {
    params.tem0 / (1.0 + params.gamma * (1.0 + iter as f64).ln())
}

/// Annealing admission. Improvements are always accepted without a draw.
pub fn sa_accept<R: Rng + ?Sized>(delta: f64, temperature: f64, rng: &mut R) -> bool {
    debug_assert!(temperature > 0.0);
    if delta > 0.0 {
        return true;
    }
    rng.random::<f64>() < (delta / temperature).exp()
}

/// Shannon entropy of the losses normalized into a distribution.
pub fn beam_entropy(losses: &[f64], epsilon: f64) -> f64 {
    assert!(!losses.is_empty(), "entropy of an empty beam");
    let total: f64 = losses.iter().sum();
    let n = losses.len() as f64;
    let h: f64 = losses
        .iter()
        .map(|l| if total > 0.0 { l / total } else { 1.0 / n })
        .map(|p| -p * (p + epsilon).ln())
        .sum();
    h.max(0.0)
}

/// Entropy-driven width update, rounded half-up and clamped to `[b_min, b_max]`.
pub fn update_width(b_t: usize, entropy: f64, params: &SearchParams) -> usize {
    if params.ablation.disable_entropy_pruning {
        return b_t;
    }
    let b = b_t as f64;
    let grown = b * (1.0 + entropy / params.b_max as f64);
    let raw = (params.b_min as f64).max((params.b_max as f64).min(grown).min(b + params.sigma as f64));
    ((raw + 0.5).floor() as usize).clamp(params.b_min, params.b_max)
}

/// Probability of carrying the global best into the next beam.
pub fn elite_probability(best_loss: f64, beam_losses: &[f64], p0: f64) -> f64 {
    let max = beam_losses.iter().copied().fold(best_loss, f64::max);
    let total: f64 = beam_losses.iter().map(|l| (l - max).exp()).sum();
    let p_star = ((best_loss - max).exp() / total).min(1.0);
    p0 + (1.0 - p0) * p_star
}

/// Indices drawn without replacement, each with weight `exp(loss)`.
pub fn soft_sample_indices<R: Rng + ?Sized>(losses: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    if count >= losses.len() {
        return (0..losses.len()).collect();
    }
    let mut remaining: Vec<usize> = (0..losses.len()).collect();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let max = remaining.iter().map(|&i| losses[i]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = remaining.iter().map(|&i| (losses[i] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut slot = remaining.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if target < *w {
                slot = j;
                break;
            }
            target -= w;
        }
        picked.push(remaining.remove(slot));
    }
    picked
}

pub fn soft_sample<R: Rng + ?Sized>(pool: Vec<Variant>, count: usize, rng: &mut R) -> Vec<Variant> {
    let losses: Vec<f64> = pool.iter().map(|v| v.loss.value).collect();
    let picked = soft_sample_indices(&losses, count, rng);
    let mut slots: Vec<Option<Variant>> = pool.into_iter().map(Some).collect();
    picked.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Substitutes every candidate into every beam member at `position` and
/// scores each distinct result once.
pub fn expand(
    beam: &[Variant],
    position: usize,
    candidates: &CandidateSet,
    session: &mut Session<'_>,
    reference: &str,
    objective: &Objective,
) -> Result<Vec<Variant>, Error> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for member in beam {
        for word in candidates.words() {
            let tokens = substitute(&member.tokens, position, word)?;
            let text = render_tokens(&tokens);
            if !seen.insert(text.clone()) {
                continue;
            }
            let (loss, success) = probe(session, &text, reference, objective)?;
            let mut substitutions = member.substitutions.clone();
            substitutions.push(Substitution {
                position,
                original: member.tokens[position].surface.clone(),
                replacement: tokens[position].surface.clone(),
            });
            out.push(Variant {
                tokens,
                loss,
                success,
                substitutions,
            });
        }
    }
    Ok(out)
}

fn argmax_loss(variants: &[Variant]) -> Option<usize> {
    variants
        .iter()
        .enumerate()
        .fold(None, |best: Option<usize>, (i, v)| match best {
            Some(b) if variants[b].loss.value >= v.loss.value => Some(b),
            _ => Some(i),
        })
}

/// Everything one fuzzing run needs apart from the seed and the threat session.
pub struct Fuzzer<'a> {
    pub lexicon: &'a Lexicon,
    pub embeddings: &'a EmbeddingTable,
    pub stopwords: &'a StopwordSet,
    pub objective: &'a Objective,
    pub params: &'a SearchParams,
    pub top_k: usize,
}

impl Fuzzer<'_> {
    pub fn candidates_for(&self, seed: &FuzzInput) -> HashMap<usize, CandidateSet> {
        let tokens = seed.tokens();
        filter_perturbable(seed, self.stopwords)
            .into_iter()
            .map(|i| (i, candidate_set(&tokens[i].surface, self.lexicon, self.embeddings, self.top_k)))
            .collect()
    }

    pub fn fuzz<R: Rng + ?Sized>(&self, seed: &FuzzInput, session: &mut Session<'_>, rng: &mut R) -> FuzzReport {
        let start = Instant::now();
        let mut report = FuzzReport::new(seed);
        let outcome = self.run_loop(seed, session, rng, &mut report);
        if let Err(e) = outcome {
            report.aborted = true;
            report.threat_failure = e.is_threat();
            report.error = Some(e.to_string());
        }
        report.queries = session.ledger_snapshot();
        report.wall_time = start.elapsed();
        report
    }

    fn run_loop<R: Rng + ?Sized>(
        &self,
        seed: &FuzzInput,
        session: &mut Session<'_>,
        rng: &mut R,
        report: &mut FuzzReport,
    ) -> Result<(), Error> {
        let params = self.params;
        let greedy = params.ablation.greedy_mode;
        let perturbable = filter_perturbable(seed, self.stopwords);
        report.perturbable = perturbable.len();
        if perturbable.is_empty() {
            return Ok(());
        }
        let candidates = self.candidates_for(seed);
        let ranking = wir::rank(seed, &perturbable, session, self.objective)?;
        let seed_loss = ranking.baseline.value;
        let origin = Variant {
            tokens: seed.tokens(),
            loss: ranking.baseline,
            success: ranking.baseline_success,
            substitutions: Vec::new(),
        };
        report.record_final(&origin);

        let mut state = SearchState {
            beam: vec![origin.clone()],
            width: if greedy { 1 } else { params.b0 },
            temperature: params.tem0,
            iter: 0,
            best: origin,
        };

        while state.iter < ranking.order.len() {
            let position = ranking.order[state.iter];
            let candidate_text = expand(
                &state.beam,
                position,
                &candidates[&position],
                session,
                &seed.reference,
                self.objective,
            )?;

            let mut temp_beam: Vec<Variant> = Vec::new();
            if greedy {
                temp_beam.extend(argmax_loss(&candidate_text).map(|i| candidate_text[i].clone()));
            } else {
                for v in &candidate_text {
                    let delta = v.loss.value - seed_loss;
                    let accept = if params.ablation.disable_sa {
                        delta > 0.0
                    } else {
                        sa_accept(delta, state.temperature, rng)
                    };
                    if accept {
                        temp_beam.push(v.clone());
                    }
                }
                // Nothing admitted: keep the strongest candidate so the beam stays non-empty.
                if temp_beam.is_empty() {
                    temp_beam.extend(argmax_loss(&candidate_text).map(|i| candidate_text[i].clone()));
                }
            }

            state.iter += 1;
            for v in &temp_beam {
                if v.loss.value > state.best.loss.value {
                    state.best = v.clone();
                }
            }
            state.temperature = cool(state.iter, params);

            // Any evaluated candidate that meets the criterion ends the run,
            // including ones annealing turned away.
            let winner = if state.best.success {
                Some(state.best.clone())
            } else {
                let successes: Vec<Variant> = candidate_text.iter().filter(|v| v.success).cloned().collect();
                argmax_loss(&successes).map(|i| successes[i].clone())
            };
            if let Some(winner) = winner {
                if winner.loss.value > state.best.loss.value {
                    state.best = winner.clone();
                }
                report.push_trace(TraceEntry::new(&state, None));
                report.record_final(&winner);
                return Ok(());
            }

            if temp_beam.is_empty() {
                report.push_trace(TraceEntry::new(&state, None));
                continue;
            }
            if greedy {
                state.beam = temp_beam;
                report.push_trace(TraceEntry::new(&state, None));
                continue;
            }

            let losses: Vec<f64> = temp_beam.iter().map(|v| v.loss.value).collect();
            let entropy = beam_entropy(&losses, params.epsilon);
            state.width = update_width(state.width, entropy, params);

            if params.is_beam_search() {
                let mut ranked = temp_beam;
                ranked.sort_by(|a, b| b.loss.value.total_cmp(&a.loss.value));
                ranked.truncate(state.width);
                state.beam = ranked;
                report.push_trace(TraceEntry::new(&state, Some(entropy)));
                continue;
            }

            let best_text = state.best.text();
            let elite_in_pool = temp_beam.iter().any(|v| v.text() == best_text);
            let mut pool_losses = losses;
            if !elite_in_pool {
                pool_losses.push(state.best.loss.value);
            }
            let p_elite = elite_probability(state.best.loss.value, &pool_losses, params.p0_elite);

            let mut next = Vec::with_capacity(state.width);
            let mut budget = state.width;
            if rng.random::<f64>() < p_elite {
                next.push(state.best.clone());
                temp_beam.retain(|v| v.text() != best_text);
                budget -= 1;
            }
            next.extend(soft_sample(temp_beam, budget, rng));
            state.beam = next;
            report.push_trace(TraceEntry::new(&state, Some(entropy)));
        }

        report.record_final(&state.best);
        Ok(())
    }
}

/// Convenience wrapper matching the loop's inputs one to one.
#[allow(clippy::too_many_arguments)]
pub fn fuzz<R: Rng + ?Sized>(
    seed: &FuzzInput,
    lexicon: &Lexicon,
    embeddings: &EmbeddingTable,
    stopwords: &StopwordSet,
    session: &mut Session<'_>,
    objective: &Objective,
    params: &SearchParams,
    top_k: usize,
    rng: &mut R,
) -> FuzzReport {
    Fuzzer {
        lexicon,
        embeddings,
        stopwords,
        objective,
        params,
        top_k,
    }
    .fuzz(seed, session, rng)
}
