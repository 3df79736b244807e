//! Per-seed reports and run-level evaluation metrics.
//!
//! Averages other than the success rate are taken over successful reports
//! only and are `None` when no seed succeeded.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::search::{SearchState, Substitution, Variant};
use crate::text::{render, tokenize_surfaces, FuzzInput};
use crate::threat::{duration_secs, QueryLedger};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub temperature: f64,
    pub width: usize,
    /// Absent on iterations that stopped before the width update.
    pub entropy: Option<f64>,
    pub best_loss: f64,
}

impl TraceEntry {
    pub(crate) fn new(state: &SearchState, entropy: Option<f64>) -> Self {
        Self {
            iter: state.iter,
            temperature: state.temperature,
            width: state.width,
            entropy,
            best_loss: state.best.loss.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed_id: String,
    pub success: bool,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The run was cut short because the threat model could not be reached.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub threat_failure: bool,
    /// The rendered seed input.
    pub original: String,
    /// Expected output, or the original label for classification runs.
    pub reference: String,
    pub final_variant: String,
    pub final_loss: f64,
    pub final_bleu: Option<f64>,
    pub substitutions: Vec<Substitution>,
    pub seed_tokens: usize,
    pub perturbable: usize,
    pub loss_trace: Vec<TraceEntry>,
    pub queries: QueryLedger,
    #[serde(rename = "wall_time_secs", with = "duration_secs")]
    pub wall_time: Duration,
}

impl FuzzReport {
    pub fn new(seed: &FuzzInput) -> Self {
        let original = render(seed);
        Self {
            seed_id: seed.seed_id.clone(),
            success: false,
            aborted: false,
            error: None,
            threat_failure: false,
            final_variant: original.clone(),
            original,
            reference: seed.reference.clone(),
            final_loss: 0.0,
            final_bleu: None,
            substitutions: Vec::new(),
            seed_tokens: seed.len(),
            perturbable: 0,
            loss_trace: Vec::new(),
            queries: QueryLedger::default(),
            wall_time: Duration::ZERO,
        }
    }

    pub(crate) fn record_final(&mut self, v: &Variant) {
        self.success = v.success;
        self.final_variant = v.text();
        self.final_loss = v.loss.value;
        self.final_bleu = v.loss.raw_bleu;
        let mut subs = v.substitutions.clone();
        subs.sort_by_key(|s| s.position);
        self.substitutions = subs;
    }

    pub(crate) fn push_trace(&mut self, entry: TraceEntry) {
        self.loss_trace.push(entry);
    }

    pub fn iterations(&self) -> usize {
        self.loss_trace.len()
    }
}

/// Removes every `wall_time_secs` field, leaving only reproducible content.
pub fn strip_wall_clock(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("wall_time_secs");
            map.values_mut().for_each(strip_wall_clock);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_clock),
        _ => {}
    }
}

pub fn write_reports(path: impl AsRef<Path>, reports: &[FuzzReport]) -> Result<(), Error> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in reports {
        let line = serde_json::to_string(r).expect("reports serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<FuzzReport>, Error> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Which ledger counter feeds the average-queries metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryCounter {
    #[default]
    Logical,
    Invocations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub n_suc: usize,
    pub s_rate: f64,
    pub c_rate: Option<f64>,
    pub ppl: Option<f64>,
    pub q_n: Option<f64>,
    pub q_n_logical: Option<f64>,
    pub q_n_invocations: Option<f64>,
    pub t_o: Option<f64>,
    pub g_e: Option<f64>,
}

pub fn s_rate(reports: &[FuzzReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    100.0 * reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64
}

fn mean_over_successes(reports: &[FuzzReport], f: impl Fn(&FuzzReport) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = reports.iter().filter(|r| r.success).filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean percentage of seed tokens changed, over successful reports.
pub fn c_rate(reports: &[FuzzReport]) -> Option<f64> {
    mean_over_successes(reports, |r| {
        (r.seed_tokens > 0).then(|| 100.0 * r.substitutions.len() as f64 / r.seed_tokens as f64)
    })
}

/// Next-word probability model used for perplexity.
pub trait LanguageScorer: Send + Sync {
    /// `P(word | history)`; must be positive.
    fn prob(&self, history: &[String], word: &str) -> f64;
}

/// `exp(-(1/n) * sum(ln p(w_i | w_<i)))` over the text's tokens; 1 for empty text.
pub fn perplexity(text: &str, scorer: &dyn LanguageScorer) -> f64 {
    let words: Vec<String> = tokenize_surfaces(text).into_iter().map(|(s, _)| s).collect();
    if words.is_empty() {
        return 1.0;
    }
    let nll: f64 = (0..words.len())
        .map(|i| -scorer.prob(&words[..i], &words[i]).ln())
        .sum();
    (nll / words.len() as f64).exp()
}

/// Interpolated bigram model with add-alpha smoothing on both orders.
///
/// Tokens are lowercased; unseen words share one extra vocabulary slot.
#[derive(Clone, Debug)]
pub struct BigramScorer {
    pub alpha: f64,
    /// Weight of the bigram estimate; the unigram estimate gets the rest.
    pub lambda: f64,
    unigrams: HashMap<String, f64>,
    bigrams: HashMap<(String, String), f64>,
    histories: HashMap<String, f64>,
    total: f64,
}

impl BigramScorer {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_LAMBDA: f64 = 0.7;

    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = Self {
            alpha: Self::DEFAULT_ALPHA,
            lambda: Self::DEFAULT_LAMBDA,
            unigrams: HashMap::new(),
            bigrams: HashMap::new(),
            histories: HashMap::new(),
            total: 0.0,
        };
        for line in lines {
            let words: Vec<String> = tokenize_surfaces(line).into_iter().map(|(w, _)| w.to_lowercase()).collect();
            for w in &words {
                *s.unigrams.entry(w.clone()).or_default() += 1.0;
                s.total += 1.0;
            }
            for pair in words.windows(2) {
                *s.bigrams.entry((pair[0].clone(), pair[1].clone())).or_default() += 1.0;
                *s.histories.entry(pair[0].clone()).or_default() += 1.0;
            }
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::train(text.lines()))
    }

    fn vocab(&self) -> f64 {
        self.unigrams.len() as f64 + 1.0
    }

    fn unigram(&self, w: &str) -> f64 {
        let c = self.unigrams.get(w).copied().unwrap_or(0.0);
        (c + self.alpha) / (self.total + self.alpha * self.vocab())
    }
}

impl LanguageScorer for BigramScorer {
    fn prob(&self, history: &[String], word: &str) -> f64 {
        let w = word.to_lowercase();
        let uni = self.unigram(&w);
        let Some(prev) = history.last() else {
            return uni;
        };
        let prev = prev.to_lowercase();
        let c_pair = self.bigrams.get(&(prev.clone(), w)).copied().unwrap_or(0.0);
        let c_hist = self.histories.get(&prev).copied().unwrap_or(0.0);
        let bi = (c_pair + self.alpha) / (c_hist + self.alpha * self.vocab());
        self.lambda * bi + (1.0 - self.lambda) * uni
    }
}

/// External grammar checker: reads the text on stdin and prints a single
/// integer error count on stdout, exiting with status 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarChecker {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

pub fn grammar_error_hook(text: &str, checker: Option<&GrammarChecker>) -> Option<u64> {
    let checker = checker?;
    let run = || -> Result<u64, String> {
        let mut child = Command::new(&checker.command)
            .args(&checker.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string())?;
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("exited with {}", out.status));
        }
        String::from_utf8_lossy(&out.stdout)
            .trim()
            .parse::<u64>()
            .map_err(|e| e.to_string())
    };
    match run() {
        Ok(n) => Some(n),
        Err(e) => {
            log::warn!("grammar checker `{}` failed: {e}", checker.command);
            None
        }
    }
}

#[derive(Clone, Copy, Default)]
pub struct SummaryOptions<'a> {
    pub scorer: Option<&'a dyn LanguageScorer>,
    pub counter: QueryCounter,
    pub grammar: Option<&'a GrammarChecker>,
}

pub fn summarize(reports: &[FuzzReport], opts: SummaryOptions<'_>) -> RunSummary {
    let n_suc = reports.iter().filter(|r| r.success).count();
    let q_n_logical = mean_over_successes(reports, |r| Some(r.queries.logical_queries as f64));
    let q_n_invocations = mean_over_successes(reports, |r| Some(r.queries.model_invocations as f64));
    RunSummary {
        n: reports.len(),
        n_suc,
        s_rate: s_rate(reports),
        c_rate: c_rate(reports),
        ppl: opts
            .scorer
            .and_then(|s| mean_over_successes(reports, |r| Some(perplexity(&r.final_variant, s)))),
        q_n: match opts.counter {
            QueryCounter::Logical => q_n_logical,
            QueryCounter::Invocations => q_n_invocations,
        },
        q_n_logical,
        q_n_invocations,
        t_o: mean_over_successes(reports, |r| Some(r.wall_time.as_secs_f64())),
        g_e: opts
            .grammar
            .and_then(|g| mean_over_successes(reports, |r| grammar_error_hook(&r.final_variant, Some(g)).map(|n| n as f64))),
    }
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &impl Serialize) -> Result<(), Error> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One CSV row per labelled summary.
pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[(String, RunSummary)]) -> Result<(), Error> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["label", "n", "n_suc", "s_rate", "c_rate", "ppl", "q_n", "q_n_invocations", "t_o", "g_e"])
        .map_err(io)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (label, s) in rows {
        w.write_record([
            label.clone(),
            s.n.to_string(),
            s.n_suc.to_string(),
            format!("{:.6}", s.s_rate),
            fmt(s.c_rate),
            fmt(s.ppl),
            fmt(s.q_n),
            fmt(s.q_n_invocations),
            fmt(s.t_o),
            fmt(s.g_e),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
