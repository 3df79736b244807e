use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, ThreatKind};
use super::dataset::load_dataset;
use crate::error::Error;
use crate::metrics::{
    summarize, write_reports, write_summary_csv, write_summary_json, BigramScorer, FuzzReport, GrammarChecker,
    LanguageScorer, QueryCounter, RunSummary, SummaryOptions,
};
use crate::objective::{Loss, Objective};
use crate::perturb::{substitute, CandidateSet, EmbeddingTable, Lexicon};
use crate::search::{AblationMode, Fuzzer, SearchParams, Substitution};
use crate::text::{filter_perturbable, render_tokens, FuzzInput, StopwordSet, Token};
use crate::threat::{HttpThreat, MockSpec, Session, ThreatClient};
use crate::wir::probe;

/// Per-seed RNG seed: the first eight bytes of `sha256(master || id)`.
pub fn derive_seed(master: u64, seed_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(seed_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn seed_rng(master: u64, seed_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, seed_id))
}

/// Loaded resources for one configured run.
pub struct Workbench {
    pub lexicon: Lexicon,
    pub embeddings: EmbeddingTable,
    pub stopwords: StopwordSet,
    pub objective: Objective,
    pub params: SearchParams,
    pub top_k: usize,
    pub client: ThreatClient,
    pub seeds: Vec<FuzzInput>,
    pub scorer: Option<BigramScorer>,
    pub counter: QueryCounter,
    pub grammar: Option<GrammarChecker>,
    pub oracle_cap: u64,
}

pub fn build_client(cfg: &RunConfig) -> Result<ThreatClient, Error> {
    let model = match cfg.threat {
        ThreatKind::Mock => {
            let path = cfg.mock.as_ref().ok_or_else(|| Error::Config("missing `mock`".into()))?;
            MockSpec::load(path)?.build()
        }
        ThreatKind::Http => {
            let http = cfg.http_config().ok_or_else(|| Error::Config("missing `endpoint`".into()))?;
            std::sync::Arc::new(HttpThreat::new(http))
        }
    };
    Ok(ThreatClient::new(model, cfg.cache))
}

pub fn load_stopwords(paths: &[PathBuf]) -> Result<StopwordSet, Error> {
    let mut merged: Option<StopwordSet> = None;
    for p in paths {
        let set = StopwordSet::load(p)?;
        match &mut merged {
            Some(m) => m.extend(&set),
            None => merged = Some(set),
        }
    }
    Ok(merged.unwrap_or_default())
}

impl Workbench {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let client = build_client(cfg)?;
        Self::with_client(cfg, client)
    }

    /// Like [`Workbench::from_config`] but with a caller-supplied client.
    pub fn with_client(cfg: &RunConfig, client: ThreatClient) -> Result<Self, Error> {
        let stopwords = load_stopwords(&cfg.stopwords)?;
        let seeds = load_dataset(&cfg.dataset)?
            .iter()
            .map(|r| r.to_input(&stopwords))
            .collect();
        Ok(Self {
            lexicon: Lexicon::load(&cfg.lexicon)?,
            embeddings: EmbeddingTable::load(&cfg.embeddings)?,
            stopwords,
            objective: cfg.objective()?,
            params: cfg.search_params(),
            top_k: cfg.top_k,
            client,
            seeds,
            scorer: cfg.ppl_corpus.as_ref().map(BigramScorer::load).transpose()?,
            counter: cfg.query_counter,
            grammar: cfg.grammar(),
            oracle_cap: cfg.oracle_cap,
        })
    }

    pub fn fuzzer<'a>(&'a self, params: &'a SearchParams) -> Fuzzer<'a> {
        Fuzzer {
            lexicon: &self.lexicon,
            embeddings: &self.embeddings,
            stopwords: &self.stopwords,
            objective: &self.objective,
            params,
            top_k: self.top_k,
        }
    }

    pub fn seed(&self, id: &str) -> Result<&FuzzInput, Error> {
        self.seeds
            .iter()
            .find(|s| s.seed_id == id)
            .ok_or_else(|| Error::UnknownSeed(id.to_string()))
    }

    pub fn summary_options(&self) -> SummaryOptions<'_> {
        SummaryOptions {
            scorer: self.scorer.as_ref().map(|s| s as &dyn LanguageScorer),
            counter: self.counter,
            grammar: self.grammar.as_ref(),
        }
    }

    pub fn summarize(&self, reports: &[FuzzReport]) -> RunSummary {
        summarize(reports, self.summary_options())
    }
}

/// Fuzzes every seed. Reports come back in dataset order whatever `parallel` is.
pub fn fuzz_all(bench: &Workbench, params: &SearchParams, master: u64, parallel: usize) -> Vec<FuzzReport> {
    let fuzzer = bench.fuzzer(params);
    let one = |seed: &FuzzInput| {
        let mut rng = seed_rng(master, &seed.seed_id);
        let mut session = bench.client.session();
        let report = fuzzer.fuzz(seed, &mut session, &mut rng);
        log::info!(
            "{}: success={} queries={} iterations={}",
            report.seed_id,
            report.success,
            report.queries.logical_queries,
            report.iterations()
        );
        report
    };
    if parallel <= 1 {
        return bench.seeds.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .expect("thread pool");
    pool.install(|| bench.seeds.par_iter().map(one).collect())
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutput {
    pub reports: Vec<FuzzReport>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn threat_failure(&self) -> bool {
        self.reports.iter().any(|r| r.threat_failure)
    }
}

/// Fuzzes the dataset and writes `reports.jsonl`, `summary.json` and `summary.csv`.
pub fn run(bench: &Workbench, master: u64, parallel: usize, out: &Path) -> Result<RunOutput, Error> {
    ensure_dir(out)?;
    let reports = fuzz_all(bench, &bench.params, master, parallel);
    let summary = bench.summarize(&reports);
    write_reports(out.join("reports.jsonl"), &reports)?;
    write_summary_json(out.join("summary.json"), &summary)?;
    write_summary_csv(out.join("summary.csv"), &[(bench.params.mode().map_or_else(|| "custom".to_string(), |m| m.to_string()), summary.clone())])?;
    Ok(RunOutput { reports, summary })
}

/// Re-queries each successful variant against `bench`'s threat model and
/// recomputes success. Unsuccessful source reports are carried over as failures.
pub fn replay(bench: &Workbench, source: &[FuzzReport], out: &Path) -> Result<RunOutput, Error> {
    ensure_dir(out)?;
    let mut reports = Vec::with_capacity(source.len());
    for r in source {
        let mut rep = r.clone();
        rep.loss_trace.clear();
        if r.success {
            let mut session = bench.client.session();
            match probe(&mut session, &r.final_variant, &r.reference, &bench.objective) {
                Ok((loss, success)) => {
                    rep.success = success;
                    rep.final_loss = loss.value;
                    rep.final_bleu = loss.raw_bleu;
                }
                Err(e) => {
                    rep.success = false;
                    rep.aborted = true;
                    rep.threat_failure = e.is_threat();
                    rep.error = Some(e.to_string());
                }
            }
            rep.queries = session.ledger_snapshot();
        }
        reports.push(rep);
    }
    let summary = bench.summarize(&reports);
    write_reports(out.join("replay.jsonl"), &reports)?;
    write_summary_json(out.join("replay_summary.json"), &summary)?;
    Ok(RunOutput { reports, summary })
}

/// Runs every ablation mode over the same seeds with the same per-seed RNG seeds.
pub fn ablate(
    bench: &Workbench,
    modes: &[AblationMode],
    master: u64,
    parallel: usize,
    out: &Path,
) -> Result<BTreeMap<String, RunOutput>, Error> {
    ensure_dir(out)?;
    let mut results = BTreeMap::new();
    let mut rows = Vec::new();
    for &mode in modes {
        let params = bench.params.clone().with_mode(mode);
        let reports = fuzz_all(bench, &params, master, parallel);
        let summary = bench.summarize(&reports);
        write_reports(out.join(format!("reports_{mode}.jsonl")), &reports)?;
        rows.push((mode.to_string(), summary.clone()));
        results.insert(mode.to_string(), RunOutput { reports, summary });
    }
    write_summary_csv(out.join("ablation.csv"), &rows)?;
    let json: BTreeMap<&String, &RunSummary> = results.iter().map(|(k, v)| (k, &v.summary)).collect();
    write_summary_json(out.join("ablation.json"), &json)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub seed_id: String,
    pub best_variant: String,
    pub best_loss: f64,
    pub best_substitutions: Vec<Substitution>,
    pub any_success: bool,
    pub success_count: u64,
    pub evaluated: u64,
}

/// Number of variants with between one and `max_subs` substitutions.
fn enumeration_size(sizes: &[usize], max_subs: usize) -> u128 {
    // counts[k] = variants with exactly k substitutions over the positions seen so far.
    let mut counts = vec![0u128; max_subs + 1];
    counts[0] = 1;
    for &s in sizes {
        for k in (1..=max_subs).rev() {
            counts[k] = counts[k].saturating_add(counts[k - 1].saturating_mul(s as u128));
        }
    }
    counts[1..].iter().fold(0u128, |a, &b| a.saturating_add(b))
}

/// Exhaustively scores every variant with at most `max_subs` substitutions
/// (1 or 2) over the seed's candidate sets. The unmodified seed is included.
pub fn brute_force_oracle(bench: &Workbench, seed: &FuzzInput, max_subs: usize) -> Result<OracleResult, Error> {
    if !(1..=2).contains(&max_subs) {
        return Err(Error::Config("max_subs must be 1 or 2".into()));
    }
    let fuzzer = bench.fuzzer(&bench.params);
    let candidates = fuzzer.candidates_for(seed);
    let positions = filter_perturbable(seed, &bench.stopwords);
    let sizes: Vec<usize> = positions.iter().map(|p| candidates[p].len()).collect();
    let required = enumeration_size(&sizes, max_subs) + 1;
    if required > bench.oracle_cap as u128 {
        return Err(Error::EnumerationCap {
            required,
            cap: bench.oracle_cap as u128,
        });
    }

    let tokens = seed.tokens();
    let mut session = bench.client.session();
    let mut acc = OracleAcc::default();
    acc.score(&mut session, seed, &bench.objective, &tokens, Vec::new())?;
    for (a, &pa) in positions.iter().enumerate() {
        for wa in candidates[&pa].words() {
            let ta = substitute(&tokens, pa, wa)?;
            let sa = sub(&tokens, &ta, pa);
            acc.score(&mut session, seed, &bench.objective, &ta, vec![sa.clone()])?;
            if max_subs < 2 {
                continue;
            }
            for &pb in &positions[a + 1..] {
                for wb in candidates[&pb].words() {
                    let tb = substitute(&ta, pb, wb)?;
                    let sb = sub(&ta, &tb, pb);
                    acc.score(&mut session, seed, &bench.objective, &tb, vec![sa.clone(), sb])?;
                }
            }
        }
    }
    let best = acc.best.expect("seed itself is scored");
    Ok(OracleResult {
        seed_id: seed.seed_id.clone(),
        best_variant: best.0,
        best_loss: best.1.value,
        best_substitutions: best.2,
        any_success: acc.successes > 0,
        success_count: acc.successes,
        evaluated: acc.evaluated,
    })
}

fn sub(before: &[Token], after: &[Token], position: usize) -> Substitution {
    Substitution {
        position,
        original: before[position].surface.clone(),
        replacement: after[position].surface.clone(),
    }
}

#[derive(Default)]
struct OracleAcc {
    best: Option<(String, Loss, Vec<Substitution>)>,
    successes: u64,
    evaluated: u64,
}

impl OracleAcc {
    fn score(
        &mut self,
        session: &mut Session<'_>,
        seed: &FuzzInput,
        objective: &Objective,
        tokens: &[Token],
        subs: Vec<Substitution>,
    ) -> Result<(), Error> {
        let text = render_tokens(tokens);
        let (loss, success) = probe(session, &text, &seed.reference, objective)?;
        self.evaluated += 1;
        if success {
            self.successes += 1;
        }
        if self.best.as_ref().is_none_or(|b| loss.value > b.1.value) {
            self.best = Some((text, loss, subs));
        }
        Ok(())
    }
}

/// Candidate sets keyed by position, as the fuzzer sees them.
pub fn candidate_sets(bench: &Workbench, seed: &FuzzInput) -> BTreeMap<usize, CandidateSet> {
    bench.fuzzer(&bench.params).candidates_for(seed).into_iter().collect()
}
