//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use basfuzz::harness::{RunConfig, Workbench};
use basfuzz::threat::{Corruption, MockSpec, MockTranslator, ThreatClient, TranslatorSpec, TriggerCondition, TriggerRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const PROMPT: &str = "Translate into English :";
pub const CORRUPTED: &str = "error error error";
/// Tokens in [`PROMPT`]; example word `j` sits at token index `PROMPT_TOKENS + j`.
pub const PROMPT_TOKENS: usize = 4;

/// A generated mock-translation suite living in a temporary directory.
pub struct Suite {
    pub dir: TempDir,
    pub config: PathBuf,
    pub spec: TranslatorSpec,
    /// Seed id to the token index(es) of its planted trigger word(s).
    pub planted: BTreeMap<String, Vec<usize>>,
}

impl Suite {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig::load(&self.config).expect("fixture config loads")
    }

    pub fn bench(&self) -> Workbench {
        Workbench::from_config(&self.run_config()).expect("fixture workbench builds")
    }

    /// A workbench whose client wraps an instrumented translator.
    pub fn instrumented_bench(&self, cache: bool) -> (Workbench, Arc<MockTranslator>) {
        let mock = Arc::new(MockTranslator::new(self.spec.clone()));
        let client = ThreatClient::new(mock.clone(), cache);
        let bench = Workbench::with_client(&self.run_config(), client).expect("fixture workbench builds");
        (bench, mock)
    }

    /// Writes an alternative mock spec next to the suite and returns its config.
    pub fn config_with_mock(&self, name: &str, spec: &TranslatorSpec) -> RunConfig {
        let path = self.path(name);
        write_mock(&path, spec);
        let mut cfg = self.run_config();
        cfg.mock = Some(path);
        cfg
    }
}

fn write_mock(path: &Path, spec: &TranslatorSpec) {
    let json = serde_json::to_string_pretty(&MockSpec::Translator(spec.clone())).unwrap();
    fs::write(path, json).unwrap();
}

/// Accumulates seeds, lexicon rows and dictionary entries for a suite.
#[derive(Default)]
struct Builder {
    dataset: String,
    lexicon: String,
    dictionary: BTreeMap<String, String>,
    triggers: Vec<TriggerRule>,
    planted: BTreeMap<String, Vec<usize>>,
}

impl Builder {
    fn word(&mut self, source: &str, target: &str) {
        self.dictionary.insert(source.to_string(), target.to_string());
    }

    fn candidate(&mut self, word: &str, candidate: &str, target: &str) {
        writeln!(self.lexicon, "{word}\tsyn\t{candidate}").unwrap();
        self.word(candidate, target);
    }

    fn seed(&mut self, id: &str, words: &[String]) {
        let example = words.join(" ");
        let reference: Vec<&str> = words.iter().map(|w| self.dictionary[w].as_str()).collect();
        let line = serde_json::json!({
            "id": id,
            "prompt": PROMPT,
            "example": example,
            "reference": reference.join(" "),
        });
        writeln!(self.dataset, "{line}").unwrap();
    }

    fn finish(self) -> Suite {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        fs::write(p("seeds.jsonl"), &self.dataset).unwrap();
        fs::write(p("lexicon.tsv"), &self.lexicon).unwrap();
        fs::write(p("embeddings.txt"), "").unwrap();
        fs::write(p("english.txt"), "into\n").unwrap();
        let spec = TranslatorSpec {
            separator: ":".into(),
            dictionary: self.dictionary,
            triggers: self.triggers,
        };
        write_mock(&p("mock.json"), &spec);
        let config = p("run.toml");
        fs::write(
            &config,
            "dataset = \"seeds.jsonl\"\nlexicon = \"lexicon.tsv\"\nembeddings = \"embeddings.txt\"\n\
             stopwords = [\"english.txt\"]\nthreat = \"mock\"\nmock = \"mock.json\"\nseed = 20240917\n",
        )
        .unwrap();
        Suite {
            dir,
            config,
            spec,
            planted: self.planted,
        }
    }
}

/// Seeds of `len` single-word source tokens, each with one trigger word
/// planted at a random position and at most two translation-changing decoys.
/// Every other candidate translates like the word it replaces.
pub fn planted_single(n: usize, len: usize, rng_seed: u64) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut b = Builder::default();
    for i in 0..n {
        let id = format!("seed{i:03}");
        let words: Vec<String> = (0..len).map(|j| format!("q{i}w{j}")).collect();
        for (j, w) in words.iter().enumerate() {
            b.word(w, &format!("e{i}w{j}"));
        }
        let trigger_pos = rng.random_range(0..len);
        let decoys = rng.random_range(0..=2usize);
        let decoy_pos: Vec<usize> = (0..decoys).map(|_| rng.random_range(0..len)).collect();
        for (j, w) in words.iter().enumerate() {
            let target = format!("e{i}w{j}");
            for k in 0..rng.random_range(1..=3usize) {
                b.candidate(w, &format!("{w}n{k}"), &target);
            }
            for (d, _) in decoy_pos.iter().enumerate().filter(|(_, &p)| p == j) {
                b.candidate(w, &format!("{w}d{d}"), &format!("u{i}w{j}d{d}"));
            }
            if j == trigger_pos {
                let trigger = format!("{w}x");
                b.candidate(w, &trigger, &target);
                b.triggers.push(TriggerRule {
                    when: TriggerCondition::AllOf(vec![trigger]),
                    effect: Corruption::Phrase(CORRUPTED.into()),
                });
            }
        }
        b.seed(&id, &words);
        b.planted.insert(id, vec![PROMPT_TOKENS + trigger_pos]);
    }
    b.finish()
}

/// Seeds whose fault needs two substitutions at once: the translator only
/// breaks when both planted words are present. Both planted words translate
/// exactly like the words they replace, so they never raise the loss on
/// their own, while decoys at the same positions do. The two planted
/// positions hold multi-word phrases, which puts them first in importance
/// order. In half of the seeds each planted position also carries a crowd
/// of decoys.
pub fn planted_pair(n: usize, len: usize, rng_seed: u64) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut b = Builder::default();
    for i in 0..n {
        let id = format!("seed{i:03}");
        let words: Vec<String> = (0..len).map(|j| format!("p{i}w{j}")).collect();
        let p1 = rng.random_range(0..len);
        let p2 = loop {
            let p = rng.random_range(0..len);
            if p != p1 {
                break p;
            }
        };
        let crowd = rng.random_bool(0.5);
        let mut of = Vec::new();
        for (j, w) in words.iter().enumerate() {
            if j == p1 || j == p2 {
                let target = format!("e{i}w{j}a e{i}w{j}b e{i}w{j}c");
                b.word(w, &target);
                let planted = format!("{w}x");
                b.candidate(w, &planted, &target);
                of.push(planted);
                let decoys = if crowd { 5 } else { 1 };
                for d in 0..decoys {
                    b.candidate(w, &format!("{w}d{d}"), &format!("e{i}w{j}a u{i}w{j}d{d} e{i}w{j}c"));
                }
            } else {
                let target = format!("e{i}w{j}");
                b.word(w, &target);
                for k in 0..rng.random_range(0..=2usize) {
                    b.candidate(w, &format!("{w}n{k}"), &target);
                }
            }
        }
        b.triggers.push(TriggerRule {
            when: TriggerCondition::AtLeast { m: 2, of },
            effect: Corruption::Phrase(CORRUPTED.into()),
        });
        b.seed(&id, &words);
        b.planted.insert(id, vec![PROMPT_TOKENS + p1, PROMPT_TOKENS + p2]);
    }
    b.finish()
}

/// The same suite's translator with triggers kept only for the listed seeds.
pub fn subset_triggers(suite: &Suite, keep: impl Fn(usize) -> bool) -> TranslatorSpec {
    let mut spec = suite.spec.clone();
    spec.triggers = spec
        .triggers
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, r)| r)
        .collect();
    spec
}
