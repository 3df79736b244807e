use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{GrammarChecker, QueryCounter};
use crate::objective::{BleuConfig, Objective, Smoothing, SuccessCriterion};
use crate::search::{AblationMode, SearchParams};
use crate::threat::{HttpConfig, TaskKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Generation,
    Classification,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    #[default]
    Floor,
    Strict,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatKind {
    #[default]
    Mock,
    Http,
}

fn default_true() -> bool {
    true
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    default_max_n: usize = 4;
    default_floor_eps: f64 = 1e-9;
    default_threshold: f64 = 0.2;
    default_top_k: usize = 10;
    default_gamma: f64 = 0.3;
    default_epsilon: f64 = 1e-10;
    default_b0: usize = 2;
    default_b_min: usize = 2;
    default_b_max: usize = 6;
    default_sigma: usize = 1;
    default_p0: f64 = 0.9;
    default_tem0: f64 = 1.0;
    default_timeout: f64 = 60.0;
    default_retries: u32 = 2;
    default_backoff_ms: u64 = 500;
    default_auth_header: String = "Authorization".to_string();
    default_parallel: usize = 1;
    default_out: PathBuf = PathBuf::from("out");
    default_oracle_cap: u64 = 1_000_000;
}

/// Flat key-value run configuration, read from TOML.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub lexicon: PathBuf,
    pub embeddings: PathBuf,
    pub stopwords: Vec<PathBuf>,

    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default = "default_max_n")]
    pub bleu_max_n: usize,
    #[serde(default)]
    pub bleu_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub bleu_smoothing: SmoothingKind,
    #[serde(default = "default_floor_eps")]
    pub bleu_floor_eps: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,

    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_b0")]
    pub b0: usize,
    #[serde(default = "default_b_min")]
    pub b_min: usize,
    #[serde(default = "default_b_max")]
    pub b_max: usize,
    #[serde(default = "default_sigma")]
    pub sigma: usize,
    #[serde(default = "default_p0")]
    pub p0_elite: f64,
    #[serde(default = "default_tem0")]
    pub tem0: f64,
    #[serde(default = "default_mode")]
    pub mode: AblationMode,

    #[serde(default)]
    pub threat: ThreatKind,
    #[serde(default)]
    pub mock: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Name of the environment variable holding the auth header value.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,

    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,

    #[serde(default)]
    pub ppl_corpus: Option<PathBuf>,
    #[serde(default)]
    pub query_counter: QueryCounter,
    #[serde(default)]
    pub grammar_checker: Option<String>,
    #[serde(default)]
    pub grammar_checker_args: Vec<String>,
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: u64,
}

fn default_mode() -> AblationMode {
    AblationMode::Full
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path, path: &Path) -> Result<Self, Error> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.lexicon);
        fix(&mut self.embeddings);
        self.stopwords.iter_mut().for_each(fix);
        if let Some(m) = &mut self.mock {
            fix(m);
        }
        if let Some(c) = &mut self.ppl_corpus {
            fix(c);
        }
        fix(&mut self.out);
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut files = vec![&self.dataset, &self.lexicon, &self.embeddings];
        files.extend(&self.stopwords);
        files.extend(&self.mock);
        files.extend(&self.ppl_corpus);
        for f in files {
            if !f.is_file() {
                return Err(Error::Config(format!("file not found: {}", f.display())));
            }
        }
        if self.stopwords.is_empty() {
            return Err(Error::Config("at least one stop-word file is required".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Config("parallel must be at least 1".into()));
        }
        match self.threat {
            ThreatKind::Mock if self.mock.is_none() => {
                return Err(Error::Config("threat = \"mock\" requires `mock`".into()))
            }
            ThreatKind::Http if self.endpoint.is_none() => {
                return Err(Error::Config("threat = \"http\" requires `endpoint`".into()))
            }
            _ => {}
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        self.objective()?;
        self.search_params().validate()
    }

    pub fn objective(&self) -> Result<Objective, Error> {
        let smoothing = match self.bleu_smoothing {
            SmoothingKind::Floor => Smoothing::Floor(self.bleu_floor_eps),
            SmoothingKind::Strict => Smoothing::Strict,
        };
        let bleu = match &self.bleu_weights {
            Some(w) => BleuConfig::new(self.bleu_max_n, w.clone(), smoothing)?,
            None => BleuConfig::uniform(self.bleu_max_n, smoothing)?,
        };
        let criterion = match self.objective {
            ObjectiveKind::Generation => SuccessCriterion::BleuBelow {
                threshold: self.threshold,
            },
            ObjectiveKind::Classification => SuccessCriterion::LabelFlipped,
        };
        criterion.validate()?;
        Ok(Objective { criterion, bleu })
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            gamma: self.gamma,
            epsilon: self.epsilon,
            b0: self.b0,
            b_min: self.b_min,
            b_max: self.b_max,
            sigma: self.sigma,
            p0_elite: self.p0_elite,
            tem0: self.tem0,
            ablation: self.mode.flags(),
        }
    }

    pub fn http_config(&self) -> Option<HttpConfig> {
        let endpoint = self.endpoint.clone()?;
        let task = match self.objective {
            ObjectiveKind::Generation => TaskKind::Generation,
            ObjectiveKind::Classification => TaskKind::Classification,
        };
        let auth = self
            .auth_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .map(|value| (self.auth_header.clone(), value));
        Some(HttpConfig {
            endpoint,
            task,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
            auth,
        })
    }

    pub fn grammar(&self) -> Option<GrammarChecker> {
        self.grammar_checker.as_ref().map(|command| GrammarChecker {
            command: command.clone(),
            args: self.grammar_checker_args.clone(),
        })
    }
}
