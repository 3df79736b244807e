//! The threat-model boundary: a uniform query interface over live HTTP
//! endpoints and deterministic mocks, with response caching and query
//! accounting.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod http;
mod mock;

pub use http::{HttpConfig, HttpThreat, TaskKind};
pub use mock::{
    Corruption, MockClassifier, MockSpec, MockTranslator, TranslatorSpec, TriggerCondition, TriggerRule,
    ClassifierSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThreatError {
    #[error("transport failure for input {input:?}: {message}")]
    Transport { input: String, message: String },
    #[error("endpoint returned status {status} for input {input:?}")]
    Status { input: String, status: u16 },
    #[error("malformed response for input {input:?}: {message}")]
    Malformed { input: String, message: String },
    #[error("timed out querying input {input:?}")]
    Timeout { input: String },
}

impl ThreatError {
    pub fn input(&self) -> &str {
        match self {
            ThreatError::Transport { input, .. }
            | ThreatError::Status { input, .. }
            | ThreatError::Malformed { input, .. }
            | ThreatError::Timeout { input } => input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseKind {
    Generation {
        text: String,
    },
    Classification {
        label: String,
        confidences: BTreeMap<String, f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreatResponse {
    pub kind: ResponseKind,
    pub latency: Duration,
    pub cached: bool,
}

impl ThreatResponse {
    pub fn generation(text: impl Into<String>) -> Self {
        Self::from_kind(ResponseKind::Generation { text: text.into() })
    }

    pub fn classification(label: impl Into<String>, confidences: BTreeMap<String, f64>) -> Self {
        Self::from_kind(ResponseKind::Classification {
            label: label.into(),
            confidences,
        })
    }

    fn from_kind(kind: ResponseKind) -> Self {
        Self {
            kind,
            latency: Duration::ZERO,
            cached: false,
        }
    }
}

/// Query counters. `model_invocations` counts cache misses only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLedger {
    pub logical_queries: u64,
    pub model_invocations: u64,
    #[serde(rename = "wall_time_secs", with = "duration_secs")]
    pub wall_time: Duration,
}

impl QueryLedger {
    fn record(&mut self, miss: bool, latency: Duration) {
        self.logical_queries += 1;
        if miss {
            self.model_invocations += 1;
        }
        self.wall_time += latency;
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// A target system reachable by text queries.
pub trait ThreatModel: Send + Sync {
    fn respond(&self, input: &str) -> Result<ResponseKind, ThreatError>;
}

impl<T: ThreatModel + ?Sized> ThreatModel for Arc<T> {
    fn respond(&self, input: &str) -> Result<ResponseKind, ThreatError> {
        (**self).respond(input)
    }
}

/// Shared, internally synchronized client around one threat model.
pub struct ThreatClient {
    model: Arc<dyn ThreatModel>,
    cache: Option<Mutex<HashMap<String, ResponseKind>>>,
    ledger: Mutex<QueryLedger>,
}

impl ThreatClient {
    pub fn new(model: Arc<dyn ThreatModel>, cache: bool) -> Self {
        Self {
            model,
            cache: cache.then(Mutex::default),
            ledger: Mutex::default(),
        }
    }

    pub fn caching(&self) -> bool {
        self.cache.is_some()
    }

    /// Queries through the client-wide cache.
    pub fn query(&self, input: &str) -> Result<ThreatResponse, ThreatError> {
        let start = Instant::now();
        let hit = self
            .cache
            .as_ref()
            .and_then(|c| c.lock().unwrap().get(input).cloned());
        let (kind, cached) = match hit {
            Some(kind) => (kind, true),
            None => {
                let kind = self.model.respond(input)?;
                if let Some(c) = &self.cache {
                    c.lock().unwrap().insert(input.to_string(), kind.clone());
                }
                (kind, false)
            }
        };
        let latency = start.elapsed();
        self.ledger.lock().unwrap().record(!cached, latency);
        Ok(ThreatResponse { kind, latency, cached })
    }

    /// A per-run view with its own cache and ledger, so that one run's
    /// accounting does not depend on what other runs queried.
    pub fn session(&self) -> Session<'_> {
        Session {
            client: self,
            cache: self.caching().then(HashMap::new),
            ledger: QueryLedger::default(),
        }
    }

    pub fn ledger_snapshot(&self) -> QueryLedger {
        *self.ledger.lock().unwrap()
    }
}

pub struct Session<'a> {
    client: &'a ThreatClient,
    cache: Option<HashMap<String, ResponseKind>>,
    ledger: QueryLedger,
}

impl Session<'_> {
    pub fn query(&mut self, input: &str) -> Result<ThreatResponse, ThreatError> {
        let start = Instant::now();
        let hit = self.cache.as_ref().and_then(|c| c.get(input).cloned());
        let (kind, cached) = match hit {
            Some(kind) => (kind, true),
            None => {
                let kind = self.client.model.respond(input)?;
                if let Some(c) = &mut self.cache {
                    c.insert(input.to_string(), kind.clone());
                }
                (kind, false)
            }
        };
        let latency = start.elapsed();
        self.ledger.record(!cached, latency);
        self.client.ledger.lock().unwrap().record(!cached, latency);
        Ok(ThreatResponse { kind, latency, cached })
    }

    pub fn ledger_snapshot(&self) -> QueryLedger {
        self.ledger
    }
}
