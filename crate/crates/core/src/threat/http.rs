use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{ResponseKind, ThreatError, ThreatModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Generation,
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub task: TaskKind,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubled for each further attempt.
    pub backoff: Duration,
    /// Header name and value sent with every request.
    pub auth: Option<(String, String)>,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, task: TaskKind) -> Self {
        Self {
            endpoint: endpoint.into(),
            task,
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(500),
            auth: None,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct GenerationBody {
    output: String,
}

#[derive(Deserialize)]
struct ClassificationBody {
    label: String,
    #[serde(default)]
    confidences: Option<BTreeMap<String, f64>>,
}

/// JSON-over-HTTP threat model: `POST {"input": ...}`.
pub struct HttpThreat {
    config: HttpConfig,
    agent: Agent,
}

impl HttpThreat {
    pub fn new(config: HttpConfig) -> Self {
        let agent = Agent::new_with_config(
            Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        Self { config, agent }
    }

    fn attempt(&self, input: &str) -> Result<ResponseKind, ThreatError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some((name, value)) = &self.config.auth {
            req = req.header(name.as_str(), value.as_str());
        }
        let mut resp = req.send_json(Request { input }).map_err(|e| transport(input, e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ThreatError::Status {
                input: input.to_string(),
                status,
            });
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(input, e))?;
        parse_body(self.config.task, input, &body)
    }
}

fn transport(input: &str, e: ureq::Error) -> ThreatError {
    match e {
        ureq::Error::Timeout(_) => ThreatError::Timeout {
            input: input.to_string(),
        },
        other => ThreatError::Transport {
            input: input.to_string(),
            message: other.to_string(),
        },
    }
}

pub(crate) fn parse_body(task: TaskKind, input: &str, body: &str) -> Result<ResponseKind, ThreatError> {
    let malformed = |e: serde_json::Error| ThreatError::Malformed {
        input: input.to_string(),
        message: e.to_string(),
    };
    match task {
        TaskKind::Generation => {
            let b: GenerationBody = serde_json::from_str(body).map_err(malformed)?;
            Ok(ResponseKind::Generation { text: b.output })
        }
        TaskKind::Classification => {
            let b: ClassificationBody = serde_json::from_str(body).map_err(malformed)?;
            // A bare label means full confidence in that label.
            let confidences = b
                .confidences
                .unwrap_or_else(|| BTreeMap::from([(b.label.clone(), 1.0)]));
            if confidences.values().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(ThreatError::Malformed {
                    input: input.to_string(),
                    message: "confidence outside [0, 1]".into(),
                });
            }
            Ok(ResponseKind::Classification {
                label: b.label,
                confidences,
            })
        }
    }
}

impl ThreatModel for HttpThreat {
    fn respond(&self, input: &str) -> Result<ResponseKind, ThreatError> {
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(input) {
                Ok(kind) => return Ok(kind),
                // Malformed payloads are not transient.
                Err(e @ ThreatError::Malformed { .. }) => return Err(e),
                Err(e) if attempt >= self.config.retries => return Err(e),
                Err(e) => {
                    log::warn!("query attempt {} failed: {e}; retrying in {delay:?}", attempt + 1);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
