use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{OracleConfig, OracleError, OracleResponseRecord};
use crate::domain::MoleculeRecord;

pub(super) struct HttpOracle<'a> {
    cfg: &'a OracleConfig,
    client: Client,
    api_key: Option<String>,
}

enum Attempt {
    Done(String),
    Retry { status: Option<u16>, message: String },
    Fatal { status: Option<u16>, message: String },
}

impl<'a> HttpOracle<'a> {
    pub(super) fn new(cfg: &'a OracleConfig) -> Result<Self, OracleError> {
        let client = Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| OracleError::InvalidConfig(e.to_string()))?;
        let api_key = if cfg.api_key_env_var.is_empty() {
            None
        } else {
            Some(
                std::env::var(&cfg.api_key_env_var)
                    .map_err(|_| OracleError::MissingApiKey(cfg.api_key_env_var.clone()))?,
            )
        };
        Ok(HttpOracle { cfg, client, api_key })
    }

    pub(super) fn sample(
        &self,
        mol: &MoleculeRecord,
        prompt: &str,
    ) -> Result<Vec<OracleResponseRecord>, OracleError> {
        let n = self.cfg.samples_per_molecule;
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<OracleResponseRecord, OracleError>>>> =
            Mutex::new((0..n).map(|_| None).collect());
        let workers = self.cfg.max_in_flight.min(n);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= n {
                        break;
                    }
                    let out = self.sample_one(mol, prompt, idx);
                    slots.lock().expect("slot lock")[idx] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock")
            .into_iter()
            .map(|s| s.expect("every sample index is visited"))
            .collect()
    }

    fn sample_one(
        &self,
        mol: &MoleculeRecord,
        prompt: &str,
        sample_idx: usize,
    ) -> Result<OracleResponseRecord, OracleError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(prompt) {
                Attempt::Done(text) => {
                    return Ok(OracleResponseRecord::new(&mol.id, sample_idx, text, attempts))
                }
                Attempt::Fatal { status, message } => {
                    return Err(OracleError::Transport {
                        sample_idx,
                        attempts,
                        status,
                        message,
                    })
                }
                Attempt::Retry { status, message } => {
                    if attempts > self.cfg.max_retries {
                        return Err(OracleError::Transport {
                            sample_idx,
                            attempts,
                            status,
                            message,
                        });
                    }
                    log::debug!("sample {sample_idx} of {} failed ({message}); retrying", mol.id);
                    std::thread::sleep(self.cfg.backoff(attempts - 1));
                }
            }
        }
    }

    fn attempt(&self, prompt: &str) -> Attempt {
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.cfg.endpoint_url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    status: None,
                    message: e.to_string(),
                }
            }
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Retry {
                status: Some(status.as_u16()),
                message: format!("endpoint returned {status}"),
            };
        }
        if !status.is_success() {
            return Attempt::Fatal {
                status: Some(status.as_u16()),
                message: format!("endpoint returned {status}"),
            };
        }
        match resp.text() {
            Ok(text) => Attempt::Done(extract_text(&text, &self.cfg.response_path)),
            Err(e) => Attempt::Retry {
                status: Some(status.as_u16()),
                message: e.to_string(),
            },
        }
    }
}

/// Follows a dot path (`choices.0.message.content`) into a JSON body. Falls
/// back to the raw body when it is not JSON or the path is absent, so the
/// parser still gets a chance at it.
pub(super) fn extract_text(body: &str, path: &str) -> String {
    let Ok(mut v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        let next = match &mut v {
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            Value::Object(map) => map.get_mut(seg),
            _ => None,
        };
        match next {
            Some(n) => v = n.take(),
            None => return body.to_string(),
        }
    }
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_chat_content() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(extract_text(body, "choices.0.message.content"), "hello");
        assert_eq!(extract_text(body, "choices.3.message"), body);
        assert_eq!(extract_text("plain", "a.b"), "plain");
        assert_eq!(extract_text(r#"{"out":{"x":1}}"#, "out"), r#"{"x":1}"#);
    }
}
