//! Reasoning providers that score a molecule along the six mechanistic
//! dimensions, one sampled response at a time.

mod http;
mod mock;
mod parse;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MoleculeRecord, SoftSample, SoftScores};

pub use mock::{latent_probability, mock_judgment, mock_response};
pub use parse::parse_response;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
    #[error("prompt template must contain `{{smiles}}` and `{{name}}` placeholders")]
    InvalidTemplate,
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("transport failure on sample {sample_idx} after {attempts} attempt(s) (last status {status:?}): {message}")]
    Transport {
        sample_idx: usize,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("cannot read oracle config {path}: {message}")]
    ConfigFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub provider: Provider,
    pub samples_per_molecule: usize,
    pub temperature: f64,
    pub endpoint_url: String,
    pub api_key_env_var: String,
    pub model_name: String,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub seed: u64,
    /// Concurrent requests per molecule for the http provider.
    pub max_in_flight: usize,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    /// Dot-separated path to the response text in the endpoint's JSON body.
    pub response_path: String,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            provider: Provider::Mock,
            samples_per_molecule: 10,
            temperature: 0.7,
            endpoint_url: String::new(),
            api_key_env_var: "ORACLE_API_KEY".to_string(),
            model_name: String::new(),
            max_retries: 3,
            timeout_secs: 60.0,
            seed: 0,
            max_in_flight: 4,
            backoff_initial_ms: 1_000,
            backoff_max_ms: 30_000,
            response_path: "choices.0.message.content".to_string(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidConfig(m.to_string()));
        if self.samples_per_molecule == 0 {
            return bad("samples_per_molecule must be >= 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0");
        }
        if self.provider == Provider::Http && self.endpoint_url.is_empty() {
            return bad("http provider needs endpoint_url");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Sleep before retry number `retry` (0-based): doubling from the
    /// initial delay, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64.checked_shl(retry).unwrap_or(u64::MAX))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, OracleError> {
        let cfg: OracleConfig = toml::from_str(s).map_err(|e| OracleError::ConfigFile {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            OracleError::ConfigFile { message, .. } => OracleError::ConfigFile {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// A versioned prompt. `{smiles}` and `{name}` are substituted per molecule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: u32,
    pub text: String,
}

pub const DEFAULT_TEMPLATE: &str = "You are assessing a precursor additive for perovskite films.\n\
Molecule: {name}\nSMILES: {smiles}\n\
For each mechanism answer 1 (likely) or 0 (unlikely) and reply with one JSON object with the keys \
binding, interfacial_shielding, hydrophobic_protection, ion_interaction, electronic_modulation, predicted_effect.";

impl PromptTemplate {
    pub fn new(version: u32, text: impl Into<String>) -> Result<Self, OracleError> {
        let text = text.into();
        if !(text.contains("{smiles}") && text.contains("{name}")) {
            return Err(OracleError::InvalidTemplate);
        }
        Ok(PromptTemplate { version, text })
    }

    pub fn default_v0() -> Self {
        PromptTemplate {
            version: 0,
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }

    pub fn render(&self, mol: &MoleculeRecord) -> String {
        self.text.replace("{smiles}", &mol.smiles).replace("{name}", &mol.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponseRecord {
    pub molecule_id: String,
    pub sample_idx: usize,
    pub raw_text: String,
    pub parsed: Option<SoftScores>,
    pub parse_ok: bool,
    pub attempt_count: u32,
}

impl OracleResponseRecord {
    fn new(molecule_id: &str, sample_idx: usize, raw_text: String, attempt_count: u32) -> Self {
        let parsed = parse_response(&raw_text);
        OracleResponseRecord {
            molecule_id: molecule_id.to_string(),
            sample_idx,
            parse_ok: parsed.is_some(),
            parsed,
            raw_text,
            attempt_count,
        }
    }

    pub fn to_sample(&self) -> Option<SoftSample> {
        self.parsed.map(|scores| SoftSample {
            molecule_id: self.molecule_id.clone(),
            sample_idx: self.sample_idx,
            scores,
        })
    }
}

/// Draws `samples_per_molecule` responses for `mol`. Unparsable responses are
/// kept with `parse_ok = false`; only transport failures are errors.
pub fn sample_molecule(
    cfg: &OracleConfig,
    mol: &MoleculeRecord,
    template: &PromptTemplate,
) -> Result<Vec<OracleResponseRecord>, OracleError> {
    cfg.validate()?;
    if !(template.text.contains("{smiles}") && template.text.contains("{name}")) {
        return Err(OracleError::InvalidTemplate);
    }
    match cfg.provider {
        Provider::Mock => Ok((0..cfg.samples_per_molecule)
            .map(|i| OracleResponseRecord::new(&mol.id, i, mock_response(cfg.seed, &mol.id, i), 1))
            .collect()),
        Provider::Http => {
            let client = http::HttpOracle::new(cfg)?;
            client.sample(mol, &template.render(mol))
        }
    }
}
