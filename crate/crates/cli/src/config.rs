//! Run configuration: a TOML file whose values command-line flags override.
//!
//! API keys are never part of the configuration; only the name of the
//! environment variable holding one is.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use trialsynth::label::Label;
use trialsynth::llm_gateway::{DEFAULT_API_KEY_ENV, DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use trialsynth::pipeline::LabelPolicy;
use trialsynth::retrieval::{DEFAULT_MIN_FAILURES, DEFAULT_MIN_SUCCESSES};
use trialsynth::tokens::DEFAULT_TOKEN_BUDGET;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub llm: LlmConfig,
    pub plan: PlanConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            llm: LlmConfig::default(),
            plan: PlanConfig::default(),
            seeds: vec![40, 41, 42],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub xml: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            xml: None,
            labels: None,
            vocab: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub token_budget: usize,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub max_output_tokens: Option<u32>,
    pub api_key_env: String,
    /// Mock fixture: a JSON list (replies in request order) or a JSON object
    /// mapping prompt SHA-256 to reply. When set, no network is used.
    pub mock_fixture: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            token_budget: DEFAULT_TOKEN_BUDGET,
            retry_attempts: 5,
            retry_base_delay_ms: 500,
            max_in_flight: 4,
            timeout_secs: 120,
            max_output_tokens: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            mock_fixture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub total_trials: usize,
    pub per_intervention_cap: Option<usize>,
    /// `balanced`, `alternate`, `success` or `failure`.
    pub label_policy: String,
    pub min_successes: usize,
    pub min_failures: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            total_trials: 3358,
            per_intervention_cap: None,
            label_policy: "balanced".into(),
            min_successes: DEFAULT_MIN_SUCCESSES,
            min_failures: DEFAULT_MIN_FAILURES,
        }
    }
}

pub fn parse_label_policy(text: &str) -> anyhow::Result<LabelPolicy> {
    Ok(match text.trim().to_ascii_lowercase().as_str() {
        "balanced" => LabelPolicy::Balanced,
        "alternate" => LabelPolicy::Alternate,
        "success" | "1" => LabelPolicy::Fixed(Label::Success),
        "failure" | "0" => LabelPolicy::Fixed(Label::Failure),
        other => bail!("unknown label policy {other:?} (expected balanced, alternate, success or failure)"),
    })
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("config: seeds must not be empty");
        }
        if !(self.llm.temperature >= 0.0 && self.llm.temperature.is_finite()) {
            bail!("config: temperature must be a non-negative number");
        }
        if self.plan.total_trials == 0 {
            bail!("config: plan.total_trials must be at least 1");
        }
        parse_label_policy(&self.plan.label_policy)?;
        Ok(())
    }
}

/// The path must exist; `what` names it in the error.
pub fn existing(path: Option<&Path>, what: &str) -> anyhow::Result<PathBuf> {
    let Some(path) = path else {
        bail!("config: no {what} given (set it in the config file or pass the flag)");
    };
    if !path.exists() {
        bail!("config: {what} {} does not exist", path.display());
    }
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.seeds, [40, 41, 42]);
        assert_eq!(c.llm.model, "gpt-4o-mini");
        assert_eq!(c.llm.temperature, 1.0);
        assert_eq!(c.llm.token_budget, 128_000);
        assert_eq!(c.llm.retry_attempts, 5);
    }

    #[test]
    fn partial_file() {
        let c: RunConfig = toml::from_str("seeds = [1]\n[llm]\nmodel = \"m\"\n").unwrap();
        assert_eq!(c.seeds, [1]);
        assert_eq!(c.llm.model, "m");
        assert_eq!(c.llm.temperature, 1.0);
    }

    #[test]
    fn example_config_is_valid() {
        let c: RunConfig = toml::from_str(include_str!("../../../config.example.toml")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.llm, LlmConfig::default());
        assert_eq!(c.plan, PlanConfig::default());
    }

    #[test]
    fn secrets_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[llm]\napi_key = \"sk-123\"\n").is_err());
    }

    #[test]
    fn policies() {
        assert_eq!(parse_label_policy("Balanced").unwrap(), LabelPolicy::Balanced);
        assert_eq!(
            parse_label_policy("failure").unwrap(),
            LabelPolicy::Fixed(Label::Failure)
        );
        assert!(parse_label_policy("random").is_err());
    }

    #[test]
    fn empty_seeds_invalid() {
        let c = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
