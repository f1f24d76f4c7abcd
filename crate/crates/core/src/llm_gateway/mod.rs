//! Chat-completion access and model-output validation.
//!
//! [`LlmClient`] enforces the prompt token budget before anything reaches a
//! [`Transport`], retries transient failures with exponential backoff, and
//! bounds the number of requests in flight. Transports are either the
//! OpenAI-compatible [`HttpTransport`] or one of the deterministic mocks.

mod client;
mod mock;
mod parse;
mod transport;

use serde::{Deserialize, Serialize};

use crate::label::Label;

pub use client::{LlmClient, RetryPolicy};
pub use mock::{load_mock_fixture, prompt_sha256, HashedTransport, MockFixture, ScriptedReply, ScriptedTransport};
pub use parse::{has_tag_pair, parse_reasons, validate_synthetic, SyntheticIdAllocator};
pub use transport::{ChatMessage, ChatRequest, HttpTransport, Transport, TransportFailure, DEFAULT_API_KEY_ENV};

/// Reasons requested from the reasoning step.
pub const REASON_COUNT: usize = 5;
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("llm: prompt estimated at {estimated} tokens exceeds budget {budget}")]
    BudgetExceeded { estimated: usize, budget: usize },
    #[error("llm: invalid request: {0}")]
    InvalidRequest(String),
    #[error("llm: transport failed after {attempts} attempt(s): {last}")]
    TransportError { attempts: u32, last: String },
    #[error("llm: empty response")]
    EmptyResponse,
    #[error("llm: malformed reason list: {0}")]
    MalformedReasonList(String),
    #[error("llm: generated trial does not mention {0:?}")]
    MissingIntervention(String),
    #[error("llm: generated trial has no XML-like tag pair")]
    NotReportShaped,
    #[error("llm: {0}")]
    Config(String),
}

pub type Result<T, E = LlmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub model_name: String,
    pub max_output_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            model_name: model_name.into(),
            max_output_tokens: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, max: Option<u32>) -> Self {
        self.max_output_tokens = max;
        self
    }
}

/// Five reasons explaining why trials of one intervention reached one outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonSet {
    pub intervention: String,
    pub label: Label,
    pub reasons: Vec<String>,
}

/// Where a synthetic trial came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub example_ids: Vec<String>,
    pub reasons: Vec<String>,
    pub model_name: String,
    pub temperature: f64,
    pub seed: u64,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrial {
    pub trial_id: String,
    pub text: String,
    pub intervention: String,
    pub label: Label,
    pub provenance: Provenance,
}

impl SyntheticTrial {
    /// Re-check the stored trial against the acceptance rules.
    pub fn revalidate(&self) -> Result<()> {
        let rescrubbed = crate::corpus::scrub_leakage(&self.text, crate::corpus::ScrubMode::Synthetic);
        if rescrubbed != self.text {
            return Err(LlmError::InvalidRequest(format!(
                "{} still contains label-leaking content",
                self.trial_id
            )));
        }
        if self.text.trim().is_empty() {
            return Err(LlmError::EmptyResponse);
        }
        if !self.text.to_lowercase().contains(&self.intervention.to_lowercase()) {
            return Err(LlmError::MissingIntervention(self.intervention.clone()));
        }
        if !has_tag_pair(&self.text) {
            return Err(LlmError::NotReportShaped);
        }
        Ok(())
    }
}
