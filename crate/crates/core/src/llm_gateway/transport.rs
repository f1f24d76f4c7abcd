use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::LlmError;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a `POST {base_url}/chat/completions` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(rename = "max_tokens", skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// The single user message's content.
    pub fn prompt(&self) -> &str {
        self.messages.first().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// 429, 5xx, timeouts and connection problems.
    Retryable(String),
    Fatal(String),
}

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportFailure::Retryable(m) => write!(f, "retryable: {m}"),
            TransportFailure::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// Sends one chat request and returns the assistant message text.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure>;
}

/// Retry classification shared by the HTTP transport and the mocks.
pub(crate) fn classify_status(status: u16, detail: &str) -> TransportFailure {
    let message = format!("HTTP {status}: {detail}");
    if status == 429 || (500..600).contains(&status) {
        TransportFailure::Retryable(message)
    } else {
        TransportFailure::Fatal(message)
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("endpoint", &self.endpoint)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

impl HttpTransport {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    /// Read the API key from `env_var`; a missing key is a configuration error.
    pub fn from_env(base_url: &str, env_var: &str, timeout: Duration) -> Result<Self, LlmError> {
        let key = std::env::var(env_var)
            .map_err(|_| LlmError::Config(format!("environment variable {env_var} is not set")))?;
        Ok(Self::new(base_url, Some(key), timeout))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_)
            | ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::BodyStalled => TransportFailure::Retryable(e.to_string()),
            other => TransportFailure::Fatal(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &body));
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| TransportFailure::Fatal(format!("unexpected response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let req = ChatRequest {
            model: "gpt-4o-mini".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: "hi".into(),
            }],
            temperature: 1.0,
            max_tokens: None,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"model":"gpt-4o-mini","messages":[{"role":"user","content":"hi"}],"temperature":1.0}"#
        );
    }

    #[test]
    fn status_classes() {
        assert!(matches!(classify_status(429, ""), TransportFailure::Retryable(_)));
        assert!(matches!(classify_status(503, ""), TransportFailure::Retryable(_)));
        assert!(matches!(classify_status(400, ""), TransportFailure::Fatal(_)));
        assert!(matches!(classify_status(401, ""), TransportFailure::Fatal(_)));
    }

    #[test]
    fn endpoint_join() {
        let t = HttpTransport::new("http://localhost:1/v1/", None, Duration::from_secs(1));
        assert_eq!(t.endpoint(), "http://localhost:1/v1/chat/completions");
    }

    #[test]
    fn unreachable_host_is_retryable() {
        // port 9 on localhost is closed in the sandbox
        let t = HttpTransport::new("http://127.0.0.1:9/v1", None, Duration::from_secs(2));
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![],
            temperature: 1.0,
            max_tokens: None,
        };
        assert!(matches!(t.send(&req), Err(TransportFailure::Retryable(_))));
    }
}
