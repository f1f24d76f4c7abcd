use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::{classify_status, ChatRequest, Transport, TransportFailure};
use super::LlmError;

/// Hex SHA-256 of a rendered prompt; the key of content-addressed fixtures.
pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// One queued mock outcome. In fixture files a bare string is a reply and
/// `{"status": 429}` is an HTTP failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Status { status: u16 },
    Timeout { timeout: bool },
}

impl ScriptedReply {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedReply::Text(s.into())
    }
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::Text(s.to_string())
    }
}

/// Replies consumed in request order.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    queue: Mutex<VecDeque<ScriptedReply>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn new<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ScriptedReply>,
    {
        Self {
            queue: Mutex::new(replies.into_iter().map(Into::into).collect()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Every request received, including ones answered with a failure.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("mock queue poisoned").len()
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        self.log.lock().expect("mock log poisoned").push(request.clone());
        let reply = self.queue.lock().expect("mock queue poisoned").pop_front();
        match reply {
            Some(ScriptedReply::Text(text)) => Ok(text),
            Some(ScriptedReply::Status { status }) => Err(classify_status(status, "scripted")),
            Some(ScriptedReply::Timeout { .. }) => Err(TransportFailure::Retryable("scripted timeout".into())),
            None => Err(TransportFailure::Fatal("scripted mock queue exhausted".into())),
        }
    }
}

/// Replies looked up by the SHA-256 of the prompt.
#[derive(Debug, Default)]
pub struct HashedTransport {
    responses: BTreeMap<String, String>,
    log: Mutex<Vec<ChatRequest>>,
}

impl HashedTransport {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self {
            responses,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }
}

impl Transport for HashedTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        self.log.lock().expect("mock log poisoned").push(request.clone());
        let key = prompt_sha256(request.prompt());
        self.responses
            .get(&key)
            .cloned()
            .ok_or_else(|| TransportFailure::Fatal(format!("no mock response for prompt {key}")))
    }
}

/// Mock fixture file: a JSON array is a scripted queue, a JSON object maps
/// prompt hashes to responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockFixture {
    Scripted(Vec<ScriptedReply>),
    Hashed(BTreeMap<String, String>),
}

impl MockFixture {
    pub fn into_transport(self) -> Arc<dyn Transport> {
        match self {
            MockFixture::Scripted(replies) => Arc::new(ScriptedTransport::new(replies)),
            MockFixture::Hashed(map) => Arc::new(HashedTransport::new(map)),
        }
    }
}

pub fn load_mock_fixture(path: &Path) -> Result<MockFixture, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::ChatMessage;

    fn req(prompt: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature: 1.0,
            max_tokens: None,
        }
    }

    #[test]
    fn scripted_in_order() {
        let t = ScriptedTransport::new([
            ScriptedReply::text("R1"),
            ScriptedReply::Status { status: 429 },
            ScriptedReply::Timeout { timeout: true },
        ]);
        assert_eq!(t.send(&req("a")).unwrap(), "R1");
        assert!(matches!(t.send(&req("b")), Err(TransportFailure::Retryable(_))));
        assert!(matches!(t.send(&req("c")), Err(TransportFailure::Retryable(_))));
        assert!(matches!(t.send(&req("d")), Err(TransportFailure::Fatal(_))));
        assert_eq!(t.requests().len(), 4);
    }

    #[test]
    fn hashed_lookup() {
        let map = [(prompt_sha256("hello"), "world".to_string())].into();
        let t = HashedTransport::new(map);
        assert_eq!(t.send(&req("hello")).unwrap(), "world");
        assert!(matches!(t.send(&req("other")), Err(TransportFailure::Fatal(_))));
    }

    #[test]
    fn fixture_forms() {
        let f: MockFixture = serde_json::from_str(r#"["a", {"status": 503}, "b"]"#).unwrap();
        assert_eq!(
            f,
            MockFixture::Scripted(vec!["a".into(), ScriptedReply::Status { status: 503 }, "b".into()])
        );
        let f: MockFixture = serde_json::from_str(r#"{"abc": "resp"}"#).unwrap();
        assert!(matches!(f, MockFixture::Hashed(m) if m["abc"] == "resp"));
        assert_eq!(
            prompt_sha256(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
