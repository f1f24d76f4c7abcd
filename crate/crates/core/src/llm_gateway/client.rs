use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;

use super::transport::{ChatMessage, ChatRequest, Transport, TransportFailure};
use super::{CompletionRequest, LlmError, Result};
use crate::tokens::{ByteHeuristic, TokenEstimator, DEFAULT_TOKEN_BUDGET};

/// Exponential backoff: attempt `i` (0-based) waits
/// `min(base * 2^i, max)` scaled by a random factor in [0.5, 1.0].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for mocks and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter: false,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(20));
        let raw = self.base_delay.saturating_mul(factor).min(self.max_delay);
        if self.jitter && !raw.is_zero() {
            raw.mul_f64(rand::rng().random_range(0.5..=1.0))
        } else {
            raw
        }
    }
}

struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limiter poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("limiter poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("limiter poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe completion client.
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    estimator: Arc<dyn TokenEstimator>,
    budget: usize,
    retry: RetryPolicy,
    in_flight: InFlight,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("budget", &self.budget)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.in_flight.limit)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            estimator: Arc::new(ByteHeuristic),
            budget: DEFAULT_TOKEN_BUDGET,
            retry: RetryPolicy::default(),
            in_flight: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                limit: 4,
            },
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Maximum concurrent requests; at least one.
    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    /// Send one prompt and return the assistant text.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String> {
        if !request.temperature.is_finite() || request.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                request.temperature
            )));
        }
        if request.model_name.trim().is_empty() {
            return Err(LlmError::InvalidRequest("model name is empty".into()));
        }
        let estimated = self.estimator.estimate(&request.prompt);
        if estimated > self.budget {
            return Err(LlmError::BudgetExceeded {
                estimated,
                budget: self.budget,
            });
        }
        let body = ChatRequest {
            model: request.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: request.prompt.clone(),
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };

        let attempts_allowed = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.transport.send(&body)
            };
            match outcome {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyResponse),
                Ok(text) => return Ok(text),
                Err(TransportFailure::Retryable(msg)) if attempt < attempts_allowed => {
                    let wait = self.retry.delay(attempt - 1);
                    log::warn!("attempt {attempt} failed ({msg}); retrying in {wait:?}");
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
                Err(failure) => {
                    return Err(LlmError::TransportError {
                        attempts: attempt,
                        last: failure.to_string(),
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{ScriptedReply, ScriptedTransport};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn client(replies: Vec<ScriptedReply>, attempts: u32) -> (Arc<ScriptedTransport>, LlmClient) {
        let t = Arc::new(ScriptedTransport::new(replies));
        let c = LlmClient::new(t.clone()).with_retry(RetryPolicy::immediate(attempts));
        (t, c)
    }

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest::new(prompt, "gpt-4o-mini")
    }

    #[test]
    fn scripted_single_reply() {
        let (_, c) = client(vec!["R1".into()], 5);
        assert_eq!(c.complete(&req("p")).unwrap(), "R1");
    }

    #[test]
    fn retries_through_429() {
        let (t, c) = client(
            vec![
                ScriptedReply::Status { status: 429 },
                ScriptedReply::Status { status: 429 },
                "ok".into(),
            ],
            3,
        );
        assert_eq!(c.complete(&req("p")).unwrap(), "ok");
        assert_eq!(t.requests().len(), 3);
    }

    #[test]
    fn retries_exhausted() {
        let (t, c) = client(
            vec![
                ScriptedReply::Status { status: 500 },
                ScriptedReply::Timeout { timeout: true },
                "late".into(),
            ],
            2,
        );
        assert!(matches!(
            c.complete(&req("p")),
            Err(LlmError::TransportError { attempts: 2, .. })
        ));
        assert_eq!(t.remaining(), 1);
    }

    #[test]
    fn fatal_status_is_not_retried() {
        let (t, c) = client(vec![ScriptedReply::Status { status: 401 }, "ok".into()], 5);
        assert!(matches!(
            c.complete(&req("p")),
            Err(LlmError::TransportError { attempts: 1, .. })
        ));
        assert_eq!(t.requests().len(), 1);
    }

    #[test]
    fn over_budget_never_sent() {
        let (t, c) = client(vec!["R1".into()], 5);
        let prompt = "x".repeat(128_000 * 4 + 1);
        assert_eq!(
            c.complete(&req(&prompt)),
            Err(LlmError::BudgetExceeded {
                estimated: 128_001,
                budget: 128_000
            })
        );
        assert!(t.requests().is_empty());
        let at_budget = "x".repeat(128_000 * 4);
        assert_eq!(c.complete(&req(&at_budget)).unwrap(), "R1");
    }

    #[test]
    fn empty_reply() {
        let (_, c) = client(vec!["  \n".into()], 5);
        assert_eq!(c.complete(&req("p")), Err(LlmError::EmptyResponse));
    }

    #[test]
    fn negative_temperature_rejected() {
        let (t, c) = client(vec!["R1".into()], 5);
        assert!(matches!(
            c.complete(&req("p").with_temperature(-0.1)),
            Err(LlmError::InvalidRequest(_))
        ));
        assert!(t.requests().is_empty());
    }

    #[test]
    fn request_carries_parameters() {
        let (t, c) = client(vec!["R1".into()], 5);
        c.complete(&req("hello").with_max_output_tokens(Some(64))).unwrap();
        let sent = &t.requests()[0];
        assert_eq!(sent.prompt(), "hello");
        assert_eq!(sent.model, "gpt-4o-mini");
        assert_eq!(sent.temperature, 1.0);
        assert_eq!(sent.max_tokens, Some(64));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(3), Duration::from_millis(4000));
        assert_eq!(p.delay(10), Duration::from_secs(30));
        let j = RetryPolicy::default();
        for _ in 0..50 {
            let d = j.delay(2);
            assert!(d >= Duration::from_millis(1000) && d <= Duration::from_millis(2000));
        }
    }

    struct Counting {
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for Counting {
        fn send(&self, _: &ChatRequest) -> std::result::Result<String, TransportFailure> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_is_bounded() {
        let t = Arc::new(Counting {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let c = LlmClient::new(t.clone()).with_max_in_flight(2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..3 {
                        c.complete(&req("p")).unwrap();
                    }
                });
            }
        });
        assert!(t.peak.load(Ordering::SeqCst) <= 2);
    }
}
