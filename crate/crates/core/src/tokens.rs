//! Prompt token estimation.

/// Input capacity of the generation model, in tokens.
pub const DEFAULT_TOKEN_BUDGET: usize = 128_000;

/// Counts (or estimates) the tokens a piece of text will occupy.
///
/// The default [`ByteHeuristic`] can be swapped for an exact tokenizer.
/// Implementations must be monotone in input length.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteHeuristic;

impl TokenEstimator for ByteHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Estimate with the default heuristic.
pub fn estimate_tokens(text: &str) -> usize {
    ByteHeuristic.estimate(text)
}
