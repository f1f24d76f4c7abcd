use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::LazyLock;

use regex::Regex;

use super::{LlmError, Provenance, ReasonSet, Result, SyntheticTrial, REASON_COUNT};
use crate::corpus::{scrub_leakage, ScrubMode};
use crate::label::Label;

static OPEN_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<([A-Za-z_][A-Za-z0-9_.:-]*)(?:\s[^<>]*)?>").expect("valid regex"));

/// Position of list marker `n.` at or after `from`, returned as (start, end).
/// A marker must begin the text or follow whitespace, and be followed by
/// whitespace or the end of the text.
fn find_marker(text: &str, n: usize, from: usize) -> Option<(usize, usize)> {
    let marker = format!("{n}.");
    let mut search = from;
    while let Some(rel) = text[search..].find(&marker) {
        let start = search + rel;
        let end = start + marker.len();
        let before_ok = text[..start].chars().next_back().is_none_or(char::is_whitespace);
        let after_ok = text[end..].chars().next().is_none_or(char::is_whitespace);
        if before_ok && after_ok {
            return Some((start, end));
        }
        search = end;
    }
    None
}

/// Extract the numbered reasons "1." through "5." from a model reply.
///
/// Items may be separated by newlines or run together on one line; any text
/// before the first marker is ignored.
pub fn parse_reasons(response: &str, intervention: &str, label: Label) -> Result<ReasonSet> {
    let mut markers = Vec::with_capacity(REASON_COUNT);
    let mut cursor = 0;
    for n in 1..=REASON_COUNT {
        match find_marker(response, n, cursor) {
            Some((start, end)) => {
                markers.push((start, end));
                cursor = end;
            }
            None => {
                return Err(LlmError::MalformedReasonList(format!(
                    "found {} of {REASON_COUNT} numbered items",
                    n - 1
                )))
            }
        }
    }
    if find_marker(response, REASON_COUNT + 1, cursor).is_some() {
        return Err(LlmError::MalformedReasonList(format!(
            "more than {REASON_COUNT} numbered items"
        )));
    }
    let mut reasons = Vec::with_capacity(REASON_COUNT);
    for (i, &(_, body_start)) in markers.iter().enumerate() {
        let body_end = markers.get(i + 1).map_or(response.len(), |m| m.0);
        let reason = response[body_start..body_end].trim();
        if reason.is_empty() {
            return Err(LlmError::MalformedReasonList(format!("item {} is empty", i + 1)));
        }
        reasons.push(reason.to_string());
    }
    Ok(ReasonSet {
        intervention: intervention.to_string(),
        label,
        reasons,
    })
}

/// True when some opening tag is later closed by a matching `</tag>`.
pub fn has_tag_pair(text: &str) -> bool {
    OPEN_TAG.captures_iter(text).any(|c| {
        let whole = c.get(0).expect("match");
        let close = format!("</{}>", &c[1]);
        text[whole.end()..].contains(&close)
    })
}

/// Hands out `SYN-000001`, `SYN-000002`, ... across threads.
#[derive(Debug)]
pub struct SyntheticIdAllocator {
    next: AtomicU64,
}

impl Default for SyntheticIdAllocator {
    fn default() -> Self {
        Self::new()
    }
}

impl SyntheticIdAllocator {
    pub fn new() -> Self {
        Self::starting_at(1)
    }

    pub fn starting_at(first: u64) -> Self {
        Self {
            next: AtomicU64::new(first),
        }
    }

    pub fn allocate(&self) -> String {
        format!("SYN-{:06}", self.next.fetch_add(1, Ordering::Relaxed))
    }
}

/// Scrub a generated report and accept it if it still names the
/// intervention and looks like the XML-ish examples it was shown.
pub fn validate_synthetic(
    response: &str,
    intervention: &str,
    label: Label,
    provenance: Provenance,
    ids: &SyntheticIdAllocator,
) -> Result<SyntheticTrial> {
    if response.trim().is_empty() {
        return Err(LlmError::EmptyResponse);
    }
    let text = scrub_leakage(response.trim(), ScrubMode::Synthetic);
    if text.trim().is_empty() {
        return Err(LlmError::EmptyResponse);
    }
    if !text.to_lowercase().contains(&intervention.to_lowercase()) {
        return Err(LlmError::MissingIntervention(intervention.to_string()));
    }
    if !has_tag_pair(&text) {
        return Err(LlmError::NotReportShaped);
    }
    Ok(SyntheticTrial {
        trial_id: ids.allocate(),
        text,
        intervention: intervention.to_string(),
        label,
        provenance,
    })
}
