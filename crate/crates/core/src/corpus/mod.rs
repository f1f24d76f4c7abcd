//! Real trial corpus: XML records, their flattened text form, outcome labels
//! and leakage scrubbing.

mod io;
mod labels;
mod scrub;
mod xml;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::label::Label;

pub use io::{load_records, read_corpus_file, read_corpus_jsonl, write_corpus_jsonl, IngestReport};
pub use labels::{load_labels, parse_labels};
pub use scrub::{scrub_leakage, ScrubMode, LABEL_WORDS, LEAKY_TAGS};
pub use xml::parse_trial_xml;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus: malformed XML: {0}")]
    MalformedXml(String),
    #[error("corpus: record has no nct_id element")]
    MissingTrialId,
    #[error("corpus: line {line}: label must be 0 or 1, got {value:?}")]
    BadLabelValue { line: u64, value: String },
    #[error("corpus: duplicate trial id {0}")]
    DuplicateTrialId(String),
    #[error("corpus: malformed label file at line {line}: {reason}")]
    MalformedLabels { line: u64, reason: String },
    #[error("corpus: no record has a label")]
    EmptyCorpus,
    #[error("corpus: line {line}: {reason}")]
    MalformedCorpusLine { line: usize, reason: String },
    #[error("corpus: archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },
    #[error("corpus: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Lowercase, trim and collapse internal whitespace.
///
/// Used as the matching key for intervention and drug names everywhere.
pub fn canonicalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One parsed registry record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub raw_xml: String,
    /// `(tag-path, text)` leaf pairs in document order. The root element is
    /// not part of the path.
    pub fields: Vec<(String, String)>,
    /// Canonicalized, deduplicated, first-occurrence order.
    pub intervention_names: Vec<String>,
    pub overall_status: Option<String>,
    pub why_stop: Option<String>,
}

/// Flatten a record to `tag-path: text` lines in document order.
pub fn serialize_trial(record: &TrialRecord) -> String {
    let mut out = String::new();
    for (path, text) in &record.fields {
        out.push_str(path);
        out.push_str(": ");
        out.push_str(text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTrial {
    pub record: TrialRecord,
    /// Serialized and scrubbed (real mode) trial text.
    pub text: String,
    pub label: Label,
}

impl LabeledTrial {
    pub fn trial_id(&self) -> &str {
        &self.record.trial_id
    }

    pub fn interventions(&self) -> &[String] {
        &self.record.intervention_names
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCorpus {
    trials: Vec<LabeledTrial>,
    id_index: HashMap<String, usize>,
}

impl LabeledCorpus {
    /// Build from already-labeled trials, rejecting duplicate ids.
    pub fn from_trials(trials: Vec<LabeledTrial>) -> Result<Self> {
        let mut id_index = HashMap::with_capacity(trials.len());
        for (pos, trial) in trials.iter().enumerate() {
            if id_index.insert(trial.trial_id().to_string(), pos).is_some() {
                return Err(CorpusError::DuplicateTrialId(trial.trial_id().to_string()));
            }
        }
        Ok(Self { trials, id_index })
    }

    pub fn trials(&self) -> &[LabeledTrial] {
        &self.trials
    }

    pub fn get(&self, trial_id: &str) -> Option<&LabeledTrial> {
        self.id_index.get(trial_id).map(|&pos| &self.trials[pos])
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledTrial> {
        self.trials.iter()
    }
}

impl<'a> IntoIterator for &'a LabeledCorpus {
    type Item = &'a LabeledTrial;
    type IntoIter = std::slice::Iter<'a, LabeledTrial>;

    fn into_iter(self) -> Self::IntoIter {
        self.trials.iter()
    }
}

/// Keep the records that have a label; text is `serialize` then real-mode scrub.
pub fn build_labeled_corpus(records: Vec<TrialRecord>, labels: &BTreeMap<String, Label>) -> Result<LabeledCorpus> {
    let mut seen = HashSet::new();
    let mut trials = Vec::new();
    for record in records {
        if !seen.insert(record.trial_id.clone()) {
            return Err(CorpusError::DuplicateTrialId(record.trial_id));
        }
        let Some(&label) = labels.get(&record.trial_id) else {
            continue;
        };
        let text = scrub_leakage(&serialize_trial(&record), ScrubMode::Real);
        trials.push(LabeledTrial { record, text, label });
    }
    if trials.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    LabeledCorpus::from_trials(trials)
}
