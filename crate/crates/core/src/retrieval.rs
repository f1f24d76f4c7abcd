//! Drug-intervention retrieval: vocabulary filtering, outcome-count
//! eligibility and seeded few-shot example sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{canonicalize_name, LabeledCorpus, LabeledTrial};
use crate::label::Label;
use crate::promptforge::example_block;
use crate::tokens::{TokenEstimator, DEFAULT_TOKEN_BUDGET};

/// Few-shot examples per prompt.
pub const FEW_SHOT_K: usize = 3;
pub const DEFAULT_MIN_SUCCESSES: usize = 3;
pub const DEFAULT_MIN_FAILURES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("retrieval: drug vocabulary is empty")]
    EmptyVocabulary,
    #[error("retrieval: intervention {0:?} is not in the index")]
    UnknownIntervention(String),
    #[error("retrieval: {intervention:?} has {available} trials with label {label}, need {needed}")]
    NotEnoughExamples {
        intervention: String,
        label: Label,
        available: usize,
        needed: usize,
    },
    #[error("retrieval: every sample for {intervention:?} (label {label}) exceeded {budget} tokens after {attempts} attempts")]
    TokenBudgetExhausted {
        intervention: String,
        label: Label,
        budget: usize,
        attempts: usize,
    },
    #[error("retrieval: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

/// Canonicalized drug names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrugVocabulary {
    names: BTreeSet<String>,
}

impl DrugVocabulary {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let names: BTreeSet<String> = names
            .into_iter()
            .map(|n| canonicalize_name(n.as_ref()))
            .filter(|n| !n.is_empty())
            .collect();
        if names.is_empty() {
            return Err(RetrievalError::EmptyVocabulary);
        }
        Ok(Self { names })
    }

    /// One name per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_names(text.lines())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

pub fn load_drug_vocab(path: &Path) -> Result<DrugVocabulary> {
    let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DrugVocabulary::parse(&text)
}

/// Trials of one intervention, split by outcome.
#[derive(Debug, Clone, Default)]
pub struct InterventionTrials<'a> {
    pub successes: Vec<&'a LabeledTrial>,
    pub failures: Vec<&'a LabeledTrial>,
}

impl<'a> InterventionTrials<'a> {
    pub fn side(&self, label: Label) -> &[&'a LabeledTrial] {
        match label {
            Label::Success => &self.successes,
            Label::Failure => &self.failures,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InterventionIndex<'a> {
    entries: BTreeMap<String, InterventionTrials<'a>>,
}

impl<'a> InterventionIndex<'a> {
    pub fn get(&self, intervention: &str) -> Option<&InterventionTrials<'a>> {
        self.entries.get(intervention)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &InterventionTrials<'a>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Index corpus trials under every vocabulary drug they list.
pub fn index_by_intervention<'a>(corpus: &'a LabeledCorpus, vocab: &DrugVocabulary) -> InterventionIndex<'a> {
    let mut entries: BTreeMap<String, InterventionTrials<'a>> = BTreeMap::new();
    for trial in corpus {
        for name in trial.interventions() {
            if !vocab.contains(name) {
                continue;
            }
            let entry = entries.entry(name.clone()).or_default();
            match trial.label {
                Label::Success => entry.successes.push(trial),
                Label::Failure => entry.failures.push(trial),
            }
        }
    }
    InterventionIndex { entries }
}

/// Interventions with at least `min_successes` successful and `min_failures`
/// failed trials, sorted.
pub fn eligible_interventions(index: &InterventionIndex<'_>, min_successes: usize, min_failures: usize) -> Vec<String> {
    index
        .entries
        .iter()
        .filter(|(_, t)| t.successes.len() >= min_successes && t.failures.len() >= min_failures)
        .map(|(name, _)| name.clone())
        .collect()
}

/// CSV `intervention,success_count,failure_count` for the given names.
pub fn write_eligibility_report<W: Write>(
    index: &InterventionIndex<'_>,
    names: &[String],
    out: W,
) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["intervention", "success_count", "failure_count"])?;
    for name in names {
        let (s, f) = index
            .get(name)
            .map_or((0, 0), |t| (t.successes.len(), t.failures.len()));
        writer.write_record([name.as_str(), &s.to_string(), &f.to_string()])?;
    }
    writer.flush()
}

/// Same-intervention, same-label example set.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSet<'a> {
    pub intervention: String,
    pub label: Label,
    pub examples: Vec<&'a LabeledTrial>,
    /// Estimated tokens of the rendered example block.
    pub total_tokens: usize,
}

impl FewShotSet<'_> {
    pub fn example_ids(&self) -> Vec<String> {
        self.examples.iter().map(|t| t.trial_id().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingParams {
    pub k: usize,
    pub token_budget: usize,
    pub max_attempts: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            k: FEW_SHOT_K,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_attempts: 5,
        }
    }
}

/// Draw `k` distinct trials uniformly without replacement.
///
/// Attempt `i` (0-based) uses RNG seed `seed + i`; an attempt whose example
/// block is estimated above the budget is discarded and the next one tried.
pub fn sample_few_shot<'a>(
    index: &InterventionIndex<'a>,
    intervention: &str,
    label: Label,
    params: &SamplingParams,
    seed: u64,
    estimator: &dyn TokenEstimator,
) -> Result<FewShotSet<'a>> {
    let trials = index
        .get(intervention)
        .ok_or_else(|| RetrievalError::UnknownIntervention(intervention.to_string()))?;
    let side = trials.side(label);
    if params.k == 0 || side.len() < params.k {
        return Err(RetrievalError::NotEnoughExamples {
            intervention: intervention.to_string(),
            label,
            available: side.len(),
            needed: params.k,
        });
    }

    for attempt in 0..params.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let examples: Vec<&'a LabeledTrial> = rand::seq::index::sample(&mut rng, side.len(), params.k)
            .into_iter()
            .map(|i| side[i])
            .collect();
        let total_tokens = estimator.estimate(&example_block(label, &examples));
        if total_tokens <= params.token_budget {
            return Ok(FewShotSet {
                intervention: intervention.to_string(),
                label,
                examples,
                total_tokens,
            });
        }
        log::debug!("few-shot sample {attempt} for {intervention} ({label}) is {total_tokens} tokens, over budget");
    }
    Err(RetrievalError::TokenBudgetExhausted {
        intervention: intervention.to_string(),
        label,
        budget: params.token_budget,
        attempts: params.max_attempts,
    })
}
