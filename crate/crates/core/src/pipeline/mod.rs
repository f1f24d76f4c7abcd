//! End-to-end synthetic trial generation.
//!
//! A run schedules units round-robin over the eligible interventions, then
//! handles each (intervention, label) pair as a group: sample one few-shot
//! set, ask once for five reasons, and request one report per scheduled
//! unit. A failed unit is logged and recorded in the [`RunManifest`]; the run
//! only fails when nothing at all was produced.

mod export;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonicalize_name, LabeledCorpus};
use crate::label::Label;
use crate::llm_gateway::{
    parse_reasons, prompt_sha256, validate_synthetic, CompletionRequest, LlmClient, Provenance, ReasonSet,
    SyntheticIdAllocator, SyntheticTrial, DEFAULT_MODEL, DEFAULT_TEMPERATURE,
};
use crate::promptforge::PromptForge;
use crate::retrieval::{
    eligible_interventions, index_by_intervention, sample_few_shot, DrugVocabulary, FewShotSet, InterventionIndex,
    SamplingParams, DEFAULT_MIN_FAILURES, DEFAULT_MIN_SUCCESSES, FEW_SHOT_K,
};

pub use export::{export_synthetic, import_synthetic, read_synthetic_jsonl, write_synthetic_jsonl};
pub use schedule::{build_schedule, derive_seed, LabelPolicy, ScheduledUnit};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("pipeline: no intervention has enough successful and failed trials")]
    NoEligibleInterventions,
    #[error("pipeline: all {units} scheduled unit(s) failed")]
    AllUnitsFailed { units: usize },
    #[error("pipeline: invalid plan: {0}")]
    InvalidPlan(String),
    #[error("pipeline: duplicate synthetic trial id {0}")]
    DuplicateTrialId(String),
    #[error("pipeline: line {line}: {reason}")]
    MalformedSyntheticLine { line: usize, reason: String },
    #[error("pipeline: provenance check failed for {trial_id}: {reason}")]
    ProvenanceMismatch { trial_id: String, reason: String },
    #[error("pipeline: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub total_trials: usize,
    pub per_intervention_cap: Option<usize>,
    pub label_policy: LabelPolicy,
    pub seed: u64,
    pub min_successes: usize,
    pub min_failures: usize,
    pub few_shot_k: usize,
    /// Resampling attempts when a few-shot set is over the token budget.
    pub sampling_attempts: usize,
}

impl GenerationPlan {
    pub fn new(total_trials: usize, seed: u64) -> Self {
        Self {
            total_trials,
            per_intervention_cap: None,
            label_policy: LabelPolicy::default(),
            seed,
            min_successes: DEFAULT_MIN_SUCCESSES,
            min_failures: DEFAULT_MIN_FAILURES,
            few_shot_k: FEW_SHOT_K,
            sampling_attempts: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_trials == 0 {
            return Err(PipelineError::InvalidPlan("total_trials must be at least 1".into()));
        }
        if self.few_shot_k == 0 {
            return Err(PipelineError::InvalidPlan("few_shot_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Source of provenance timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Always returns the same instant; keeps mock runs byte-reproducible.
#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Default for FixedClock {
    fn default() -> Self {
        FixedClock("1970-01-01T00:00:00Z".into())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

/// Everything a run needs besides data and plan.
#[derive(Clone)]
pub struct Generator {
    pub client: Arc<LlmClient>,
    pub forge: PromptForge,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub clock: Arc<dyn Clock>,
    /// Pairs processed concurrently. Keep at 1 with a scripted mock, whose
    /// replies are consumed in request order.
    pub workers: usize,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("client", &self.client)
            .field("model_name", &self.model_name)
            .field("temperature", &self.temperature)
            .field("workers", &self.workers)
            .finish_non_exhaustive()
    }
}

impl Generator {
    pub fn new(client: Arc<LlmClient>) -> Self {
        let budget = client.budget();
        Self {
            client,
            forge: PromptForge::new(budget),
            model_name: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: None,
            clock: Arc::new(SystemClock),
            workers: 1,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_model(mut self, model_name: impl Into<String>, temperature: f64) -> Self {
        self.model_name = model_name.into();
        self.temperature = temperature;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    fn complete(&self, prompt: String) -> crate::llm_gateway::Result<String> {
        let request = CompletionRequest::new(prompt, self.model_name.clone())
            .with_temperature(self.temperature)
            .with_max_output_tokens(self.max_output_tokens);
        self.client.complete(&request)
    }
}

/// Generated trials plus the sorted, deduplicated interventions they use.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    trials: Vec<SyntheticTrial>,
    intervention_names: Vec<String>,
}

impl SyntheticCorpus {
    pub fn new(trials: Vec<SyntheticTrial>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &trials {
            if !seen.insert(t.trial_id.as_str()) {
                return Err(PipelineError::DuplicateTrialId(t.trial_id.clone()));
            }
        }
        let intervention_names = canonical_names(trials.iter().map(|t| t.intervention.as_str()));
        Ok(Self {
            trials,
            intervention_names,
        })
    }

    pub fn trials(&self) -> &[SyntheticTrial] {
        &self.trials
    }

    pub fn intervention_names(&self) -> &[String] {
        &self.intervention_names
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SyntheticTrial> {
        self.trials.iter()
    }

    /// Check that every example a trial cites is a real trial with the same
    /// intervention and label.
    pub fn verify_provenance(&self, real: &LabeledCorpus) -> Result<()> {
        for t in &self.trials {
            let fail = |reason: String| PipelineError::ProvenanceMismatch {
                trial_id: t.trial_id.clone(),
                reason,
            };
            if t.provenance.example_ids.is_empty() {
                return Err(fail("no example ids".into()));
            }
            let wanted = canonicalize_name(&t.intervention);
            for id in &t.provenance.example_ids {
                let example = real.get(id).ok_or_else(|| fail(format!("unknown example {id}")))?;
                if example.label != t.label {
                    return Err(fail(format!("example {id} has label {}", example.label)));
                }
                if !example.interventions().contains(&wanted) {
                    return Err(fail(format!("example {id} does not use {wanted}")));
                }
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a SyntheticCorpus {
    type Item = &'a SyntheticTrial;
    type IntoIter = std::slice::Iter<'a, SyntheticTrial>;

    fn into_iter(self) -> Self::IntoIter {
        self.trials.iter()
    }
}

fn canonical_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    names
        .map(canonicalize_name)
        .filter(|n| !n.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Sorted, deduplicated, canonicalized intervention names of `corpus`.
pub fn list_synthetic_interventions(corpus: &SyntheticCorpus) -> Vec<String> {
    corpus.intervention_names.clone()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitStatus {
    pub intervention: String,
    pub label: Label,
    pub index: usize,
    pub status: UnitOutcome,
    pub trial_id: Option<String>,
    pub example_ids: Vec<String>,
    /// SHA-256 of the generation prompt, when one was built.
    pub prompt_sha256: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub plan: GenerationPlan,
    pub seed: u64,
    pub model_name: String,
    pub temperature: f64,
    pub created_at: String,
    pub eligible_interventions: Vec<String>,
    pub scheduled: usize,
    pub generated: usize,
    pub failed: usize,
    pub units: Vec<UnitStatus>,
}

#[derive(Debug, Clone)]
pub struct GenerationRun {
    pub corpus: SyntheticCorpus,
    pub manifest: RunManifest,
}

struct PairOutcome {
    units: Vec<(ScheduledUnit, std::result::Result<SyntheticTrial, String>, UnitStatus)>,
}

/// Run the full retrieval, reasoning and generation loop.
pub fn run_generation(
    corpus: &LabeledCorpus,
    vocab: &DrugVocabulary,
    plan: &GenerationPlan,
    generator: &Generator,
) -> Result<GenerationRun> {
    plan.validate()?;
    let index = index_by_intervention(corpus, vocab);
    let eligible = eligible_interventions(&index, plan.min_successes, plan.min_failures);
    if eligible.is_empty() {
        return Err(PipelineError::NoEligibleInterventions);
    }
    let schedule = build_schedule(
        &eligible,
        plan.total_trials,
        plan.per_intervention_cap,
        plan.label_policy,
    );
    if schedule.len() < plan.total_trials {
        log::warn!(
            "per-intervention cap limits the run to {} of {} requested trials",
            schedule.len(),
            plan.total_trials
        );
    }

    // Pairs in order of first appearance keep scripted mocks predictable.
    let mut pair_order: Vec<(String, Label)> = Vec::new();
    let mut pair_units: BTreeMap<(String, Label), Vec<ScheduledUnit>> = BTreeMap::new();
    for unit in &schedule {
        let key = (unit.intervention.clone(), unit.label);
        let entry = pair_units.entry(key.clone()).or_default();
        if entry.is_empty() {
            pair_order.push(key);
        }
        entry.push(unit.clone());
    }

    let params = SamplingParams {
        k: plan.few_shot_k,
        token_budget: generator.forge.budget(),
        max_attempts: plan.sampling_attempts,
    };
    let scratch_ids = SyntheticIdAllocator::new();
    let run_pair = |key: &(String, Label)| run_pair(&index, &pair_units[key], plan, &params, generator, &scratch_ids);
    let outcomes: Vec<PairOutcome> = if generator.workers <= 1 {
        pair_order.iter().map(run_pair).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(generator.workers)
            .build()
            .map_err(|e| PipelineError::InvalidPlan(format!("thread pool: {e}")))?;
        pool.install(|| pair_order.par_iter().map(run_pair).collect())
    };

    let mut results: Vec<_> = outcomes.into_iter().flat_map(|p| p.units).collect();
    results.sort_by(|a, b| (&a.0.intervention, a.0.label, a.0.index).cmp(&(&b.0.intervention, b.0.label, b.0.index)));

    // Final ids follow the sorted order so they do not depend on scheduling.
    let ids = SyntheticIdAllocator::new();
    let mut trials = Vec::new();
    let mut units = Vec::with_capacity(results.len());
    for (_, outcome, mut status) in results {
        if let Ok(mut trial) = outcome {
            trial.trial_id = ids.allocate();
            status.trial_id = Some(trial.trial_id.clone());
            trials.push(trial);
        }
        units.push(status);
    }

    let generated = trials.len();
    let failed = units.len() - generated;
    if generated == 0 {
        return Err(PipelineError::AllUnitsFailed { units: units.len() });
    }
    log::info!("generated {generated} synthetic trial(s), {failed} unit(s) failed");
    let manifest = RunManifest {
        plan: plan.clone(),
        seed: plan.seed,
        model_name: generator.model_name.clone(),
        temperature: generator.temperature,
        created_at: generator.clock.now(),
        eligible_interventions: eligible,
        scheduled: units.len(),
        generated,
        failed,
        units,
    };
    Ok(GenerationRun {
        corpus: SyntheticCorpus::new(trials)?,
        manifest,
    })
}

fn run_pair(
    index: &InterventionIndex<'_>,
    units: &[ScheduledUnit],
    plan: &GenerationPlan,
    params: &SamplingParams,
    generator: &Generator,
    ids: &SyntheticIdAllocator,
) -> PairOutcome {
    let first = &units[0];
    let (intervention, label) = (first.intervention.as_str(), first.label);
    let status = |unit: &ScheduledUnit, examples: &[String], sha: Option<String>, error: Option<String>| UnitStatus {
        intervention: unit.intervention.clone(),
        label: unit.label,
        index: unit.index,
        status: if error.is_some() {
            UnitOutcome::Failed
        } else {
            UnitOutcome::Ok
        },
        trial_id: None,
        example_ids: examples.to_vec(),
        prompt_sha256: sha,
        error,
    };
    let fail_all = |examples: &[String], error: String| {
        log::warn!("{intervention} ({label}): {error}");
        PairOutcome {
            units: units
                .iter()
                .map(|u| {
                    (
                        u.clone(),
                        Err(error.clone()),
                        status(u, examples, None, Some(error.clone())),
                    )
                })
                .collect(),
        }
    };

    let seed = derive_seed(plan.seed, intervention, label);
    let fewshot = match sample_few_shot(index, intervention, label, params, seed, generator.forge.estimator()) {
        Ok(f) => f,
        Err(e) => return fail_all(&[], e.to_string()),
    };
    let example_ids = fewshot.example_ids();
    let reasons = match request_reasons(&fewshot, generator) {
        Ok(r) => r,
        Err(e) => return fail_all(&example_ids, e),
    };

    let mut out = Vec::with_capacity(units.len());
    for unit in units {
        let with_diversity = unit.index > 0;
        let bundle = match generator
            .forge
            .build_generation_prompt(&fewshot, &reasons, with_diversity)
        {
            Ok(b) => b,
            Err(e) => {
                let msg = e.to_string();
                log::warn!("{intervention} ({label}) #{}: {msg}", unit.index);
                out.push((
                    unit.clone(),
                    Err(msg.clone()),
                    status(unit, &example_ids, None, Some(msg)),
                ));
                continue;
            }
        };
        let prompt = bundle.render();
        let sha = prompt_sha256(&prompt);
        let provenance = Provenance {
            example_ids: example_ids.clone(),
            reasons: reasons.reasons.clone(),
            model_name: generator.model_name.clone(),
            temperature: generator.temperature,
            seed: plan.seed,
            timestamp: generator.clock.now(),
        };
        let result = generator
            .complete(prompt)
            .and_then(|text| validate_synthetic(&text, intervention, label, provenance, ids));
        match result {
            Ok(trial) => out.push((unit.clone(), Ok(trial), status(unit, &example_ids, Some(sha), None))),
            Err(e) => {
                let msg = e.to_string();
                log::warn!("{intervention} ({label}) #{}: {msg}", unit.index);
                out.push((
                    unit.clone(),
                    Err(msg.clone()),
                    status(unit, &example_ids, Some(sha), Some(msg)),
                ));
            }
        }
    }
    PairOutcome { units: out }
}

fn request_reasons(fewshot: &FewShotSet<'_>, generator: &Generator) -> std::result::Result<ReasonSet, String> {
    let bundle = generator
        .forge
        .build_reasoning_prompt(fewshot, false)
        .map_err(|e| e.to_string())?;
    let reply = generator.complete(bundle.render()).map_err(|e| e.to_string())?;
    parse_reasons(&reply, &fewshot.intervention, fewshot.label).map_err(|e| e.to_string())
}
