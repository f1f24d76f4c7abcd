//! Reasoning and generation prompt assembly.
//!
//! A prompt is an ordered list of categorized segments, rendered by joining
//! the segment texts with one blank line. Templates live in `templates/` and
//! use the placeholders `{intervention}`, `{outcome_word}`, `{reasons}` and
//! `{trial}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledTrial;
use crate::label::Label;
use crate::llm_gateway::{ReasonSet, REASON_COUNT};
use crate::retrieval::{FewShotSet, FEW_SHOT_K};
use crate::tokens::{ByteHeuristic, TokenEstimator, DEFAULT_TOKEN_BUDGET};

const EXAMPLE: &str = include_str!("../templates/example.txt");
const REASONING_CONTEXT: &str = include_str!("../templates/reasoning/context.txt");
const REASONING_CONSTRAINT: &str = include_str!("../templates/reasoning/constraint.txt");
const REASONING_GENERATION: &str = include_str!("../templates/reasoning/generation.txt");
const REASONING_DIVERSITY: &str = include_str!("../templates/reasoning/diversity.txt");
const GENERATION_CONTEXT: &str = include_str!("../templates/generation/context.txt");
const GENERATION_REASONING: &str = include_str!("../templates/generation/reasoning.txt");
const GENERATION_CONSTRAINT: &str = include_str!("../templates/generation/constraint.txt");
const GENERATION_GENERATION: &str = include_str!("../templates/generation/generation.txt");
const GENERATION_DIVERSITY: &str = include_str!("../templates/generation/diversity.txt");

const SEGMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("promptforge: prompt estimated at {estimated} tokens exceeds budget {budget}")]
    TokenBudgetExceeded { estimated: usize, budget: usize },
    #[error("promptforge: expected {REASON_COUNT} reasons, got {0}")]
    WrongReasonCount(usize),
    #[error("promptforge: expected {FEW_SHOT_K} examples, got {0}")]
    WrongExampleCount(usize),
    #[error("promptforge: reasons are for {reasons_for:?}, examples for {examples_for:?}")]
    ReasonMismatch {
        reasons_for: (String, Label),
        examples_for: (String, Label),
    },
    #[error("promptforge: unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentCategory {
    Context,
    Reasoning,
    Example,
    Constraint,
    Generation,
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSegment {
    pub category: SegmentCategory,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    Reasoning,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub purpose: PromptPurpose,
    pub segments: Vec<PromptSegment>,
    pub estimated_tokens: usize,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        render(self)
    }

    pub fn count(&self, category: SegmentCategory) -> usize {
        self.segments.iter().filter(|s| s.category == category).count()
    }
}

/// Segment texts in order, separated by one blank line.
pub fn render(bundle: &PromptBundle) -> String {
    bundle
        .segments
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(SEGMENT_SEPARATOR)
}

impl fmt::Display for PromptBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Substitute `{name}` placeholders in a single left-to-right pass; inserted
/// values are never rescanned, so braces inside trial text are harmless.
fn fill(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let template = template.trim_end_matches('\n');
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .filter(|&c| after[..c].chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_'))
            .filter(|&c| c > 0);
        match close {
            Some(close) => {
                let name = &after[..close];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnresolvedPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn example_header_word(label: Label) -> &'static str {
    match label {
        Label::Success => "Successful",
        Label::Failure => "Failed",
    }
}

fn example_segment(label: Label, trial: &LabeledTrial) -> Result<PromptSegment> {
    let text = fill(
        EXAMPLE,
        &[
            ("outcome_word", example_header_word(label)),
            ("trial", trial.text.trim_end()),
        ],
    )?;
    Ok(PromptSegment {
        category: SegmentCategory::Example,
        text,
    })
}

/// The example segments for `examples`, rendered as they appear in a prompt.
pub fn example_block(label: Label, examples: &[&LabeledTrial]) -> String {
    examples
        .iter()
        .map(|t| example_segment(label, t).map(|s| s.text))
        .collect::<Result<Vec<_>>>()
        .expect("example template has only known placeholders")
        .join(SEGMENT_SEPARATOR)
}

/// Numbered reason list, one per line: `1. first\n2. second...`.
pub fn format_reasons(reasons: &[String]) -> String {
    reasons
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}", i + 1, r.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn segment(category: SegmentCategory, template: &str, values: &[(&str, &str)]) -> Result<PromptSegment> {
    Ok(PromptSegment {
        category,
        text: fill(template, values)?,
    })
}

/// Builds prompts and enforces the token budget on the rendered result.
#[derive(Clone)]
pub struct PromptForge {
    budget: usize,
    estimator: Arc<dyn TokenEstimator>,
}

impl fmt::Debug for PromptForge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptForge").field("budget", &self.budget).finish()
    }
}

impl Default for PromptForge {
    fn default() -> Self {
        Self::new(DEFAULT_TOKEN_BUDGET)
    }
}

impl PromptForge {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            estimator: Arc::new(ByteHeuristic),
        }
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn estimator(&self) -> &dyn TokenEstimator {
        self.estimator.as_ref()
    }

    /// Context, three examples, constraint, generation, optional diversity.
    pub fn build_reasoning_prompt(&self, fewshot: &FewShotSet<'_>, with_diversity: bool) -> Result<PromptBundle> {
        check_examples(fewshot)?;
        let intervention = fewshot.intervention.as_str();
        let verb = match fewshot.label {
            Label::Success => "succeed",
            Label::Failure => "fail",
        };

        let mut segments = vec![segment(SegmentCategory::Context, REASONING_CONTEXT, &[])?];
        for trial in &fewshot.examples {
            segments.push(example_segment(fewshot.label, trial)?);
        }
        segments.push(segment(SegmentCategory::Constraint, REASONING_CONSTRAINT, &[])?);
        segments.push(segment(
            SegmentCategory::Generation,
            REASONING_GENERATION,
            &[("intervention", intervention), ("outcome_word", verb)],
        )?);
        if with_diversity {
            segments.push(segment(SegmentCategory::Diversity, REASONING_DIVERSITY, &[])?);
        }
        self.finish(PromptPurpose::Reasoning, segments)
    }

    /// Context, reasons, three examples, constraint, generation, optional
    /// diversity.
    pub fn build_generation_prompt(
        &self,
        fewshot: &FewShotSet<'_>,
        reasons: &ReasonSet,
        with_diversity: bool,
    ) -> Result<PromptBundle> {
        check_examples(fewshot)?;
        if reasons.reasons.len() != REASON_COUNT {
            return Err(PromptError::WrongReasonCount(reasons.reasons.len()));
        }
        if reasons.intervention != fewshot.intervention || reasons.label != fewshot.label {
            return Err(PromptError::ReasonMismatch {
                reasons_for: (reasons.intervention.clone(), reasons.label),
                examples_for: (fewshot.intervention.clone(), fewshot.label),
            });
        }
        let intervention = fewshot.intervention.as_str();
        let (noun, adjective) = match fewshot.label {
            Label::Success => ("success", "successful"),
            Label::Failure => ("failure", "failed"),
        };
        let reason_list = format_reasons(&reasons.reasons);

        let mut segments = vec![
            segment(SegmentCategory::Context, GENERATION_CONTEXT, &[])?,
            segment(
                SegmentCategory::Reasoning,
                GENERATION_REASONING,
                &[
                    ("outcome_word", noun),
                    ("intervention", intervention),
                    ("reasons", &reason_list),
                ],
            )?,
        ];
        for trial in &fewshot.examples {
            segments.push(example_segment(fewshot.label, trial)?);
        }
        segments.push(segment(
            SegmentCategory::Constraint,
            GENERATION_CONSTRAINT,
            &[("intervention", intervention)],
        )?);
        segments.push(segment(
            SegmentCategory::Generation,
            GENERATION_GENERATION,
            &[("outcome_word", adjective), ("intervention", intervention)],
        )?);
        if with_diversity {
            segments.push(segment(SegmentCategory::Diversity, GENERATION_DIVERSITY, &[])?);
        }
        self.finish(PromptPurpose::Generation, segments)
    }

    fn finish(&self, purpose: PromptPurpose, segments: Vec<PromptSegment>) -> Result<PromptBundle> {
        let mut bundle = PromptBundle {
            purpose,
            segments,
            estimated_tokens: 0,
        };
        bundle.estimated_tokens = self.estimator.estimate(&bundle.render());
        if bundle.estimated_tokens > self.budget {
            return Err(PromptError::TokenBudgetExceeded {
                estimated: bundle.estimated_tokens,
                budget: self.budget,
            });
        }
        Ok(bundle)
    }
}

fn check_examples(fewshot: &FewShotSet<'_>) -> Result<()> {
    if fewshot.examples.len() != FEW_SHOT_K {
        return Err(PromptError::WrongExampleCount(fewshot.examples.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TrialRecord;

    fn trial(id: &str, label: Label, text: &str) -> LabeledTrial {
        LabeledTrial {
            record: TrialRecord {
                trial_id: id.into(),
                raw_xml: String::new(),
                fields: vec![],
                intervention_names: vec!["aspirin".into()],
                overall_status: None,
                why_stop: None,
            },
            text: text.into(),
            label,
        }
    }

    fn reasons(label: Label) -> ReasonSet {
        ReasonSet {
            intervention: "aspirin".into(),
            label,
            reasons: (1..=5)
                .map(|i| format!("reason {}", ["one", "two", "three", "four", "five"][i - 1]))
                .collect(),
        }
    }

    #[test]
    fn fill_rules() {
        assert_eq!(fill("a {x} b", &[("x", "{y}")]).unwrap(), "a {y} b");
        assert_eq!(fill("keep {} and { x }", &[]).unwrap(), "keep {} and { x }");
        assert_eq!(
            fill("{missing}", &[]),
            Err(PromptError::UnresolvedPlaceholder("missing".into()))
        );
        assert_eq!(fill("line\n", &[]).unwrap(), "line");
    }

    #[test]
    fn render_join_rule() {
        let bundle = PromptBundle {
            purpose: PromptPurpose::Reasoning,
            segments: ["A", "B"]
                .iter()
                .map(|t| PromptSegment {
                    category: SegmentCategory::Context,
                    text: t.to_string(),
                })
                .collect(),
            estimated_tokens: 0,
        };
        assert_eq!(render(&bundle), "A\n\nB");
        assert_eq!(render(&bundle), bundle.to_string());
    }

    #[test]
    fn reasoning_prompt_shape() {
        let trials: Vec<_> = (0..3)
            .map(|i| trial(&format!("NCT{i}"), Label::Success, "brief_title: t\n"))
            .collect();
        let fewshot = FewShotSet {
            intervention: "aspirin".into(),
            label: Label::Success,
            examples: trials.iter().collect(),
            total_tokens: 0,
        };
        let forge = PromptForge::default();
        let bundle = forge.build_reasoning_prompt(&fewshot, false).unwrap();
        let cats: Vec<_> = bundle.segments.iter().map(|s| s.category).collect();
        use SegmentCategory::*;
        assert_eq!(cats, [Context, Example, Example, Example, Constraint, Generation]);
        let generation = &bundle.segments[5].text;
        assert!(generation.contains("Write 5 reasons leading"));
        assert!(generation.contains("to succeed"));
        assert!(bundle.segments[1]
            .text
            .starts_with("Successful clinical trial example:\n"));

        let with_div = forge.build_reasoning_prompt(&fewshot, true).unwrap();
        assert_eq!(with_div.segments.last().unwrap().category, Diversity);
        assert_eq!(with_div.count(Example), 3);
    }

    #[test]
    fn failed_headers() {
        let trials: Vec<_> = (0..3).map(|i| trial(&format!("NCT{i}"), Label::Failure, "x")).collect();
        let fewshot = FewShotSet {
            intervention: "aspirin".into(),
            label: Label::Failure,
            examples: trials.iter().collect(),
            total_tokens: 0,
        };
        let bundle = PromptForge::default().build_reasoning_prompt(&fewshot, false).unwrap();
        for s in bundle
            .segments
            .iter()
            .filter(|s| s.category == SegmentCategory::Example)
        {
            assert!(s.text.starts_with("Failed clinical trial example:"));
        }
        assert!(bundle.segments[5].text.contains("aspirin to fail in these trials"));
    }

    #[test]
    fn generation_prompt_checks() {
        let trials: Vec<_> = (0..3).map(|i| trial(&format!("NCT{i}"), Label::Failure, "x")).collect();
        let fewshot = FewShotSet {
            intervention: "aspirin".into(),
            label: Label::Failure,
            examples: trials.iter().collect(),
            total_tokens: 0,
        };
        let forge = PromptForge::default();
        let bundle = forge
            .build_generation_prompt(&fewshot, &reasons(Label::Failure), false)
            .unwrap();
        let rendered = bundle.render();
        assert!(rendered.contains("strictly follow the XML-like format"));
        assert!(rendered.contains("The intervention name must be aspirin,"));
        assert!(rendered.contains("Write a report of a failed clinical trial of aspirin."));
        assert!(rendered.contains("lead to the failure of clinical trials of aspirin:\n1. reason one\n"));
        assert_eq!(bundle.count(SegmentCategory::Reasoning), 1);
        assert_eq!(bundle.count(SegmentCategory::Example), 3);

        let mut four = reasons(Label::Failure);
        four.reasons.pop();
        assert_eq!(
            forge.build_generation_prompt(&fewshot, &four, false),
            Err(PromptError::WrongReasonCount(4))
        );
        assert!(matches!(
            forge.build_generation_prompt(&fewshot, &reasons(Label::Success), false),
            Err(PromptError::ReasonMismatch { .. })
        ));
    }

    #[test]
    fn budget_enforced() {
        let trials: Vec<_> = (0..3)
            .map(|i| trial(&format!("NCT{i}"), Label::Success, &"z".repeat(400)))
            .collect();
        let fewshot = FewShotSet {
            intervention: "aspirin".into(),
            label: Label::Success,
            examples: trials.iter().collect(),
            total_tokens: 0,
        };
        let tight = PromptForge::new(100);
        assert!(matches!(
            tight.build_reasoning_prompt(&fewshot, false),
            Err(PromptError::TokenBudgetExceeded { budget: 100, .. })
        ));
        let roomy = PromptForge::new(10_000);
        let bundle = roomy.build_reasoning_prompt(&fewshot, false).unwrap();
        assert_eq!(bundle.estimated_tokens, ByteHeuristic.estimate(&bundle.render()));
    }

    #[test]
    fn example_count_checked() {
        let trials: Vec<_> = (0..2).map(|i| trial(&format!("NCT{i}"), Label::Success, "x")).collect();
        let fewshot = FewShotSet {
            intervention: "aspirin".into(),
            label: Label::Success,
            examples: trials.iter().collect(),
            total_tokens: 0,
        };
        assert_eq!(
            PromptForge::default().build_reasoning_prompt(&fewshot, false),
            Err(PromptError::WrongExampleCount(2))
        );
    }
}
