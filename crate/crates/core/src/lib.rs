//! Retrieval-reasoning few-shot generation of labeled synthetic clinical
//! trials, and the harness used to evaluate them as training data.
//!
//! The flow is: [`corpus`] parses and labels real registry records,
//! [`retrieval`] selects drug interventions with enough successes and
//! failures and samples same-label example triples, [`promptforge`] turns
//! them into reasoning and generation prompts, [`llm_gateway`] talks to a
//! chat-completions endpoint (or a mock), and [`pipeline`] ties it together.
//! [`datasets`], [`metrics`] and [`analysis`] cover the experiments.

pub mod analysis;
pub mod corpus;
pub mod datasets;
pub mod label;
pub mod llm_gateway;
pub mod metrics;
pub mod pipeline;
pub mod promptforge;
pub mod retrieval;
pub mod tokens;

pub use label::Label;
