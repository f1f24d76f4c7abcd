use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::Label;

/// How target labels are assigned to scheduled units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Success, failure, success, ... separately for each intervention.
    #[default]
    Balanced,
    /// Success, failure, success, ... across the whole schedule.
    Alternate,
    Fixed(Label),
}

/// One trial to generate: the `index`-th unit of its (intervention, label) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledUnit {
    pub intervention: String,
    pub label: Label,
    pub index: usize,
}

/// Round-robin over `interventions` until `total` units are scheduled or
/// every intervention has reached `cap`.
pub fn build_schedule(
    interventions: &[String],
    total: usize,
    cap: Option<usize>,
    policy: LabelPolicy,
) -> Vec<ScheduledUnit> {
    let mut units = Vec::with_capacity(total);
    if interventions.is_empty() {
        return units;
    }
    let mut per_intervention = vec![0usize; interventions.len()];
    let mut per_pair: BTreeMap<(usize, Label), usize> = BTreeMap::new();
    let mut slot = 0usize;
    while units.len() < total {
        let mut progressed = false;
        for (i, name) in interventions.iter().enumerate() {
            if units.len() >= total {
                break;
            }
            if cap.is_some_and(|c| per_intervention[i] >= c) {
                continue;
            }
            let label = match policy {
                LabelPolicy::Balanced => alternating(per_intervention[i]),
                LabelPolicy::Alternate => alternating(slot),
                LabelPolicy::Fixed(label) => label,
            };
            let index = per_pair.entry((i, label)).or_insert(0);
            units.push(ScheduledUnit {
                intervention: name.clone(),
                label,
                index: *index,
            });
            *index += 1;
            per_intervention[i] += 1;
            slot += 1;
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    units
}

fn alternating(n: usize) -> Label {
    if n.is_multiple_of(2) {
        Label::Success
    } else {
        Label::Failure
    }
}

/// Stable per-pair seed: independent of platform, hasher state and of which
/// other pairs exist in the schedule.
pub fn derive_seed(seed: u64, intervention: &str, label: Label) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(intervention.as_bytes());
    hasher.update([0, label.as_u8()]);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
