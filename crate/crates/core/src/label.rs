//! Binary trial outcome.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Trial outcome: `0` is failure, `1` is success.
///
/// Serialized as the bare integer so JSON-lines and CSV files carry `0`/`1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Failure,
    Success,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Failure => 0,
            Label::Success => 1,
        }
    }

    pub fn is_success(self) -> bool {
        self == Label::Success
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Failure => Label::Success,
            Label::Success => Label::Failure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("label must be 0 or 1, got {0}")]
pub struct InvalidLabel(pub u8);

impl TryFrom<u8> for Label {
    type Error = InvalidLabel;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Failure),
            1 => Ok(Label::Success),
            other => Err(InvalidLabel(other)),
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

impl From<bool> for Label {
    fn from(success: bool) -> Self {
        if success {
            Label::Success
        } else {
            Label::Failure
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}
