//! Records that flow between pipeline stages.

use serde::{Deserialize, Serialize};

use crate::catalog::GenerationConstraints;

/// Maximum rendered output length a validated case may carry.
pub const MAX_OUTPUT_CHARS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseRecord {
    pub id: String,
    pub code: String,
    pub entry_point: String,
    /// Argument list in tuple form, e.g. `(3,)`.
    pub input_literal: String,
    pub expected_output_literal: Option<String>,
    pub constraints: Option<GenerationConstraints>,
    pub lineage: Lineage,
    pub status: CaseStatus,
    #[serde(default)]
    pub provenance: Provenance,
}

impl TestCaseRecord {
    /// A raw base case with no constraints attached.
    pub fn raw(id: impl Into<String>, code: impl Into<String>, input_literal: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            code: code.into(),
            entry_point: "f".into(),
            input_literal: input_literal.into(),
            expected_output_literal: None,
            constraints: None,
            lineage: Lineage::Base,
            status: CaseStatus::Raw,
            provenance: Provenance::default(),
        }
    }

    pub fn is_validated(&self) -> bool {
        self.status == CaseStatus::Validated
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lineage {
    Base,
    Mutant {
        parent_id: String,
        seed: u64,
        /// Container elements were mutated recursively, not only top-level scalars.
        recursive: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CaseStatus {
    Raw,
    Validated,
    Discarded { reason: DiscardReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    RuntimeError,
    Timeout,
    Oversized,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::RuntimeError => "runtime_error",
            DiscardReason::Timeout => "timeout",
            DiscardReason::Oversized => "oversized",
        }
    }
}

/// Where a record came from: which stage wrote it and with what resources.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub stage_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
}

impl Provenance {
    pub fn stage(stage: &str, stage_version: u32) -> Self {
        Self {
            stage: stage.to_string(),
            stage_version,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}
