//! Execution-based filtering of generated cases and rejection sampling of
//! teacher reasoning traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::case::{CaseStatus, Provenance, Direction, DiscardReason, TestCaseRecord, MAX_OUTPUT_CHARS};
use crate::exec::{ExecBackend, ExecError, ExecMode, ExecStatus, ExecutionRequest};
use crate::literal::{literal_text_eq, normalize_input_answer};
use crate::pool::bounded_map;
use crate::teacher::{build_cot_prompt, parse_teacher_output, ParsedTeacherOutput};

pub const FILTER_STAGE_VERSION: u32 = 1;
pub const DISTILL_STAGE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("execution backend failed: {0}")]
    Exec(#[from] ExecError),
    #[error("no interpreter available to run case {case_id}")]
    InterpreterMissing { case_id: String },
    #[error("case {case_id} is not validated")]
    NotValidated { case_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    CodeError,
    WrongAnswer,
    NoCode,
    MalformedTags,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::CodeError => "code_error",
            RejectReason::WrongAnswer => "wrong_answer",
            RejectReason::NoCode => "no_code",
            RejectReason::MalformedTags => "malformed_tags",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillationRecord {
    pub case_id: String,
    pub direction: Direction,
    pub prompt_text: String,
    pub reasoning_text: String,
    pub answer_literal: String,
    pub accepted: bool,
    pub reject_reason: Option<RejectReason>,
    #[serde(default)]
    pub provenance: Provenance,
}

fn run_plain(exec: &dyn ExecBackend, case_id: &str, code: &str, entry: &str, input: &str) -> Result<crate::exec::ExecutionResult, FilterError> {
    let result = exec
        .run(&ExecutionRequest::new(code, entry, input, ExecMode::Plain))?
        .result;
    if result.status == ExecStatus::InterpreterMissing {
        return Err(FilterError::InterpreterMissing {
            case_id: case_id.to_string(),
        });
    }
    Ok(result)
}

/// Run a raw case once and settle its status. Cases that are already
/// validated or discarded come back unchanged.
pub fn validate_case(case: &TestCaseRecord, exec: &dyn ExecBackend) -> Result<TestCaseRecord, FilterError> {
    if case.status != CaseStatus::Raw {
        return Ok(case.clone());
    }
    let result = run_plain(exec, &case.id, &case.code, &case.entry_point, &case.input_literal)?;
    let mut out = case.clone();
    out.status = match result.status {
        ExecStatus::Ok => {
            let rendered = result.output_literal.unwrap_or_default();
            if rendered.chars().count() > MAX_OUTPUT_CHARS {
                out.expected_output_literal = None;
                CaseStatus::Discarded {
                    reason: DiscardReason::Oversized,
                }
            } else {
                out.expected_output_literal = Some(rendered);
                CaseStatus::Validated
            }
        }
        ExecStatus::RuntimeError => CaseStatus::Discarded {
            reason: DiscardReason::RuntimeError,
        },
        ExecStatus::Timeout => CaseStatus::Discarded {
            reason: DiscardReason::Timeout,
        },
        // Output beyond the byte cap is necessarily beyond the character bound.
        ExecStatus::OversizedOutput => CaseStatus::Discarded {
            reason: DiscardReason::Oversized,
        },
        ExecStatus::InterpreterMissing => unreachable!("handled in run_plain"),
    };
    Ok(out)
}

/// Counts of validated and discarded cases by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub validated: usize,
    pub discarded: BTreeMap<DiscardReason, usize>,
}

impl FilterStats {
    pub fn tally(cases: &[TestCaseRecord]) -> Self {
        let mut s = Self::default();
        for c in cases {
            match &c.status {
                CaseStatus::Validated => s.validated += 1,
                CaseStatus::Discarded { reason } => *s.discarded.entry(*reason).or_default() += 1,
                CaseStatus::Raw => {}
            }
        }
        s
    }
}

/// Validate a batch on `jobs` workers. Any infrastructure error aborts the
/// batch.
pub fn validate_all(cases: &[TestCaseRecord], exec: &dyn ExecBackend, jobs: usize) -> Result<Vec<TestCaseRecord>, FilterError> {
    bounded_map(cases, jobs, |c| validate_case(c, exec)).into_iter().collect()
}

fn base_record(case: &TestCaseRecord, parsed: &ParsedTeacherOutput, direction: Direction) -> Result<DistillationRecord, FilterError> {
    if !case.is_validated() || case.expected_output_literal.is_none() {
        return Err(FilterError::NotValidated {
            case_id: case.id.clone(),
        });
    }
    Ok(DistillationRecord {
        case_id: case.id.clone(),
        direction,
        prompt_text: build_cot_prompt(case, direction).user_text,
        reasoning_text: parsed.reasoning_text.clone().unwrap_or_default(),
        answer_literal: parsed.answer_literal.clone().unwrap_or_default(),
        accepted: false,
        reject_reason: None,
        provenance: Provenance::stage("distill", DISTILL_STAGE_VERSION),
    })
}

/// Decide whether one parsed teacher response is kept for distillation.
///
/// The code block must run cleanly on the case input. With `strict`, the
/// answer must also be right: equal to the expected output going forward, or
/// an input that reproduces it going backward.
pub fn rejection_sample_trace(
    case: &TestCaseRecord,
    parsed: &ParsedTeacherOutput,
    direction: Direction,
    exec: &dyn ExecBackend,
    strict: bool,
) -> Result<DistillationRecord, FilterError> {
    let mut record = base_record(case, parsed, direction)?;
    let expected = case.expected_output_literal.as_deref().unwrap_or_default();
    let reason = match (&parsed.code_block, &parsed.answer_literal) {
        (None, _) => Some(RejectReason::NoCode),
        (Some(_), None) => Some(RejectReason::MalformedTags),
        (Some(code), Some(answer)) => {
            let ran = run_plain(exec, &case.id, code, &case.entry_point, &case.input_literal)?;
            if ran.status != ExecStatus::Ok {
                Some(RejectReason::CodeError)
            } else if strict && !answer_is_correct(case, expected, answer, direction, exec)? {
                Some(RejectReason::WrongAnswer)
            } else {
                None
            }
        }
    };
    record.accepted = reason.is_none();
    record.reject_reason = reason;
    Ok(record)
}

fn answer_is_correct(
    case: &TestCaseRecord,
    expected: &str,
    answer: &str,
    direction: Direction,
    exec: &dyn ExecBackend,
) -> Result<bool, FilterError> {
    match direction {
        Direction::Forward => Ok(literal_text_eq(answer, expected)),
        Direction::Backward => {
            let Some(input) = normalize_input_answer(answer, &case.entry_point) else {
                return Ok(false);
            };
            let ran = run_plain(exec, &case.id, &case.code, &case.entry_point, &input)?;
            Ok(ran.status == ExecStatus::Ok
                && ran
                    .output_literal
                    .as_deref()
                    .is_some_and(|out| literal_text_eq(out, expected)))
        }
    }
}

/// [`rejection_sample_trace`] on raw teacher text; inconsistent answer tags
/// reject the trace as malformed.
pub fn rejection_sample_text(
    case: &TestCaseRecord,
    raw_text: &str,
    direction: Direction,
    exec: &dyn ExecBackend,
    strict: bool,
) -> Result<DistillationRecord, FilterError> {
    match parse_teacher_output(raw_text) {
        Ok(parsed) => rejection_sample_trace(case, &parsed, direction, exec, strict),
        Err(_) => {
            let mut record = base_record(case, &ParsedTeacherOutput::default(), direction)?;
            record.reject_reason = Some(RejectReason::MalformedTags);
            Ok(record)
        }
    }
}
