//! JSON wire protocol spoken with the interpreter-side harness.
//!
//! The orchestrator writes one [`WireRequest`] to the child's stdin and reads
//! exactly one [`WireResponse`] document from its stdout:
//!
//! ```text
//! request : {"code": str, "entry_point": str, "input_literal": str, "mode": "plain" | "trace"}
//! response: {"status": "ok" | "runtime_error" | ...,
//!            "output_literal": str | null,
//!            "stdout_text": str,
//!            "error_kind": str | null,
//!            "trace": {"executed_lines": [int],
//!                      "state_events": [[line, name, type, value] | {"line", "name", "type_name", "value"}],
//!                      "next_line_pairs": [[line, line]]} | null}
//! ```
//!
//! The child exits 0 for every well-formed response; a nonzero exit means the
//! harness itself failed.

use serde::{Deserialize, Deserializer, Serialize};

use super::{ExecError, ExecMode, ExecStatus, Execution, ExecutionResult, ExecutionTrace, StateEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub code: String,
    pub entry_point: String,
    pub input_literal: String,
    pub mode: ExecMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: ExecStatus,
    #[serde(default)]
    pub output_literal: Option<String>,
    #[serde(default)]
    pub stdout_text: String,
    #[serde(default)]
    pub error_kind: Option<String>,
    #[serde(default)]
    pub trace: Option<WireTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTrace {
    pub executed_lines: Vec<u32>,
    #[serde(default)]
    pub state_events: Vec<StateEvent>,
    /// Derived from `executed_lines` when omitted.
    #[serde(default)]
    pub next_line_pairs: Option<Vec<(u32, u32)>>,
}

impl<'de> Deserialize<'de> for StateEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Tuple(u32, String, String, String),
            Object {
                line: u32,
                #[serde(alias = "variable", alias = "variable_name")]
                name: String,
                #[serde(alias = "type")]
                type_name: String,
                #[serde(alias = "value_literal")]
                value: String,
            },
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Tuple(line, name, type_name, value) | Repr::Object { line, name, type_name, value } => StateEvent {
                line,
                name,
                type_name,
                value,
            },
        })
    }
}

impl WireResponse {
    pub fn parse(stdout: &[u8]) -> Result<Self, ExecError> {
        let text = std::str::from_utf8(stdout).map_err(|e| ExecError::Protocol(format!("stdout is not UTF-8: {e}")))?;
        serde_json::from_str(text.trim()).map_err(|e| ExecError::Protocol(format!("stdout is not one response document: {e}")))
    }

    /// Validate against the request mode and normalize into an [`Execution`].
    pub fn into_execution(self, mode: ExecMode) -> Result<Execution, ExecError> {
        let ok = self.status == ExecStatus::Ok;
        if ok && self.output_literal.is_none() {
            return Err(ExecError::Protocol("status ok without output_literal".into()));
        }
        let trace = match (mode, ok, self.trace) {
            (ExecMode::Trace, true, None) => {
                return Err(ExecError::Protocol("trace mode response without a trace".into()));
            }
            (ExecMode::Trace, true, Some(t)) => {
                let derived = ExecutionTrace::from_lines(t.executed_lines, t.state_events);
                if let Some(pairs) = t.next_line_pairs {
                    if pairs != derived.next_line_pairs {
                        return Err(ExecError::Protocol("next_line_pairs do not follow executed_lines".into()));
                    }
                }
                Some(derived)
            }
            _ => None,
        };
        Ok(Execution {
            result: ExecutionResult {
                status: self.status,
                output_literal: if ok { self.output_literal } else { None },
                stdout_text: self.stdout_text,
                error_kind: self.error_kind,
            },
            trace,
        })
    }
}
