//! Running synthesized programs.
//!
//! A request names a program, its entry point and a literal argument list.
//! The [`subprocess`] backend hands the request to an interpreter-side
//! harness over the JSON wire protocol in [`wire`]; the [`replay`] backend
//! answers from recorded results so that everything above this layer can be
//! tested without an interpreter.

pub mod questions;
pub mod replay;
pub mod subprocess;
pub mod wire;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use questions::{ground_truth_questions, QuestionKind, QuestionPayload, TraceQuestion};
pub use replay::{RecordingBackend, ReplayBackend, ReplayEntry, ReplayStore};
pub use subprocess::SubprocessBackend;
pub use wire::{WireRequest, WireResponse, WireTrace};

use crate::jsonl::{sha256_hex, to_canonical_string};
use crate::pool::bounded_map;

pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;
pub const DEFAULT_OUTPUT_CAP_BYTES: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("no replay fixture for request digest {digest}")]
    FixtureMissing { digest: String },
    #[error("harness exited with {exit_code:?}: {stderr}")]
    Harness { exit_code: Option<i32>, stderr: String },
    #[error("harness protocol violation: {0}")]
    Protocol(String),
    #[error("spawning interpreter: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("replay store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Plain,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub code: String,
    pub entry_point: String,
    pub input_literal: String,
    pub mode: ExecMode,
    pub timeout_ms: u64,
    pub output_cap_bytes: usize,
}

impl ExecutionRequest {
    pub fn new(code: impl Into<String>, entry_point: impl Into<String>, input_literal: impl Into<String>, mode: ExecMode) -> Self {
        Self {
            code: code.into(),
            entry_point: entry_point.into(),
            input_literal: input_literal.into(),
            mode,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            output_cap_bytes: DEFAULT_OUTPUT_CAP_BYTES,
        }
    }

    pub fn plain(code: impl Into<String>, input_literal: impl Into<String>) -> Self {
        Self::new(code, "f", input_literal, ExecMode::Plain)
    }

    pub fn with_limits(mut self, timeout_ms: u64, output_cap_bytes: usize) -> Self {
        self.timeout_ms = timeout_ms;
        self.output_cap_bytes = output_cap_bytes;
        self
    }

    pub fn wire(&self) -> WireRequest {
        WireRequest {
            code: self.code.clone(),
            entry_point: self.entry_point.clone(),
            input_literal: self.input_literal.clone(),
            mode: self.mode,
        }
    }

    /// Replay key: SHA-256 of the canonical wire request. Limits are not part
    /// of the key.
    pub fn digest(&self) -> String {
        sha256_hex(to_canonical_string(&self.wire()).as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    RuntimeError,
    Timeout,
    OversizedOutput,
    InterpreterMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    /// `repr` of the entry point's return value; present iff status is ok.
    pub output_literal: Option<String>,
    pub stdout_text: String,
    pub error_kind: Option<String>,
}

impl ExecutionResult {
    pub fn failed(status: ExecStatus) -> Self {
        Self {
            status,
            output_literal: None,
            stdout_text: String::new(),
            error_kind: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateEvent {
    pub line: u32,
    pub name: String,
    pub type_name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub executed_lines: Vec<u32>,
    pub covered_lines: BTreeSet<u32>,
    pub state_events: Vec<StateEvent>,
    pub next_line_pairs: Vec<(u32, u32)>,
}

impl ExecutionTrace {
    /// Build a trace from the executed line sequence, deriving coverage and
    /// successor pairs.
    pub fn from_lines(executed_lines: Vec<u32>, state_events: Vec<StateEvent>) -> Self {
        let covered_lines = executed_lines.iter().copied().collect();
        let next_line_pairs = executed_lines.windows(2).map(|w| (w[0], w[1])).collect();
        Self {
            executed_lines,
            covered_lines,
            state_events,
            next_line_pairs,
        }
    }

    pub fn check_consistent(&self) -> Result<(), String> {
        let covered: BTreeSet<u32> = self.executed_lines.iter().copied().collect();
        if covered != self.covered_lines {
            return Err("covered_lines differs from the set of executed_lines".into());
        }
        let expected: Vec<(u32, u32)> = self.executed_lines.windows(2).map(|w| (w[0], w[1])).collect();
        if expected != self.next_line_pairs {
            return Err("next_line_pairs do not follow executed_lines".into());
        }
        Ok(())
    }
}

/// What one run produced. `trace` is present only for successful trace-mode runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub result: ExecutionResult,
    pub trace: Option<ExecutionTrace>,
}

impl Execution {
    pub fn without_trace(result: ExecutionResult) -> Self {
        Self { result, trace: None }
    }
}

pub trait ExecBackend: Send + Sync {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError>;
}

impl<T: ExecBackend + ?Sized> ExecBackend for Box<T> {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        (**self).run(request)
    }
}

impl<T: ExecBackend + ?Sized> ExecBackend for &T {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        (**self).run(request)
    }
}

/// Applies fixed limits to every request before handing it on.
#[derive(Debug, Clone)]
pub struct Limited<B> {
    pub inner: B,
    pub timeout_ms: u64,
    pub output_cap_bytes: usize,
}

impl<B: ExecBackend> ExecBackend for Limited<B> {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        self.inner
            .run(&request.clone().with_limits(self.timeout_ms, self.output_cap_bytes))
    }
}

/// Run many requests on at most `jobs` concurrent workers, preserving order.
pub fn run_many(
    backend: &dyn ExecBackend,
    requests: &[ExecutionRequest],
    jobs: usize,
) -> Vec<Result<Execution, ExecError>> {
    bounded_map(requests, jobs, |r| backend.run(r))
}
