//! Scoring predictions on output, input, coverage, state and path questions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::{ExecBackend, ExecError, ExecMode, ExecStatus, ExecutionRequest, QuestionKind, TraceQuestion};
use crate::literal::{literal_text_eq, normalize_input_answer, parse_call_literals, parse_literal, render_args};
use crate::pool::bounded_map;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no results to aggregate")]
    EmptyReport,
    #[error("execution backend failed on task {task_id}: {source}")]
    Exec {
        task_id: String,
        #[source]
        source: ExecError,
    },
    #[error("task {task_id} is missing shown.{field}")]
    MissingShown { task_id: String, field: &'static str },
    #[error("adapter: {0}")]
    Adapter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forward,
    Backward,
    Coverage,
    State,
    Path,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [TaskKind::Forward, TaskKind::Backward, TaskKind::Coverage, TaskKind::State, TaskKind::Path];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Forward => "forward",
            TaskKind::Backward => "backward",
            TaskKind::Coverage => "coverage",
            TaskKind::State => "state",
            TaskKind::Path => "path",
        }
    }
}

impl From<QuestionKind> for TaskKind {
    fn from(k: QuestionKind) -> Self {
        match k {
            QuestionKind::Coverage => TaskKind::Coverage,
            QuestionKind::State => TaskKind::State,
            QuestionKind::Path => TaskKind::Path,
        }
    }
}

/// What the question shows. Forward tasks show an input, backward tasks an
/// output; trace questions show a line and, for state, a variable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shown {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_literal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_literal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

fn default_entry() -> String {
    "f".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub kind: TaskKind,
    pub code: String,
    #[serde(default = "default_entry")]
    pub entry_point: String,
    pub shown: Shown,
    pub gold: String,
}

impl TaskRecord {
    /// Turn a ground-truth trace question into a task over the same program.
    pub fn from_question(task_id: impl Into<String>, code: &str, entry_point: &str, input_literal: &str, q: &TraceQuestion) -> Self {
        Self {
            task_id: task_id.into(),
            kind: q.kind.into(),
            code: code.to_string(),
            entry_point: entry_point.to_string(),
            shown: Shown {
                input_literal: Some(input_literal.to_string()),
                line: Some(q.payload.line),
                variable: q.payload.variable.clone(),
                ..Shown::default()
            },
            gold: q.gold_answer.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub correct: bool,
    /// Why a prediction scored false, when that is more than a plain mismatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ScoreOutcome {
    fn verdict(correct: bool) -> Self {
        Self { correct, reason: None }
    }

    fn invalid(reason: impl Into<String>) -> Self {
        Self {
            correct: false,
            reason: Some(reason.into()),
        }
    }
}

fn shown<'a>(record: &'a TaskRecord, value: &'a Option<String>, field: &'static str) -> Result<&'a str, EvalError> {
    value.as_deref().ok_or_else(|| EvalError::MissingShown {
        task_id: record.task_id.clone(),
        field,
    })
}

fn run(record: &TaskRecord, input: &str, exec: &dyn ExecBackend) -> Result<crate::exec::ExecutionResult, EvalError> {
    exec.run(&ExecutionRequest::new(&record.code, &record.entry_point, input, ExecMode::Plain))
        .map(|e| e.result)
        .map_err(|source| EvalError::Exec {
            task_id: record.task_id.clone(),
            source,
        })
}

/// Split a `"type, value"` answer at its first comma.
fn split_state(text: &str) -> Option<(&str, &str)> {
    let (ty, value) = text.split_once(',')?;
    let ty = ty.trim();
    (!ty.is_empty()).then_some((ty, value.trim()))
}

/// Score one prediction. Malformed predictions score false with a reason;
/// only backend failures and records missing their shown data are errors.
pub fn score_record(record: &TaskRecord, prediction: &str, exec: &dyn ExecBackend) -> Result<ScoreOutcome, EvalError> {
    let pred = prediction.trim();
    Ok(match record.kind {
        TaskKind::Forward => {
            let input = shown(record, &record.shown.input_literal, "input_literal")?;
            let Ok(predicted) = parse_literal(pred) else {
                return Ok(ScoreOutcome::invalid("prediction is not a literal"));
            };
            let result = run(record, input, exec)?;
            match (result.status, result.output_literal) {
                (ExecStatus::Ok, Some(out)) => match parse_literal(&out) {
                    Ok(actual) => ScoreOutcome::verdict(actual == predicted),
                    Err(_) => ScoreOutcome::verdict(out.trim() == pred),
                },
                (status, _) => ScoreOutcome::invalid(format!("reference run ended with {status:?}")),
            }
        }
        TaskKind::Backward => {
            let output = shown(record, &record.shown.output_literal, "output_literal")?;
            let Some(input) = normalize_input_answer(pred, &record.entry_point) else {
                return Ok(ScoreOutcome::invalid("prediction is not an argument list"));
            };
            let result = run(record, &input, exec)?;
            match (result.status, result.output_literal) {
                (ExecStatus::Ok, Some(out)) => ScoreOutcome::verdict(literal_text_eq(&out, output)),
                (status, _) => ScoreOutcome::invalid(format!("predicted input ended with {status:?}")),
            }
        }
        TaskKind::Coverage => {
            let p = pred.to_ascii_lowercase();
            if p != "yes" && p != "no" {
                return Ok(ScoreOutcome::invalid("coverage answer must be yes or no"));
            }
            ScoreOutcome::verdict(p == record.gold.trim().to_ascii_lowercase())
        }
        TaskKind::State => {
            let Some((p_ty, p_val)) = split_state(pred) else {
                return Ok(ScoreOutcome::invalid("state answer must be \"type, value\""));
            };
            match split_state(&record.gold) {
                Some((g_ty, g_val)) => ScoreOutcome::verdict(p_ty == g_ty && literal_text_eq(p_val, g_val)),
                None => ScoreOutcome::invalid("gold is not \"type, value\""),
            }
        }
        TaskKind::Path => {
            let Ok(p) = pred.parse::<u32>() else {
                return Ok(ScoreOutcome::invalid("path answer must be a line number"));
            };
            ScoreOutcome::verdict(record.gold.trim().parse::<u32>() == Ok(p))
        }
    })
}

/// Score records against their predictions on `jobs` workers. A record with
/// no prediction scores false.
pub fn score_all(
    records: &[TaskRecord],
    predictions: &BTreeMap<String, String>,
    exec: &dyn ExecBackend,
    jobs: usize,
) -> Result<Vec<(TaskKind, ScoreOutcome)>, EvalError> {
    bounded_map(records, jobs, |r| {
        let outcome = match predictions.get(&r.task_id) {
            Some(p) => score_record(r, p, exec)?,
            None => ScoreOutcome::invalid("no prediction"),
        };
        Ok((r.kind, outcome))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub count: usize,
    pub correct: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_kind: BTreeMap<TaskKind, KindScore>,
    pub overall: f64,
}

pub fn aggregate(results: &[(TaskKind, bool)]) -> Result<ScoreReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut tally: BTreeMap<TaskKind, (usize, usize)> = BTreeMap::new();
    for &(kind, ok) in results {
        let e = tally.entry(kind).or_default();
        e.0 += 1;
        e.1 += ok as usize;
    }
    let total_correct: usize = tally.values().map(|t| t.1).sum();
    Ok(ScoreReport {
        per_kind: tally
            .into_iter()
            .map(|(k, (count, correct))| {
                (
                    k,
                    KindScore {
                        count,
                        correct,
                        metric: correct as f64 / count as f64,
                    },
                )
            })
            .collect(),
        overall: total_correct as f64 / results.len() as f64,
    })
}

impl ScoreReport {
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>7} {:>7} {:>7}\n", "kind", "count", "correct", "pass@1");
        let (mut count, mut correct) = (0, 0);
        for (kind, s) in &self.per_kind {
            let _ = writeln!(out, "{:<10} {:>7} {:>7} {:>7.4}", kind.as_str(), s.count, s.correct, s.metric);
            count += s.count;
            correct += s.correct;
        }
        let _ = writeln!(out, "{:<10} {:>7} {:>7} {:>7.4}", "overall", count, correct, self.overall);
        out
    }
}

/// Output-prediction benchmark rows: `code`, `input` (argument text as it
/// appears inside the call parentheses) and `output`. Each row yields a
/// forward and a backward task; the entry point is always `f`.
#[derive(Debug, Clone, Deserialize)]
pub struct CruxRow {
    pub id: String,
    pub code: String,
    pub input: String,
    pub output: String,
}

pub fn from_crux(row: &CruxRow) -> Result<[TaskRecord; 2], EvalError> {
    let call = parse_call_literals(&format!("f({})", row.input))
        .map_err(|e| EvalError::Adapter(format!("{}: input is not a literal argument list: {e}", row.id)))?;
    let input_literal = render_args(&call.args);
    let forward = TaskRecord {
        task_id: format!("{}/forward", row.id),
        kind: TaskKind::Forward,
        code: row.code.clone(),
        entry_point: "f".into(),
        shown: Shown {
            input_literal: Some(input_literal.clone()),
            ..Shown::default()
        },
        gold: row.output.clone(),
    };
    let backward = TaskRecord {
        task_id: format!("{}/backward", row.id),
        kind: TaskKind::Backward,
        code: row.code.clone(),
        entry_point: "f".into(),
        shown: Shown {
            output_literal: Some(row.output.clone()),
            ..Shown::default()
        },
        gold: input_literal,
    };
    Ok([forward, backward])
}

/// Runtime-behavior benchmark rows. `task` is one of `coverage`, `state`,
/// `path`; `line` is 1-based within `code`; `var` names the variable for
/// state questions; `answer` is the gold answer in this crate's format.
#[derive(Debug, Clone, Deserialize)]
pub struct BehaviorRow {
    pub id: String,
    pub code: String,
    #[serde(default = "default_entry")]
    pub entry_point: String,
    pub input: String,
    pub task: String,
    pub line: u32,
    #[serde(default)]
    pub var: Option<String>,
    pub answer: String,
}

pub fn from_behavior(row: &BehaviorRow) -> Result<TaskRecord, EvalError> {
    let kind = match row.task.to_ascii_lowercase().as_str() {
        "coverage" => TaskKind::Coverage,
        "state" => TaskKind::State,
        "path" => TaskKind::Path,
        other => return Err(EvalError::Adapter(format!("{}: unknown task {other:?}", row.id))),
    };
    if kind == TaskKind::State && row.var.is_none() {
        return Err(EvalError::Adapter(format!("{}: state question without var", row.id)));
    }
    Ok(TaskRecord {
        task_id: row.id.clone(),
        kind,
        code: row.code.clone(),
        entry_point: row.entry_point.clone(),
        shown: Shown {
            input_literal: Some(row.input.clone()),
            line: Some(row.line),
            variable: row.var.clone(),
            ..Shown::default()
        },
        gold: row.answer.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{Execution, ExecutionResult, ReplayBackend, ReplayStore};

    const INC: &str = "def f(x):\n    return x + 1";

    fn ok(out: &str) -> Execution {
        Execution::without_trace(ExecutionResult {
            status: ExecStatus::Ok,
            output_literal: Some(out.into()),
            stdout_text: String::new(),
            error_kind: None,
        })
    }

    fn inc_exec() -> ReplayBackend {
        let mut s = ReplayStore::new();
        for x in 0..10 {
            s.insert(&ExecutionRequest::plain(INC, format!("({x},)")), ok(&(x + 1).to_string()));
        }
        ReplayBackend::new(s)
    }

    fn task(kind: TaskKind, shown: Shown, gold: &str) -> TaskRecord {
        TaskRecord {
            task_id: "t".into(),
            kind,
            code: INC.into(),
            entry_point: "f".into(),
            shown,
            gold: gold.into(),
        }
    }

    #[test]
    fn forward() {
        let t = task(TaskKind::Forward, Shown { input_literal: Some("(3,)".into()), ..Default::default() }, "4");
        let exec = inc_exec();
        assert!(score_record(&t, "4", &exec).unwrap().correct);
        assert!(!score_record(&t, "5", &exec).unwrap().correct);
        let bad = score_record(&t, "four", &exec).unwrap();
        assert!(!bad.correct && bad.reason.is_some());
    }

    #[test]
    fn backward_accepts_any_witness() {
        let t = task(TaskKind::Backward, Shown { output_literal: Some("6".into()), ..Default::default() }, "(5,)");
        let exec = inc_exec();
        assert!(score_record(&t, "(5,)", &exec).unwrap().correct);
        assert!(score_record(&t, "f(5)", &exec).unwrap().correct);
        assert!(!score_record(&t, "(4,)", &exec).unwrap().correct);
        assert!(score_record(&t, "(x,)", &exec).unwrap().reason.is_some());
    }

    #[test]
    fn trace_kinds() {
        let exec = ReplayBackend::default();
        let cov = task(TaskKind::Coverage, Shown { line: Some(2), ..Default::default() }, "no");
        assert!(score_record(&cov, "No", &exec).unwrap().correct);
        assert!(!score_record(&cov, "yes", &exec).unwrap().correct);
        assert!(score_record(&cov, "maybe", &exec).unwrap().reason.is_some());
        let st = task(TaskKind::State, Shown { line: Some(2), variable: Some("x".into()), ..Default::default() }, "tuple, ('a', 1)");
        assert!(score_record(&st, "tuple, ('a',1)", &exec).unwrap().correct);
        assert!(!score_record(&st, "list, ('a', 1)", &exec).unwrap().correct);
        assert!(!score_record(&st, "tuple", &exec).unwrap().correct);
        let path = task(TaskKind::Path, Shown { line: Some(4), ..Default::default() }, "2");
        assert!(score_record(&path, " 2 ", &exec).unwrap().correct);
        assert!(!score_record(&path, "3", &exec).unwrap().correct);
    }

    #[test]
    fn aggregate_arithmetic() {
        let mut res = vec![(TaskKind::Forward, true), (TaskKind::Forward, true), (TaskKind::Forward, true), (TaskKind::Forward, false)];
        let r = aggregate(&res).unwrap();
        assert_eq!(r.per_kind[&TaskKind::Forward].metric, 0.75);
        res.push((TaskKind::Path, false));
        res.reverse();
        let r = aggregate(&res).unwrap();
        assert!((r.overall - 0.6).abs() < 1e-15);
        assert!(r.table().contains("overall"));
        assert!(matches!(aggregate(&[]), Err(EvalError::EmptyReport)));
    }

    #[test]
    fn crux_adapter() {
        let row = CruxRow {
            id: "sample_1".into(),
            code: "def f(a, b):\n    return a + b".into(),
            input: "[1, 2], [3]".into(),
            output: "[1, 2, 3]".into(),
        };
        let [fwd, bwd] = from_crux(&row).unwrap();
        assert_eq!(fwd.shown.input_literal.as_deref(), Some("([1, 2], [3])"));
        assert_eq!(bwd.gold, "([1, 2], [3])");
        assert_eq!(bwd.shown.output_literal.as_deref(), Some("[1, 2, 3]"));
    }

    #[test]
    fn behavior_adapter() {
        let row: BehaviorRow = serde_json::from_str(
            r#"{"id":"r1","code":"x=1","input":"()","task":"State","line":1,"var":"x","answer":"int, 1"}"#,
        )
        .unwrap();
        let t = from_behavior(&row).unwrap();
        assert_eq!(t.kind, TaskKind::State);
        assert_eq!(t.entry_point, "f");
        let mut bad = row.clone();
        bad.var = None;
        assert!(from_behavior(&bad).is_err());
    }
}
