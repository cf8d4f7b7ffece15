use serde::{Deserialize, Serialize};

use super::ExecutionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Coverage,
    State,
    Path,
}

/// Coverage and path questions carry only a line; state questions also name
/// the variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPayload {
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceQuestion {
    pub kind: QuestionKind,
    pub payload: QuestionPayload,
    pub gold_answer: String,
}

/// The exhaustive question set for one traced run: coverage for every
/// non-blank line, one state question per recorded event and one path
/// question per consecutive pair of executed lines.
pub fn ground_truth_questions(code: &str, trace: &ExecutionTrace) -> Vec<TraceQuestion> {
    let mut out = Vec::new();
    for (idx, text) in code.lines().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let line = idx as u32 + 1;
        let hit = trace.covered_lines.contains(&line);
        out.push(TraceQuestion {
            kind: QuestionKind::Coverage,
            payload: QuestionPayload { line, variable: None },
            gold_answer: if hit { "yes" } else { "no" }.to_string(),
        });
    }
    for ev in &trace.state_events {
        out.push(TraceQuestion {
            kind: QuestionKind::State,
            payload: QuestionPayload {
                line: ev.line,
                variable: Some(ev.name.clone()),
            },
            gold_answer: format!("{}, {}", ev.type_name, ev.value),
        });
    }
    for &(from, to) in &trace.next_line_pairs {
        out.push(TraceQuestion {
            kind: QuestionKind::Path,
            payload: QuestionPayload { line: from, variable: None },
            gold_answer: to.to_string(),
        });
    }
    out
}
