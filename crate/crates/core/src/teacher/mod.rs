//! Prompts for the teacher model, the completion backends that answer them,
//! and the parser for tagged teacher responses.
//!
//! Prompt text comes from versioned template files under `templates/`; the
//! template version travels with every record produced from a prompt.

mod backend;
mod parse;

pub use backend::{
    build_backend, complete, complete_many, BackendConfig, CompletionBackend, HttpBackend, HttpBackendConfig,
    StubBackend, StubFixture, TeacherError, TeacherResponse,
};
pub use parse::{parse_teacher_output, split_entry_call, ParsedTeacherOutput, TagError};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case::{Direction, TestCaseRecord};
use crate::catalog::{ControlKind, GenerationConstraints};
use crate::literal::{parse_args_literal, CallSpec};

/// Bumped whenever any template file changes.
pub const TEMPLATE_VERSION: &str = "original-v1";

const SYSTEM_TEMPLATE: &str = include_str!("../../templates/system.txt");
const GENERATE_TEMPLATE: &str = include_str!("../../templates/generate_case.txt");
const FORWARD_TEMPLATE: &str = include_str!("../../templates/cot_forward.txt");
const BACKWARD_TEMPLATE: &str = include_str!("../../templates/cot_backward.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptIntent {
    GenerateCase,
    CotForward,
    CotBackward,
}

impl PromptIntent {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptIntent::GenerateCase => "generate_case",
            PromptIntent::CotForward => "cot_forward",
            PromptIntent::CotBackward => "cot_backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system_text: String,
    pub user_text: String,
    pub intent: PromptIntent,
}

impl PromptSpec {
    /// Hex SHA-256 over intent, system text and user text. Stub fixtures are
    /// keyed by this value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.intent.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        h.update(self.user_text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn template_id(&self) -> String {
        format!("{}/{}", TEMPLATE_VERSION, self.intent.as_str())
    }
}

/// Substitute `{{key}}` placeholders in one pass; substituted text is never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => panic!("template placeholder `{key}` has no value"),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn control_noun(kind: ControlKind) -> &'static str {
    match kind {
        ControlKind::If => "`if` statement",
        ControlKind::While => "`while` loop",
        ControlKind::For => "`for` loop",
    }
}

/// "a `while` loop that contains an `if` statement", outermost first.
pub fn describe_nesting(sequence: &[ControlKind]) -> String {
    let article = |k: ControlKind| if k == ControlKind::If { "an" } else { "a" };
    let mut text = String::new();
    for (i, kind) in sequence.iter().enumerate() {
        if i > 0 {
            text.push_str(" that contains ");
        }
        text.push_str(article(*kind));
        text.push(' ');
        text.push_str(control_noun(*kind));
    }
    text
}

pub fn build_generation_prompt(constraints: &GenerationConstraints) -> PromptSpec {
    let method = &constraints.base_method;
    let nested_rule = if constraints.use_nested_calls {
        format!(
            "use nested calls of `{m}`: at least one call of `{m}` must take its receiver or an argument from the result of another call.",
            m = method.method_name
        )
    } else {
        format!("do not use nested calls of `{}`.", method.method_name)
    };
    let others_rule = if constraints.use_other_methods {
        format!(
            "use other methods too: combine `{}` with at least one different method.",
            method.method_name
        )
    } else {
        format!(
            "do not use other methods besides `{}` (built-in functions such as len are fine).",
            method.method_name
        )
    };
    let seq = &constraints.control_flow.sequence;
    let control_rule = if seq.is_empty() {
        "do not use any if, while or for statements.".to_string()
    } else {
        let mut rule = format!("the function body must contain {}", describe_nesting(seq));
        if seq.len() > 1 {
            rule.push_str(", nested in exactly this order");
        }
        rule.push('.');
        rule
    };
    let qualified = method.qualified_name();
    let user_text = fill(
        GENERATE_TEMPLATE,
        &[
            ("qualified_method", &qualified),
            ("method", &method.method_name),
            ("type_name", &method.type_name),
            ("entry_point", "f"),
            ("nested_rule", &nested_rule),
            ("others_rule", &others_rule),
            ("control_rule", &control_rule),
        ],
    );
    PromptSpec {
        system_text: SYSTEM_TEMPLATE.trim_end().to_string(),
        user_text,
        intent: PromptIntent::GenerateCase,
    }
}

/// The entry-point call for a case, e.g. `f(3)`; falls back to the raw
/// argument text if it does not parse.
pub fn render_call(entry_point: &str, input_literal: &str) -> String {
    match parse_args_literal(input_literal) {
        Ok(args) => CallSpec {
            func_name: entry_point.to_string(),
            args,
        }
        .render(),
        Err(_) => {
            let t = input_literal.trim();
            if t.starts_with('(') {
                format!("{entry_point}{t}")
            } else {
                format!("{entry_point}({t})")
            }
        }
    }
}

/// Forward prompts show code and input; backward prompts show code and output.
pub fn build_cot_prompt(case: &TestCaseRecord, direction: Direction) -> PromptSpec {
    let code = case.code.trim_end();
    let (template, user_text, intent) = match direction {
        Direction::Forward => {
            let call = render_call(&case.entry_point, &case.input_literal);
            (
                FORWARD_TEMPLATE,
                vec![("code", code.to_string()), ("call", call)],
                PromptIntent::CotForward,
            )
        }
        Direction::Backward => {
            let output = case.expected_output_literal.clone().unwrap_or_default();
            (
                BACKWARD_TEMPLATE,
                vec![
                    ("code", code.to_string()),
                    ("output", output),
                    ("entry_point", case.entry_point.clone()),
                ],
                PromptIntent::CotBackward,
            )
        }
    };
    let vars: Vec<(&str, &str)> = user_text.iter().map(|(k, v)| (*k, v.as_str())).collect();
    PromptSpec {
        system_text: SYSTEM_TEMPLATE.trim_end().to_string(),
        user_text: fill(template, &vars),
        intent,
    }
}
