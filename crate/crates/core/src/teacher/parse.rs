use crate::literal::{parse_call_literals, CallSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTeacherOutput {
    pub code_block: Option<String>,
    pub answer_literal: Option<String>,
    pub reasoning_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("<Answer> at byte {0} is never closed")]
    Unclosed(usize),
    #[error("</Answer> at byte {0} has no matching <Answer>")]
    UnmatchedClose(usize),
    #[error("<Answer> at byte {0} opens inside another <Answer>")]
    Nested(usize),
}

const ANSWER_OPEN: &str = "<Answer>";
const ANSWER_CLOSE: &str = "</Answer>";

/// Pull the first fenced code block, the `<Answer>` payload and the
/// `<Reasoning>` text out of a teacher response. Missing sections are `None`;
/// only inconsistent `<Answer>` tags are an error. When several answer pairs
/// are present the last one wins.
pub fn parse_teacher_output(raw_text: &str) -> Result<ParsedTeacherOutput, TagError> {
    Ok(ParsedTeacherOutput {
        code_block: first_fenced_block(raw_text),
        answer_literal: answer_payload(raw_text)?,
        reasoning_text: tagged(raw_text, "<Reasoning>", "</Reasoning>"),
    })
}

fn first_fenced_block(text: &str) -> Option<String> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let line_end = after.find('\n');
    // Single-line form: ```code```
    if let Some(close) = after.find("```") {
        if line_end.is_none_or(|nl| close < nl) {
            return Some(after[..close].trim().to_string());
        }
    }
    let body_start = line_end? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    let content = &body[..close];
    let content = content.strip_suffix('\n').unwrap_or(content);
    let content = content.strip_suffix('\r').unwrap_or(content);
    Some(content.to_string())
}

fn answer_payload(text: &str) -> Result<Option<String>, TagError> {
    let mut events: Vec<(usize, bool)> = text.match_indices(ANSWER_OPEN).map(|(i, _)| (i, true)).collect();
    events.extend(text.match_indices(ANSWER_CLOSE).map(|(i, _)| (i, false)));
    events.sort_unstable();
    let mut open_at: Option<usize> = None;
    let mut last = None;
    for (pos, is_open) in events {
        match (is_open, open_at) {
            (true, None) => open_at = Some(pos),
            (true, Some(_)) => return Err(TagError::Nested(pos)),
            (false, None) => return Err(TagError::UnmatchedClose(pos)),
            (false, Some(start)) => {
                last = Some(text[start + ANSWER_OPEN.len()..pos].trim().to_string());
                open_at = None;
            }
        }
    }
    if let Some(start) = open_at {
        return Err(TagError::Unclosed(start));
    }
    Ok(last)
}

fn tagged(text: &str, open: &str, close: &str) -> Option<String> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(text[start..end].trim().to_string())
}

/// Split a generated program into the function source and its top-level
/// entry-point call line (`f(...)` or `print(f(...))`). The last such line
/// wins; all other lines are kept as code.
pub fn split_entry_call(source: &str, entry_point: &str) -> Option<(String, CallSpec)> {
    let lines: Vec<&str> = source.lines().collect();
    for (idx, line) in lines.iter().enumerate().rev() {
        if line.starts_with(char::is_whitespace) {
            continue;
        }
        let text = line.trim_end();
        let inner = text
            .strip_prefix("print(")
            .and_then(|s| s.strip_suffix(')'))
            .unwrap_or(text);
        let Ok(call) = parse_call_literals(inner) else {
            continue;
        };
        if call.func_name != entry_point {
            continue;
        }
        let code: Vec<&str> = lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, l)| *l)
            .collect();
        let code = code.join("\n").trim_matches('\n').trim_end().to_string();
        if code.is_empty() {
            return None;
        }
        return Some((code, call));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::literal::LiteralValue;
    use proptest::prelude::*;

    #[test]
    fn extracts_answer() {
        let p = parse_teacher_output("thinking... <Answer>42</Answer>").unwrap();
        assert_eq!(p.answer_literal.as_deref(), Some("42"));
        assert_eq!(p.code_block, None);
        assert_eq!(p.reasoning_text, None);
    }

    #[test]
    fn extracts_code_block() {
        let p = parse_teacher_output("intro\n```python\nf = 1\n```\nmore").unwrap();
        assert_eq!(p.code_block.as_deref(), Some("f = 1"));
        let p = parse_teacher_output("```f = 1```").unwrap();
        assert_eq!(p.code_block.as_deref(), Some("f = 1"));
    }

    #[test]
    fn first_block_wins() {
        let p = parse_teacher_output("```\na\n```\n```\nb\n```").unwrap();
        assert_eq!(p.code_block.as_deref(), Some("a"));
    }

    #[test]
    fn unclosed_fence_is_absent() {
        assert_eq!(parse_teacher_output("```python\nx = 1\n").unwrap().code_block, None);
    }

    #[test]
    fn malformed_answers() {
        assert_eq!(parse_teacher_output("<Answer>1").unwrap_err(), TagError::Unclosed(0));
        assert!(matches!(parse_teacher_output("1</Answer>"), Err(TagError::UnmatchedClose(1))));
        assert!(matches!(
            parse_teacher_output("<Answer>1<Answer>2</Answer>"),
            Err(TagError::Nested(9))
        ));
    }

    #[test]
    fn last_answer_pair_wins() {
        let p = parse_teacher_output("<Answer>1</Answer> wait <Answer> 2 </Answer>").unwrap();
        assert_eq!(p.answer_literal.as_deref(), Some("2"));
    }

    #[test]
    fn reasoning_extracted() {
        let raw = "<Reasoning>\nstep one\n```python\ndef f(x):\n    return x\n```\n</Reasoning>\n<Answer>(5,)</Answer>";
        let p = parse_teacher_output(raw).unwrap();
        assert!(p.reasoning_text.unwrap().starts_with("step one"));
        assert_eq!(p.code_block.as_deref(), Some("def f(x):\n    return x"));
        assert_eq!(p.answer_literal.as_deref(), Some("(5,)"));
    }

    #[test]
    fn splits_entry_call() {
        let src = "def f(s):\n    return s.upper()\n\nf('abc')\n";
        let (code, call) = split_entry_call(src, "f").unwrap();
        assert_eq!(code, "def f(s):\n    return s.upper()");
        assert_eq!(call.args, vec![LiteralValue::Str("abc".into())]);
        let (_, call) = split_entry_call("def f(x):\n    return x\nprint(f(2))", "f").unwrap();
        assert_eq!(call.args, vec![LiteralValue::Int(2)]);
        assert!(split_entry_call("def f(x):\n    return x\n", "f").is_none());
        assert!(split_entry_call("def f(x):\n    return x\ng(1)", "f").is_none());
    }

    proptest! {
        #[test]
        fn answer_round_trips(reasoning in "[a-zA-Z0-9 .,()\\[\\]'\n]{0,60}", answer in "[a-zA-Z0-9(),'\\[\\]{}:]{1,30}") {
            let raw = format!("<Reasoning>{reasoning}</Reasoning>\n<Answer>{answer}</Answer>");
            let parsed = parse_teacher_output(&raw).unwrap();
            prop_assert_eq!(parsed.answer_literal.as_deref(), Some(answer.trim()));
        }
    }
}
