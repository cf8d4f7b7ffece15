//! Python literal values as they appear in entry-point calls and return values.
//!
//! The grammar is the literal-only subset of Python expressions: numbers
//! (optionally signed), strings, bytes, `True`/`False`/`None`, and the four
//! container displays. `set()` is accepted as the spelling of the empty set.
//! Rendering follows `repr` so that a value printed by the interpreter can be
//! parsed back here and compared structurally.

mod mutate;
mod parse;
mod render;

pub use mutate::{mutate_case, mutate_literal, MUTATE_STAGE_VERSION, MUTATION_CHARSET, MUTATION_INT_RADIUS};
pub use parse::{parse_args_literal, parse_call_literals, parse_literal, ParseError, ParseErrorKind};
pub use render::{render_args, render_literal};

use std::fmt;

#[derive(Debug, Clone)]
pub enum LiteralValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<LiteralValue>),
    Tuple(Vec<LiteralValue>),
    Set(Vec<LiteralValue>),
    /// Key/value pairs in insertion order.
    Map(Vec<(LiteralValue, LiteralValue)>),
}

impl LiteralValue {
    pub fn kind(&self) -> &'static str {
        match self {
            LiteralValue::Int(_) => "int",
            LiteralValue::Float(_) => "float",
            LiteralValue::Bool(_) => "bool",
            LiteralValue::None => "NoneType",
            LiteralValue::Str(_) => "str",
            LiteralValue::Bytes(_) => "bytes",
            LiteralValue::List(_) => "list",
            LiteralValue::Tuple(_) => "tuple",
            LiteralValue::Set(_) => "set",
            LiteralValue::Map(_) => "dict",
        }
    }

    /// True when both trees have the same variant at every node and the same
    /// container arity, ignoring scalar payloads.
    pub fn same_shape(&self, other: &LiteralValue) -> bool {
        use LiteralValue::*;
        match (self, other) {
            (List(a), List(b)) | (Tuple(a), Tuple(b)) | (Set(a), Set(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
            }
            (Map(a), Map(b)) => {
                a.len() == b.len()
                    && a
                        .iter()
                        .zip(b)
                        .all(|((ka, va), (kb, vb))| ka.same_shape(kb) && va.same_shape(vb))
            }
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

/// Structural equality. Sets compare as multisets and maps compare by key
/// regardless of insertion order, mirroring Python `==` on the same values.
impl PartialEq for LiteralValue {
    fn eq(&self, other: &Self) -> bool {
        use LiteralValue::*;
        match (self, other) {
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a == b,
            (Bool(a), Bool(b)) => a == b,
            (None, None) => true,
            (Str(a), Str(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (List(a), List(b)) | (Tuple(a), Tuple(b)) => a == b,
            (Set(a), Set(b)) => unordered_eq(a, b, |x, y| x == y),
            (Map(a), Map(b)) => unordered_eq(a, b, |(ka, va), (kb, vb)| ka == kb && va == vb),
            _ => false,
        }
    }
}

fn unordered_eq<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        match (0..b.len()).find(|&j| !used[j] && eq(x, &b[j])) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

impl fmt::Display for LiteralValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_literal(self))
    }
}

/// One entry-point call with literal arguments, e.g. `f('abc', 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CallSpec {
    pub func_name: String,
    pub args: Vec<LiteralValue>,
}

impl CallSpec {
    pub fn render(&self) -> String {
        let args: Vec<String> = self.args.iter().map(render_literal).collect();
        format!("{}({})", self.func_name, args.join(", "))
    }
}

impl fmt::Display for CallSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Compare two literal texts structurally, falling back to trimmed string
/// equality when either side is not a parseable literal (e.g. an object repr).
pub fn literal_text_eq(a: &str, b: &str) -> bool {
    match (parse_literal(a), parse_literal(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.trim() == b.trim(),
    }
}

/// Read a predicted input given as an argument tuple (`(5,)`), a bare value
/// (`5`) or a full call (`f(5)`), and return it in canonical tuple form.
pub fn normalize_input_answer(answer: &str, entry_point: &str) -> Option<String> {
    let answer = answer.trim();
    if let Ok(call) = parse_call_literals(answer) {
        return (call.func_name == entry_point).then(|| render_args(&call.args));
    }
    parse_args_literal(answer).ok().map(|args| render_args(&args))
}
