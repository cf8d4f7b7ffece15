use std::fmt;

use super::{CallSpec, LiteralValue};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedEnd,
    Expected(&'static str),
    Unbalanced(char),
    NonLiteral(String),
    CallInArgument(String),
    Operator(char),
    InvalidNumber(String),
    IntegerOverflow,
    InvalidString(&'static str),
    TrailingInput,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input")?,
            ParseErrorKind::Expected(what) => write!(f, "expected {what}")?,
            ParseErrorKind::Unbalanced(c) => write!(f, "unbalanced delimiter '{c}'")?,
            ParseErrorKind::NonLiteral(name) => write!(f, "non-literal name `{name}`")?,
            ParseErrorKind::CallInArgument(name) => {
                write!(f, "call `{name}(...)` is not allowed in argument position")?
            }
            ParseErrorKind::Operator(c) => write!(f, "operator '{c}' is not allowed in a literal")?,
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number `{s}`")?,
            ParseErrorKind::IntegerOverflow => write!(f, "integer does not fit in 64 bits")?,
            ParseErrorKind::InvalidString(why) => write!(f, "invalid string literal: {why}")?,
            ParseErrorKind::TrailingInput => write!(f, "trailing input after literal")?,
        }
        write!(f, " at byte {}", self.offset)
    }
}

type Result<T> = std::result::Result<T, ParseError>;

/// Parse a single literal expression spanning the whole text.
pub fn parse_literal(text: &str) -> Result<LiteralValue> {
    let mut p = Parser::new(text);
    let v = p.value()?;
    p.finish()?;
    Ok(v)
}

/// Parse exactly one call expression `name(lit, ...)` with literal arguments.
pub fn parse_call_literals(call_text: &str) -> Result<CallSpec> {
    let mut p = Parser::new(call_text);
    p.skip_ws();
    let start = p.pos;
    let name = p.identifier().ok_or(ParseError {
        offset: start,
        kind: ParseErrorKind::Expected("function name"),
    })?;
    p.skip_ws();
    p.expect(b'(', "'('")?;
    let args = p.sequence(b')')?;
    p.finish()?;
    Ok(CallSpec {
        func_name: name.to_string(),
        args,
    })
}

/// Parse an entry-point argument list written as a literal.
///
/// A tuple literal is the full argument list (`(3,)` is one argument, `()` is
/// none); any other literal is taken as a single argument.
pub fn parse_args_literal(text: &str) -> Result<Vec<LiteralValue>> {
    match parse_literal(text)? {
        LiteralValue::Tuple(items) => Ok(items),
        other => Ok(vec![other]),
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, offset: usize, kind: ParseErrorKind) -> Result<T> {
        Err(ParseError { offset, kind })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'\\' && self.bytes.get(self.pos + 1) == Some(&b'\n') {
                self.pos += 2;
            } else {
                break;
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            None => Ok(()),
            Some(c @ (b')' | b']' | b'}')) => self.err(self.pos, ParseErrorKind::Unbalanced(c as char)),
            Some(_) => self.err(self.pos, ParseErrorKind::TrailingInput),
        }
    }

    fn expect(&mut self, b: u8, what: &'static str) -> Result<()> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            None => self.err(self.pos, ParseErrorKind::UnexpectedEnd),
            Some(_) => self.err(self.pos, ParseErrorKind::Expected(what)),
        }
    }

    fn identifier(&mut self) -> Option<&'a str> {
        let start = self.pos;
        let rest = &self.src[start..];
        let mut end = 0;
        for (i, c) in rest.char_indices() {
            let ok = if i == 0 {
                c == '_' || c.is_alphabetic()
            } else {
                c == '_' || c.is_alphanumeric()
            };
            if !ok {
                break;
            }
            end = i + c.len_utf8();
        }
        if end == 0 {
            return None;
        }
        self.pos += end;
        Some(&rest[..end])
    }

    /// Comma-separated values up to `close`, trailing comma allowed.
    fn sequence(&mut self, close: u8) -> Result<Vec<LiteralValue>> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.err(self.pos, ParseErrorKind::Unbalanced(close as char)),
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(items);
                }
                _ => {}
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(c) if c == close => {}
                None => return self.err(self.pos, ParseErrorKind::Unbalanced(close as char)),
                Some(_) => return self.after_value_error(),
            }
        }
    }

    fn after_value_error<T>(&self) -> Result<T> {
        match self.peek() {
            Some(c @ (b'+' | b'-' | b'*' | b'/' | b'%' | b'&' | b'|' | b'^' | b'<' | b'>' | b'=' | b'@' | b'.')) => {
                self.err(self.pos, ParseErrorKind::Operator(c as char))
            }
            Some(c @ (b')' | b']' | b'}')) => self.err(self.pos, ParseErrorKind::Unbalanced(c as char)),
            None => self.err(self.pos, ParseErrorKind::UnexpectedEnd),
            Some(_) => self.err(self.pos, ParseErrorKind::Expected("',' or closing delimiter")),
        }
    }

    fn value(&mut self) -> Result<LiteralValue> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return self.err(start, ParseErrorKind::UnexpectedEnd);
        };
        match c {
            b'[' => {
                self.pos += 1;
                Ok(LiteralValue::List(self.sequence(b']')?))
            }
            b'(' => {
                self.pos += 1;
                self.tuple_or_group()
            }
            b'{' => {
                self.pos += 1;
                self.brace()
            }
            b'-' | b'+' => {
                self.pos += 1;
                self.skip_ws();
                match self.peek() {
                    Some(d) if d.is_ascii_digit() || d == b'.' => {
                        let v = self.number(start)?;
                        Ok(if c == b'-' { negate(v) } else { v })
                    }
                    None => self.err(self.pos, ParseErrorKind::UnexpectedEnd),
                    Some(_) => self.err(start, ParseErrorKind::Operator(c as char)),
                }
            }
            b'0'..=b'9' | b'.' => self.number(start),
            b'\'' | b'"' => Ok(LiteralValue::Str(self.string_run()?)),
            _ => self.word(start),
        }
    }

    fn tuple_or_group(&mut self) -> Result<LiteralValue> {
        self.skip_ws();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(LiteralValue::Tuple(Vec::new()));
        }
        let first = self.value()?;
        self.skip_ws();
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(first)
            }
            Some(b',') => {
                self.pos += 1;
                let mut rest = self.sequence(b')')?;
                rest.insert(0, first);
                Ok(LiteralValue::Tuple(rest))
            }
            None => self.err(self.pos, ParseErrorKind::Unbalanced(')')),
            Some(_) => self.after_value_error(),
        }
    }

    fn brace(&mut self) -> Result<LiteralValue> {
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(LiteralValue::Map(Vec::new()));
        }
        let first = self.value()?;
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            let v = self.value()?;
            let mut pairs = vec![(first, v)];
            loop {
                self.skip_ws();
                match self.peek() {
                    Some(b'}') => {
                        self.pos += 1;
                        return Ok(LiteralValue::Map(pairs));
                    }
                    Some(b',') => {
                        self.pos += 1;
                        self.skip_ws();
                        if self.peek() == Some(b'}') {
                            continue;
                        }
                        let k = self.value()?;
                        self.skip_ws();
                        self.expect(b':', "':'")?;
                        let v = self.value()?;
                        pairs.push((k, v));
                    }
                    None => return self.err(self.pos, ParseErrorKind::Unbalanced('}')),
                    Some(_) => return self.after_value_error(),
                }
            }
        }
        match self.peek() {
            Some(b'}') => {
                self.pos += 1;
                Ok(LiteralValue::Set(vec![first]))
            }
            Some(b',') => {
                self.pos += 1;
                let mut rest = self.sequence(b'}')?;
                rest.insert(0, first);
                Ok(LiteralValue::Set(rest))
            }
            None => self.err(self.pos, ParseErrorKind::Unbalanced('}')),
            Some(_) => self.after_value_error(),
        }
    }

    fn word(&mut self, start: usize) -> Result<LiteralValue> {
        let Some(word) = self.identifier() else {
            let c = self.src[start..].chars().next().unwrap_or('?');
            return self.err(start, ParseErrorKind::NonLiteral(c.to_string()));
        };
        // String prefixes: the quote must follow immediately.
        if matches!(self.peek(), Some(b'\'' | b'"')) {
            let lower = word.to_ascii_lowercase();
            match lower.as_str() {
                "b" | "br" | "rb" => {
                    self.pos = start;
                    return self.bytes_run();
                }
                "r" | "u" => {
                    self.pos = start;
                    return Ok(LiteralValue::Str(self.string_run()?));
                }
                _ => {
                    return self.err(start, ParseErrorKind::InvalidString("unsupported string prefix"));
                }
            }
        }
        match word {
            "True" => return Ok(LiteralValue::Bool(true)),
            "False" => return Ok(LiteralValue::Bool(false)),
            "None" => return Ok(LiteralValue::None),
            _ => {}
        }
        let after = self.pos;
        self.skip_ws();
        if self.peek() == Some(b'(') {
            if word == "set" {
                self.pos += 1;
                self.skip_ws();
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    return Ok(LiteralValue::Set(Vec::new()));
                }
            }
            return self.err(start, ParseErrorKind::CallInArgument(word.to_string()));
        }
        self.pos = after;
        self.err(start, ParseErrorKind::NonLiteral(word.to_string()))
    }

    fn number(&mut self, start: usize) -> Result<LiteralValue> {
        let num_start = self.pos;
        let mut is_float = false;
        while let Some(b) = self.peek() {
            match b {
                b'0'..=b'9' | b'_' => self.pos += 1,
                b'.' => {
                    is_float = true;
                    self.pos += 1;
                }
                b'e' | b'E' => {
                    is_float = true;
                    self.pos += 1;
                    if matches!(self.peek(), Some(b'+' | b'-')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let raw = &self.src[num_start..self.pos];
        if matches!(self.peek(), Some(b) if b.is_ascii_alphabetic()) {
            // hex/octal/complex literals and the like
            let tail_end = self.src[self.pos..]
                .find(|c: char| !c.is_ascii_alphanumeric())
                .map_or(self.src.len(), |i| self.pos + i);
            return self.err(
                start,
                ParseErrorKind::InvalidNumber(self.src[num_start..tail_end].to_string()),
            );
        }
        let bad = || ParseError {
            offset: start,
            kind: ParseErrorKind::InvalidNumber(raw.to_string()),
        };
        if raw.starts_with('_') || raw.ends_with('_') || raw.contains("__") {
            return Err(bad());
        }
        let cleaned = raw.replace('_', "");
        if is_float {
            let v: f64 = cleaned.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Ok(LiteralValue::Float(v))
        } else {
            if cleaned.len() > 1 && cleaned.starts_with('0') && cleaned.bytes().any(|b| b != b'0') {
                return Err(bad());
            }
            // Parse magnitude as u64 so that i64::MIN survives negation.
            let mag: u64 = cleaned.parse().map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::IntegerOverflow,
            })?;
            let neg = self.bytes.get(start) == Some(&b'-');
            if neg && mag == 1u64 << 63 {
                // i64::MIN is its own wrapping negation
                return Ok(LiteralValue::Int(i64::MIN));
            }
            let v = i64::try_from(mag).map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::IntegerOverflow,
            })?;
            Ok(LiteralValue::Int(v))
        }
    }

    /// One or more adjacent string literals, concatenated as Python does.
    fn string_run(&mut self) -> Result<String> {
        let mut out = String::new();
        loop {
            let raw = self.prefix_raw();
            self.string_body(raw, false, &mut out)?;
            let save = self.pos;
            self.skip_ws();
            let p = self.pos;
            let has_prefix = matches!(self.peek(), Some(b'r' | b'R' | b'u' | b'U'))
                && matches!(self.bytes.get(p + 1), Some(b'\'' | b'"'));
            if matches!(self.peek(), Some(b'\'' | b'"')) || has_prefix {
                continue;
            }
            self.pos = save;
            return Ok(out);
        }
    }

    fn prefix_raw(&mut self) -> bool {
        let mut raw = false;
        while let Some(b) = self.peek() {
            match b {
                b'r' | b'R' => raw = true,
                b'u' | b'U' | b'b' | b'B' => {}
                _ => break,
            }
            self.pos += 1;
        }
        raw
    }

    /// In bytes mode only ASCII source characters are allowed and `\u`/`\U`
    /// are not escapes; every pushed char is then below U+0100.
    fn string_body(&mut self, raw: bool, bytes: bool, out: &mut String) -> Result<()> {
        let open = self.pos;
        let quote = self.peek().ok_or(ParseError {
            offset: open,
            kind: ParseErrorKind::UnexpectedEnd,
        })?;
        let triple = self.bytes.get(open + 1) == Some(&quote) && self.bytes.get(open + 2) == Some(&quote);
        self.pos += if triple { 3 } else { 1 };
        loop {
            let rest = &self.src[self.pos..];
            let Some(c) = rest.chars().next() else {
                return self.err(open, ParseErrorKind::InvalidString("unterminated string"));
            };
            if c as u32 == quote as u32 {
                if !triple {
                    self.pos += 1;
                    return Ok(());
                }
                if rest.as_bytes().starts_with(&[quote, quote, quote]) {
                    self.pos += 3;
                    return Ok(());
                }
            }
            if bytes && !c.is_ascii() {
                return self.err(self.pos, ParseErrorKind::InvalidString("non-ASCII character in bytes"));
            }
            if c == '\n' && !triple {
                return self.err(open, ParseErrorKind::InvalidString("newline in string"));
            }
            if c == '\\' {
                let esc_at = self.pos;
                self.pos += 1;
                let Some(e) = self.src[self.pos..].chars().next() else {
                    return self.err(open, ParseErrorKind::InvalidString("unterminated string"));
                };
                self.pos += e.len_utf8();
                if raw {
                    out.push('\\');
                    out.push(e);
                    continue;
                }
                match e {
                    '\n' => {}
                    '\\' => out.push('\\'),
                    '\'' => out.push('\''),
                    '"' => out.push('"'),
                    'n' => out.push('\n'),
                    'r' => out.push('\r'),
                    't' => out.push('\t'),
                    'a' => out.push('\x07'),
                    'b' => out.push('\x08'),
                    'f' => out.push('\x0c'),
                    'v' => out.push('\x0b'),
                    '0'..='7' => {
                        let mut v = e.to_digit(8).unwrap();
                        for _ in 0..2 {
                            match self.peek() {
                                Some(d @ b'0'..=b'7') => {
                                    v = v * 8 + u32::from(d - b'0');
                                    self.pos += 1;
                                }
                                _ => break,
                            }
                        }
                        out.push(char::from_u32(v).unwrap());
                    }
                    'u' | 'U' if bytes => {
                        out.push('\\');
                        out.push(e);
                    }
                    'x' | 'u' | 'U' => {
                        let width = match e {
                            'x' => 2,
                            'u' => 4,
                            _ => 8,
                        };
                        let hex = self.src.get(self.pos..self.pos + width).unwrap_or("");
                        let code = (hex.len() == width && hex.bytes().all(|b| b.is_ascii_hexdigit()))
                            .then(|| u32::from_str_radix(hex, 16).ok())
                            .flatten()
                            .and_then(char::from_u32);
                        match code {
                            Some(ch) => {
                                out.push(ch);
                                self.pos += width;
                            }
                            None => {
                                return self.err(esc_at, ParseErrorKind::InvalidString("bad escape"));
                            }
                        }
                    }
                    'N' => return self.err(esc_at, ParseErrorKind::InvalidString("named escapes unsupported")),
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
                continue;
            }
            out.push(c);
            self.pos += c.len_utf8();
        }
    }

    fn bytes_run(&mut self) -> Result<LiteralValue> {
        let mut out = Vec::new();
        loop {
            let raw = self.prefix_raw();
            let mut text = String::new();
            self.string_body(raw, true, &mut text)?;
            out.extend(text.chars().map(|c| c as u32 as u8));
            let save = self.pos;
            self.skip_ws();
            let p = self.pos;
            let next_is_bytes = matches!(self.peek(), Some(b'b' | b'B'))
                && (matches!(self.bytes.get(p + 1), Some(b'\'' | b'"'))
                    || (matches!(self.bytes.get(p + 1), Some(b'r' | b'R'))
                        && matches!(self.bytes.get(p + 2), Some(b'\'' | b'"'))));
            if !next_is_bytes {
                self.pos = save;
                return Ok(LiteralValue::Bytes(out));
            }
        }
    }
}

fn negate(v: LiteralValue) -> LiteralValue {
    match v {
        LiteralValue::Int(i) => LiteralValue::Int(i.wrapping_neg()),
        LiteralValue::Float(f) => LiteralValue::Float(-f),
        other => other,
    }
}
