//! Built-in method targets and the per-target generation constraints.
//!
//! Every (type, method) pair in the catalog seeds one base test case. For each
//! target two fair coins decide whether the teacher must nest calls of the
//! method and whether it must mix in other methods, and a control-flow
//! blueprint fixes the nesting of `if`/`while`/`for` statements.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from};

/// The shipped catalog: 8 built-in types, one `type<TAB>method<TAB>arity` per line.
pub const SHIPPED_CATALOG: &str = include_str!("../data/builtin_methods.tsv");

pub const DEFAULT_MAX_DEPTH: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("catalog line {line}: duplicate entry {type_name}.{method_name}")]
    Duplicate {
        line: usize,
        type_name: String,
        method_name: String,
    },
    #[error("catalog has no entries")]
    Empty,
    #[error("reading catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub type_name: String,
    pub method_name: String,
    pub arity_hint: u32,
}

impl MethodDescriptor {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.type_name, self.method_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    If,
    While,
    For,
}

impl ControlKind {
    pub const ALL: [ControlKind; 3] = [ControlKind::If, ControlKind::While, ControlKind::For];

    pub fn keyword(self) -> &'static str {
        match self {
            ControlKind::If => "if",
            ControlKind::While => "while",
            ControlKind::For => "for",
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Outermost control statement first; each later kind nests inside the previous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowBlueprint {
    pub max_depth: u32,
    pub sequence: Vec<ControlKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationConstraints {
    pub base_method: MethodDescriptor,
    pub use_nested_calls: bool,
    pub use_other_methods: bool,
    pub control_flow: ControlFlowBlueprint,
    pub seed: u64,
}

/// Parse a catalog file. Blank lines and `#` comments are skipped; entries are
/// returned in file order.
pub fn enumerate_targets(catalog_source: &str) -> Result<Vec<MethodDescriptor>, CatalogError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in catalog_source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim_end_matches('\r');
        if text.trim().is_empty() || text.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(CatalogError::Malformed {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (type_name, method_name) = (fields[0].trim(), fields[1].trim());
        for (what, ident) in [("type name", type_name), ("method name", method_name)] {
            if !is_identifier(ident) {
                return Err(CatalogError::Malformed {
                    line,
                    message: format!("{what} `{ident}` is not an identifier"),
                });
            }
        }
        let arity_hint = fields[2].trim().parse::<u32>().map_err(|_| CatalogError::Malformed {
            line,
            message: format!("arity hint `{}` is not a non-negative integer", fields[2].trim()),
        })?;
        if !seen.insert((type_name.to_string(), method_name.to_string())) {
            return Err(CatalogError::Duplicate {
                line,
                type_name: type_name.into(),
                method_name: method_name.into(),
            });
        }
        out.push(MethodDescriptor {
            type_name: type_name.into(),
            method_name: method_name.into(),
            arity_hint,
        });
    }
    if out.is_empty() {
        return Err(CatalogError::Empty);
    }
    Ok(out)
}

pub fn load_catalog(path: &Path) -> Result<Vec<MethodDescriptor>, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    enumerate_targets(&text)
}

pub fn shipped_targets() -> Vec<MethodDescriptor> {
    enumerate_targets(SHIPPED_CATALOG).expect("shipped catalog parses")
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Nesting depth uniform on `0..=max_depth`, each kind uniform on if/while/for.
pub fn control_blueprint(seed: u64, max_depth: u32) -> ControlFlowBlueprint {
    let mut rng = rng_from(seed);
    let depth = rng.random_range(0..=max_depth);
    let sequence = (0..depth)
        .map(|_| ControlKind::ALL[rng.random_range(0..ControlKind::ALL.len())])
        .collect();
    ControlFlowBlueprint { max_depth, sequence }
}

/// Two fair coins plus a blueprint, all replayable from `seed`.
pub fn sample_constraints(method: &MethodDescriptor, seed: u64, max_depth: u32) -> GenerationConstraints {
    let mut rng = rng_from(derive_seed(seed, 0));
    let use_nested_calls = rng.random_bool(0.5);
    let use_other_methods = rng.random_bool(0.5);
    GenerationConstraints {
        base_method: method.clone(),
        use_nested_calls,
        use_other_methods,
        control_flow: control_blueprint(derive_seed(seed, 1), max_depth),
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Entry count of the shipped catalog as reported by introspecting
    /// CPython 3.10 over str, list, dict, set, tuple, int, float, bytes
    /// (public callables in each type's own namespace).
    const INTROSPECTED_ENTRY_COUNT: usize = 141;

    fn has(targets: &[MethodDescriptor], t: &str, m: &str) -> bool {
        targets.iter().any(|d| d.type_name == t && d.method_name == m)
    }

    #[test]
    fn shipped_catalog_contents() {
        let targets = shipped_targets();
        assert!(has(&targets, "str", "upper"));
        assert!(has(&targets, "dict", "get"));
        assert_eq!(targets.len(), INTROSPECTED_ENTRY_COUNT);
        let types: HashSet<&str> = targets.iter().map(|d| d.type_name.as_str()).collect();
        let want: HashSet<&str> = ["str", "list", "dict", "set", "tuple", "int", "float", "bytes"].into();
        assert_eq!(types, want);
    }

    #[test]
    fn preserves_file_order_and_comments() {
        let src = "# header\nlist\tappend\t1\n\nstr\tupper\t0\n";
        let t = enumerate_targets(src).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].qualified_name(), "list.append");
        assert_eq!(t[1].qualified_name(), "str.upper");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = enumerate_targets("str\tupper\t0\nstr upper 0\n").unwrap_err();
        assert!(matches!(err, CatalogError::Malformed { line: 2, .. }), "{err}");
        let err = enumerate_targets("str\tupper\tx\n").unwrap_err();
        assert!(matches!(err, CatalogError::Malformed { line: 1, .. }));
        let err = enumerate_targets("str\tupper\t0\nstr\tupper\t0\n").unwrap_err();
        assert!(matches!(err, CatalogError::Duplicate { line: 2, .. }));
        assert!(matches!(enumerate_targets("# only\n"), Err(CatalogError::Empty)));
    }

    #[test]
    fn depth_zero_forces_empty() {
        for seed in 0..100 {
            assert!(control_blueprint(seed, 0).sequence.is_empty());
            let m = &shipped_targets()[0];
            assert!(sample_constraints(m, seed, 0).control_flow.sequence.is_empty());
        }
    }

    #[test]
    fn replayable() {
        let m = &shipped_targets()[3];
        assert_eq!(sample_constraints(m, 99, 3), sample_constraints(m, 99, 3));
        assert_eq!(control_blueprint(5, 3), control_blueprint(5, 3));
    }

    #[test]
    fn flags_are_fair_coins() {
        let m = &shipped_targets()[0];
        let n = 10_000;
        let (mut nested, mut others) = (0, 0);
        for seed in 0..n {
            let c = sample_constraints(m, seed, DEFAULT_MAX_DEPTH);
            nested += c.use_nested_calls as u32;
            others += c.use_other_methods as u32;
        }
        for count in [nested, others] {
            let frac = f64::from(count) / n as f64;
            assert!((frac - 0.5).abs() <= 0.02, "{frac}");
        }
    }

    #[test]
    fn blueprint_covers_all_lengths_and_kinds() {
        let mut lengths = HashSet::new();
        let mut kinds = HashSet::new();
        for seed in 0..10_000 {
            let b = control_blueprint(seed, 3);
            assert!(b.sequence.len() <= 3);
            lengths.insert(b.sequence.len());
            kinds.extend(b.sequence.iter().copied());
        }
        assert_eq!(lengths, (0..=3).collect());
        assert_eq!(kinds.len(), 3);
    }

    #[test]
    fn two_level_blueprint_is_legal() {
        let b = ControlFlowBlueprint {
            max_depth: 3,
            sequence: vec![ControlKind::While, ControlKind::If],
        };
        assert!(b.sequence.len() as u32 <= b.max_depth);
        let found = (0..10_000u64)
            .map(|s| control_blueprint(s, 3))
            .any(|x| x.sequence == b.sequence);
        assert!(found);
    }
}
