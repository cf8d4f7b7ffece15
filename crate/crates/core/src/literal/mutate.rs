use rand::Rng;

use super::{parse_args_literal, render_args, LiteralValue, ParseError};
use crate::case::{CaseStatus, Lineage, Provenance, TestCaseRecord};
use crate::rng::{derive_seed, rng_from, StageRng};

/// Characters drawn for replacement strings.
pub const MUTATION_CHARSET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
/// Integers move by at most this much in either direction.
pub const MUTATION_INT_RADIUS: i64 = 5;
const STR_MIN: usize = 5;
const STR_MAX: usize = 20;
const SET_RETRIES: usize = 64;

pub const MUTATE_STAGE_VERSION: u32 = 1;

/// Type-aware mutation of one literal tree, deterministic per seed.
///
/// Strings are replaced by fresh `[a-z0-9]` strings of length 5..=20 and
/// integers are redrawn within ±5. Floats, booleans, `None` and bytes pass
/// through. Containers keep their variant and arity; dict keys are kept and
/// only values are mutated, and set elements are redrawn until distinct so
/// the interpreter does not collapse them.
pub fn mutate_literal(value: &LiteralValue, seed: u64) -> LiteralValue {
    let mut rng = rng_from(seed);
    mutate_node(value, &mut rng)
}

fn mutate_node(value: &LiteralValue, rng: &mut StageRng) -> LiteralValue {
    match value {
        LiteralValue::Int(n) => {
            let lo = n.saturating_sub(MUTATION_INT_RADIUS);
            let hi = n.saturating_add(MUTATION_INT_RADIUS);
            LiteralValue::Int(rng.random_range(lo..=hi))
        }
        LiteralValue::Str(_) => LiteralValue::Str(random_string(rng)),
        LiteralValue::Float(_) | LiteralValue::Bool(_) | LiteralValue::None | LiteralValue::Bytes(_) => {
            value.clone()
        }
        LiteralValue::List(items) => LiteralValue::List(items.iter().map(|v| mutate_node(v, rng)).collect()),
        LiteralValue::Tuple(items) => LiteralValue::Tuple(items.iter().map(|v| mutate_node(v, rng)).collect()),
        LiteralValue::Set(items) => mutate_set(items, rng),
        LiteralValue::Map(pairs) => LiteralValue::Map(
            pairs
                .iter()
                .map(|(k, v)| (k.clone(), mutate_node(v, rng)))
                .collect(),
        ),
    }
}

fn random_string(rng: &mut StageRng) -> String {
    let len = rng.random_range(STR_MIN..=STR_MAX);
    (0..len)
        .map(|_| MUTATION_CHARSET[rng.random_range(0..MUTATION_CHARSET.len())] as char)
        .collect()
}

fn mutate_set(items: &[LiteralValue], rng: &mut StageRng) -> LiteralValue {
    let mut out: Vec<LiteralValue> = Vec::with_capacity(items.len());
    for item in items {
        let fresh = (0..SET_RETRIES)
            .map(|_| mutate_node(item, rng))
            .find(|candidate| !out.contains(candidate));
        match fresh {
            Some(v) => out.push(v),
            // e.g. {1, 2, ..., 11}: not enough room to stay distinct
            None => return LiteralValue::Set(items.to_vec()),
        }
    }
    LiteralValue::Set(out)
}

/// Produce `count` mutants of a case. Each child keeps code and entry point,
/// gets a mutated input, and loses its expected output until re-executed.
pub fn mutate_case(case: &TestCaseRecord, seed: u64, count: usize) -> Result<Vec<TestCaseRecord>, ParseError> {
    let args = parse_args_literal(&case.input_literal)?;
    let parent = LiteralValue::Tuple(args);
    Ok((0..count as u64)
        .map(|j| {
            let child_seed = derive_seed(seed, j);
            let LiteralValue::Tuple(mutated) = mutate_literal(&parent, child_seed) else {
                unreachable!("mutation preserves the tuple variant")
            };
            TestCaseRecord {
                id: format!("{}~m{:016x}", case.id, child_seed),
                code: case.code.clone(),
                entry_point: case.entry_point.clone(),
                input_literal: render_args(&mutated),
                expected_output_literal: None,
                constraints: case.constraints.clone(),
                lineage: Lineage::Mutant {
                    parent_id: case.id.clone(),
                    seed: child_seed,
                    recursive: true,
                },
                status: CaseStatus::Raw,
                provenance: Provenance {
                    prompt_template: case.provenance.prompt_template.clone(),
                    backend_id: case.provenance.backend_id.clone(),
                    ..Provenance::stage("mutate", MUTATE_STAGE_VERSION)
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::literal::parse_literal;
    use LiteralValue::*;

    #[test]
    fn int_stays_within_radius() {
        for seed in 0..500 {
            let LiteralValue::Int(m) = mutate_literal(&Int(7), seed) else { panic!() };
            assert!((2..=12).contains(&m), "{m}");
        }
    }

    #[test]
    fn int_extremes_saturate() {
        for seed in 0..50 {
            let LiteralValue::Int(m) = mutate_literal(&Int(i64::MAX), seed) else { panic!() };
            assert!(m >= i64::MAX - 5);
        }
    }

    #[test]
    fn string_is_fresh_and_bounded() {
        for seed in 0..500 {
            let LiteralValue::Str(s) = mutate_literal(&Str("hi".into()), seed) else { panic!() };
            assert!((5..=20).contains(&s.len()));
            assert!(s.bytes().all(|b| MUTATION_CHARSET.contains(&b)));
        }
    }

    #[test]
    fn passthrough_scalars() {
        for v in [Float(1.5), Bool(true), None, Bytes(b"xy".to_vec())] {
            assert_eq!(mutate_literal(&v, 3), v);
        }
    }

    #[test]
    fn list_shape_preserved() {
        let v = List(vec![Int(1), Str("ab".into())]);
        let m = mutate_literal(&v, 11);
        assert!(m.same_shape(&v));
    }

    #[test]
    fn map_keys_kept() {
        let v = parse_literal("{'a': 1, 'b': 'xyz'}").unwrap();
        let Map(pairs) = mutate_literal(&v, 5) else { panic!() };
        assert_eq!(pairs[0].0, Str("a".into()));
        assert_eq!(pairs[1].0, Str("b".into()));
    }

    #[test]
    fn crowded_set_falls_back_to_original() {
        let v = Set((0..11).map(Int).collect());
        for seed in 0..20 {
            let m = mutate_literal(&v, seed);
            let Set(items) = &m else { panic!() };
            assert_eq!(items.len(), 11);
            for (i, a) in items.iter().enumerate() {
                assert!(!items[i + 1..].contains(a));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let v = parse_literal("[1, 'a', (2, {'k': 'v'})]").unwrap();
        assert_eq!(render_literal_of(&mutate_literal(&v, 42)), render_literal_of(&mutate_literal(&v, 42)));
    }

    fn render_literal_of(v: &LiteralValue) -> String {
        crate::literal::render_literal(v)
    }

    #[test]
    fn mutate_case_contract() {
        let mut parent = TestCaseRecord::raw("c1", "def f(s, n):\n    return s * n", "('ab', 3)");
        parent.expected_output_literal = Some("'ababab'".into());
        parent.status = CaseStatus::Validated;
        let kids = mutate_case(&parent, 9, 2).unwrap();
        assert_eq!(kids.len(), 2);
        for kid in &kids {
            assert_eq!(kid.code, parent.code);
            assert_eq!(kid.entry_point, parent.entry_point);
            assert!(kid.expected_output_literal.is_none());
            assert_eq!(kid.status, CaseStatus::Raw);
            assert!(matches!(&kid.lineage, Lineage::Mutant { parent_id, .. } if parent_id == "c1"));
            let args = parse_args_literal(&kid.input_literal).unwrap();
            assert_eq!(args.len(), 2);
            assert_ne!(kid.input_literal, parent.input_literal);
        }
        assert_ne!(kids[0].id, kids[1].id);
        assert_eq!(kids, mutate_case(&parent, 9, 2).unwrap());
    }

    #[test]
    fn mutate_case_rejects_bad_input() {
        let case = TestCaseRecord::raw("c", "def f(x): return x", "(x,)");
        assert!(mutate_case(&case, 1, 2).is_err());
    }
}
