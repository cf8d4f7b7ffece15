//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use codereasoner::literal::LiteralValue;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// True when `python3` runs; tests that need it return early otherwise.
pub fn have_python() -> bool {
    let ok = Command::new("python3").arg("-c").arg("pass").output().is_ok_and(|o| o.status.success());
    if !ok {
        eprintln!("python3 not available; skipping");
    }
    ok
}

pub fn random_string(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] = &['a', 'Q', 'z', ' ', '\'', '"', '\\', '\n', '\t', '\u{7}', 'é', '中', '😀', '0'];
    let len = rng.random_range(0..8);
    // always carries an upper-case letter, which a mutant never contains
    let mut s: String = (0..len).map(|_| POOL[rng.random_range(0..POOL.len())]).collect();
    s.push('Q');
    s
}

fn random_float(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..5) {
        0 => rng.random_range(-1000..1000) as f64,
        1 => rng.random_range(-1.0..1.0),
        2 => rng.random_range(-1e30..1e30),
        3 => rng.random_range(-1e-6..1e-6),
        _ => [0.1, 0.5, 1e16, 1.5e-5, -2.25, 123456789.0][rng.random_range(0..6)],
    }
}

fn random_hashable(rng: &mut ChaCha8Rng, depth: u32) -> LiteralValue {
    match rng.random_range(0..if depth == 0 { 2 } else { 3 }) {
        0 => LiteralValue::Int(rng.random_range(-1000..1000)),
        1 => LiteralValue::Str(random_string(rng)),
        _ => LiteralValue::Tuple((0..rng.random_range(0..3)).map(|_| random_hashable(rng, depth - 1)).collect()),
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, depth: u32) -> LiteralValue {
    let leaf = depth == 0 || rng.random_bool(0.4);
    if leaf {
        return match rng.random_range(0..7) {
            0 | 1 => LiteralValue::Int(rng.random_range(i64::MIN / 2..i64::MAX / 2) >> rng.random_range(0..60)),
            2 | 3 => LiteralValue::Str(random_string(rng)),
            4 => LiteralValue::Float(random_float(rng)),
            5 => LiteralValue::Bool(rng.random_bool(0.5)),
            _ => {
                if rng.random_bool(0.5) {
                    LiteralValue::None
                } else {
                    LiteralValue::Bytes((0..rng.random_range(0..6)).map(|_| rng.random()).collect())
                }
            }
        };
    }
    let n = rng.random_range(0..4);
    match rng.random_range(0..4) {
        0 => LiteralValue::List((0..n).map(|_| random_tree(rng, depth - 1)).collect()),
        1 => LiteralValue::Tuple((0..n).map(|_| random_tree(rng, depth - 1)).collect()),
        2 => {
            let mut items: Vec<LiteralValue> = Vec::new();
            for _ in 0..n {
                let v = random_hashable(rng, 1);
                if !items.contains(&v) {
                    items.push(v);
                }
            }
            LiteralValue::Set(items)
        }
        _ => {
            let mut pairs: Vec<(LiteralValue, LiteralValue)> = Vec::new();
            for _ in 0..n {
                let k = random_hashable(rng, 1);
                if !pairs.iter().any(|(pk, _)| *pk == k) {
                    pairs.push((k, random_tree(rng, depth - 1)));
                }
            }
            LiteralValue::Map(pairs)
        }
    }
}

