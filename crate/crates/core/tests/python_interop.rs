//! Checks against a real CPython. Each test returns early when `python3`
//! is not on the path.

use std::io::Write;
use std::process::{Command, Stdio};

use codereasoner::catalog::shipped_targets;
use codereasoner::exec::{
    ground_truth_questions, ExecBackend, ExecMode, ExecStatus, ExecutionRequest, QuestionKind, RecordingBackend, ReplayBackend, ReplayStore,
    StateEvent, SubprocessBackend,
};
use codereasoner::literal::{parse_literal, render_literal, LiteralValue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{fixtures, have_python, random_tree};

fn python(script: &str, stdin: &str) -> String {
    let mut child = Command::new("python3")
        .arg("-c")
        .arg(script)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .expect("spawn python3");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "python3 failed");
    String::from_utf8(out.stdout).unwrap()
}

fn harness() -> SubprocessBackend {
    SubprocessBackend::new("python3", fixtures().join("mini_harness.py"))
}

const LOOP: &str = "def f(items):\n    total = 0\n    for x in items:\n        total += x\n    total *= 2\n    return total";

#[test]
fn shipped_catalog_methods_exist() {
    if !have_python() {
        return;
    }
    let targets = shipped_targets();
    let input: String = targets.iter().map(|t| format!("{}\t{}\n", t.type_name, t.method_name)).collect();
    let script = "import builtins, sys\nfor line in sys.stdin:\n    t, m = line.rstrip('\\n').split('\\t')\n    print(int(callable(getattr(getattr(builtins, t), m, None))))";
    let verdicts = python(script, &input);
    let missing: Vec<String> = targets
        .iter()
        .zip(verdicts.lines())
        .filter(|(_, v)| *v != "1")
        .map(|(t, _)| t.qualified_name())
        .collect();
    assert_eq!(verdicts.lines().count(), targets.len());
    assert!(missing.is_empty(), "not callable here: {missing:?}");
}

fn has_set(v: &LiteralValue) -> bool {
    match v {
        LiteralValue::Set(_) => true,
        LiteralValue::List(xs) | LiteralValue::Tuple(xs) => xs.iter().any(has_set),
        LiteralValue::Map(kv) => kv.iter().any(|(k, v)| has_set(k) || has_set(v)),
        _ => false,
    }
}

#[test]
fn rendering_matches_python_repr() {
    if !have_python() {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trees: Vec<LiteralValue> = (0..2000).map(|_| random_tree(&mut rng, 3)).collect();
    let input: String = trees.iter().map(|t| serde_json::to_string(&render_literal(t)).unwrap() + "\n").collect();
    let script = "import ast, json, sys\nfor line in sys.stdin:\n    print(json.dumps(repr(ast.literal_eval(json.loads(line)))))";
    let reprs: Vec<String> = python(script, &input).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reprs.len(), trees.len());
    for (tree, py) in trees.iter().zip(&reprs) {
        if has_set(tree) {
            // set iteration order is the interpreter's business
            assert_eq!(&parse_literal(py).unwrap(), tree, "{py}");
        } else {
            assert_eq!(&render_literal(tree), py);
        }
    }
}

#[test]
fn loop_fixture_trace_matches_hand_trace() {
    if !have_python() {
        return;
    }
    let backend = harness();
    let run = backend
        .run(&ExecutionRequest::new(LOOP, "f", "([1, 2, 3],)", ExecMode::Trace))
        .unwrap();
    assert_eq!(run.result.status, ExecStatus::Ok);
    assert_eq!(run.result.output_literal.as_deref(), Some("12"));
    let trace = run.trace.expect("trace mode returns a trace");
    assert_eq!(trace.executed_lines, vec![1, 2, 3, 4, 3, 4, 3, 4, 3, 5, 6]);
    assert_eq!(trace.covered_lines.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
    assert!(trace.next_line_pairs.contains(&(4, 3)));
    assert!(trace.next_line_pairs.contains(&(3, 5)));
    let x_values: Vec<&str> = trace.state_events.iter().filter(|e| e.name == "x").map(|e| e.value.as_str()).collect();
    assert_eq!(x_values, ["1", "2", "3"]);
    let ev = |line, name: &str, value: &str| StateEvent {
        line,
        name: name.into(),
        type_name: "int".into(),
        value: value.into(),
    };
    assert_eq!(trace.state_events.last(), Some(&ev(5, "total", "12")));
    assert_eq!(trace.state_events[0], ev(2, "total", "0"));

    let questions = ground_truth_questions(LOOP, &trace);
    let paths: Vec<(u32, &str)> = questions
        .iter()
        .filter(|q| q.kind == QuestionKind::Path)
        .map(|q| (q.payload.line, q.gold_answer.as_str()))
        .collect();
    assert!(paths.contains(&(4, "3")));
    assert_eq!(questions.iter().filter(|q| q.kind == QuestionKind::Coverage).count(), 6);
}

#[test]
fn plain_and_trace_agree_and_repeat() {
    if !have_python() {
        return;
    }
    let backend = harness();
    let plain = ExecutionRequest::new(LOOP, "f", "([4, 5],)", ExecMode::Plain);
    let traced = ExecutionRequest::new(LOOP, "f", "([4, 5],)", ExecMode::Trace);
    let a = backend.run(&plain).unwrap();
    let b = backend.run(&traced).unwrap();
    assert!(a.trace.is_none());
    assert_eq!(a.result, b.result);
    assert_eq!(backend.run(&traced).unwrap(), b);

    let err = backend.run(&ExecutionRequest::plain("def f(x):\n    return x / 0", "(1,)")).unwrap();
    assert_eq!(err.result.status, ExecStatus::RuntimeError);
    assert_eq!(err.result.error_kind.as_deref(), Some("ZeroDivisionError"));
    assert!(err.trace.is_none());
}

#[test]
fn recorded_runs_replay_byte_for_byte() {
    if !have_python() {
        return;
    }
    let recorder = RecordingBackend::new(harness());
    let requests = [
        ExecutionRequest::new(LOOP, "f", "([1, 2, 3],)", ExecMode::Trace),
        ExecutionRequest::plain("def f(s):\n    print(s)\n    return s[::-1]", "('abc',)"),
        ExecutionRequest::plain("def f(d):\n    return d['k']", "({},)"),
    ];
    let live: Vec<_> = requests.iter().map(|r| recorder.run(r).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay.jsonl");
    recorder.into_store().save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();

    let replay = ReplayBackend::load(&path).unwrap();
    for (req, exe) in requests.iter().zip(&live) {
        let again = replay.run(req).unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(exe).unwrap());
    }
    ReplayStore::load(&path).unwrap().save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}
