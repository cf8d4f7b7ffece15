use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::wire::WireRequest;
use super::{ExecBackend, ExecError, Execution, ExecutionRequest};
use crate::jsonl::{read_jsonl, write_jsonl};

/// One recorded run, keyed by the request digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub digest: String,
    pub request: WireRequest,
    pub execution: Execution,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayStore {
    entries: BTreeMap<String, ReplayEntry>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &ExecutionRequest, execution: Execution) {
        let digest = request.digest();
        self.entries.insert(
            digest.clone(),
            ReplayEntry {
                digest,
                request: request.wire(),
                execution,
            },
        );
    }

    pub fn get(&self, request: &ExecutionRequest) -> Option<&Execution> {
        self.entries.get(&request.digest()).map(|e| &e.execution)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: ReplayStore) {
        self.entries.extend(other.entries);
    }

    pub fn load(path: &Path) -> Result<Self, ExecError> {
        let rows: Vec<ReplayEntry> = read_jsonl(path).map_err(|e| ExecError::Store {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            entries: rows.into_iter().map(|e| (e.digest.clone(), e)).collect(),
        })
    }

    /// Entries are written in digest order.
    pub fn save(&self, path: &Path) -> Result<(), ExecError> {
        let rows: Vec<&ReplayEntry> = self.entries.values().collect();
        write_jsonl(path, &rows).map_err(|e| ExecError::Store {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Answers every request from a [`ReplayStore`]; never spawns anything.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        Self { store }
    }

    pub fn load(path: &Path) -> Result<Self, ExecError> {
        Ok(Self::new(ReplayStore::load(path)?))
    }
}

impl ExecBackend for ReplayBackend {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        self.store
            .get(request)
            .cloned()
            .ok_or_else(|| ExecError::FixtureMissing {
                digest: request.digest(),
            })
    }
}

/// Delegates to an inner backend and keeps every successful answer so it can
/// be saved as replay fixtures.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<ReplayStore>,
}

impl<B: ExecBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(ReplayStore::new()),
        }
    }

    pub fn into_store(self) -> ReplayStore {
        self.recorded.into_inner().expect("recording lock poisoned")
    }

    pub fn snapshot(&self) -> ReplayStore {
        self.recorded.lock().expect("recording lock poisoned").clone()
    }
}

impl<B: ExecBackend> ExecBackend for RecordingBackend<B> {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        let exe = self.inner.run(request)?;
        self.recorded
            .lock()
            .expect("recording lock poisoned")
            .insert(request, exe.clone());
        Ok(exe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{ExecMode, ExecStatus, ExecutionResult, ExecutionTrace, StateEvent};
    use crate::jsonl::to_canonical_string;

    struct Fake;

    impl ExecBackend for Fake {
        fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
            Ok(Execution {
                result: ExecutionResult {
                    status: ExecStatus::Ok,
                    output_literal: Some(format!("{:?}", request.input_literal)),
                    stdout_text: "hi\n".into(),
                    error_kind: None,
                },
                trace: (request.mode == ExecMode::Trace).then(|| {
                    ExecutionTrace::from_lines(
                        vec![2, 3, 2, 4],
                        vec![StateEvent {
                            line: 2,
                            name: "i".into(),
                            type_name: "int".into(),
                            value: "0".into(),
                        }],
                    )
                }),
            })
        }
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let rec = RecordingBackend::new(Fake);
        let reqs = [
            ExecutionRequest::plain("def f(x): return x", "(1,)"),
            ExecutionRequest::new("def f(x): return x", "f", "(2,)", ExecMode::Trace),
        ];
        let live: Vec<Execution> = reqs.iter().map(|r| rec.run(r).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        rec.into_store().save(&path).unwrap();
        let replay = ReplayBackend::load(&path).unwrap();
        for (req, live) in reqs.iter().zip(&live) {
            let again = replay.run(req).unwrap();
            assert_eq!(to_canonical_string(&again), to_canonical_string(live));
        }
        let saved = std::fs::read(&path).unwrap();
        ReplayStore::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(saved, std::fs::read(&path).unwrap());
    }

    #[test]
    fn miss_is_fixture_error() {
        let replay = ReplayBackend::default();
        let req = ExecutionRequest::plain("x", "()");
        match replay.run(&req) {
            Err(ExecError::FixtureMissing { digest }) => assert_eq!(digest, req.digest()),
            other => panic!("{other:?}"),
        }
    }
}
