use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::wire::WireResponse;
use super::{ExecBackend, ExecError, ExecStatus, Execution, ExecutionRequest, ExecutionResult};
use crate::jsonl::to_canonical_string;

const STDERR_KEEP: usize = 16 * 1024;
const POLL: Duration = Duration::from_millis(2);

/// Runs each request in a fresh interpreter process executing the harness
/// script. The child gets an empty environment (plus a fixed hash seed) and
/// a temporary working directory, and is killed at the request deadline or
/// as soon as its stdout exceeds the output cap.
#[derive(Debug, Clone)]
pub struct SubprocessBackend {
    pub interpreter: String,
    pub interpreter_args: Vec<String>,
    pub harness_path: PathBuf,
}

impl SubprocessBackend {
    pub fn new(interpreter: impl Into<String>, harness_path: impl Into<PathBuf>) -> Self {
        Self {
            interpreter: interpreter.into(),
            interpreter_args: Vec::new(),
            harness_path: harness_path.into(),
        }
    }

    fn spawn(&self, program: &Path, workdir: &Path) -> std::io::Result<Child> {
        let mut cmd = Command::new(program);
        // A fresh process group lets a kill reach anything the program forked.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        cmd.args(&self.interpreter_args)
            .arg(&self.harness_path)
            .current_dir(workdir)
            .env_clear()
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
    }
}

/// Resolve a program name against `PATH` the way a shell would.
pub fn resolve_program(name: &str) -> Option<PathBuf> {
    let candidate = Path::new(name);
    if name.contains(std::path::MAIN_SEPARATOR) {
        return candidate.is_file().then(|| candidate.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(name))
            .find(|p| is_executable(p))
    })
}

#[cfg(unix)]
fn is_executable(p: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    p.metadata().map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0).unwrap_or(false)
}

#[cfg(not(unix))]
fn is_executable(p: &Path) -> bool {
    p.is_file()
}

#[cfg(unix)]
fn kill_tree(child: &mut Child) {
    // SAFETY: kill(2) with a negative pid only signals the child's own group.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut Child) {
    let _ = child.kill();
}

fn capped_reader(mut src: impl Read + Send + 'static, cap: usize, overflow: Arc<AtomicBool>) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match src.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    buf.extend_from_slice(&chunk[..n]);
                    if buf.len() > cap {
                        overflow.store(true, Ordering::SeqCst);
                        break;
                    }
                }
            }
        }
        buf
    })
}

fn draining_reader(mut src: impl Read + Send + 'static) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut chunk = [0u8; 8192];
        while let Ok(n) = src.read(&mut chunk) {
            if n == 0 {
                break;
            }
            let room = STDERR_KEEP.saturating_sub(kept.len());
            kept.extend_from_slice(&chunk[..n.min(room)]);
        }
        kept
    })
}

impl ExecBackend for SubprocessBackend {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        let Some(program) = resolve_program(&self.interpreter) else {
            return Ok(Execution::without_trace(ExecutionResult::failed(ExecStatus::InterpreterMissing)));
        };
        let workdir = tempfile::tempdir().map_err(ExecError::Spawn)?;
        let mut child = match self.spawn(&program, workdir.path()) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(Execution::without_trace(ExecutionResult::failed(ExecStatus::InterpreterMissing)));
            }
            Err(e) => return Err(ExecError::Spawn(e)),
        };

        let payload = to_canonical_string(&request.wire());
        let mut stdin = child.stdin.take().expect("stdin piped");
        let writer = thread::spawn(move || {
            // The child may exit or be killed before reading everything.
            let _ = stdin.write_all(payload.as_bytes());
        });
        let overflow = Arc::new(AtomicBool::new(false));
        let stdout = capped_reader(
            child.stdout.take().expect("stdout piped"),
            request.output_cap_bytes,
            Arc::clone(&overflow),
        );
        let stderr = draining_reader(child.stderr.take().expect("stderr piped"));

        let deadline = Instant::now() + Duration::from_millis(request.timeout_ms);
        let mut killed_for = None;
        let exit = loop {
            if let Some(status) = child.try_wait().map_err(ExecError::Spawn)? {
                break status;
            }
            if overflow.load(Ordering::SeqCst) {
                killed_for = Some(ExecStatus::OversizedOutput);
            } else if Instant::now() >= deadline {
                killed_for = Some(ExecStatus::Timeout);
            }
            if killed_for.is_some() {
                kill_tree(&mut child);
                break child.wait().map_err(ExecError::Spawn)?;
            }
            thread::sleep(POLL);
        };
        if killed_for.is_none() {
            // Anything the program left running in the background would keep
            // the pipes open.
            kill_tree(&mut child);
        }
        let _ = writer.join();
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();

        if let Some(status) = killed_for {
            return Ok(Execution::without_trace(ExecutionResult::failed(status)));
        }
        if overflow.load(Ordering::SeqCst) || out.len() > request.output_cap_bytes {
            return Ok(Execution::without_trace(ExecutionResult::failed(ExecStatus::OversizedOutput)));
        }
        if !exit.success() {
            return Err(ExecError::Harness {
                exit_code: exit.code(),
                stderr: String::from_utf8_lossy(&err).into_owned(),
            });
        }
        WireResponse::parse(&out)?.into_execution(request.mode)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn sh(harness: PathBuf) -> SubprocessBackend {
        SubprocessBackend::new("sh", harness)
    }

    #[test]
    fn missing_interpreter() {
        let b = SubprocessBackend::new("definitely-not-an-interpreter-xyz", "/nonexistent");
        let r = b.run(&ExecutionRequest::plain("", "()")).unwrap();
        assert_eq!(r.result.status, ExecStatus::InterpreterMissing);
        let b = SubprocessBackend::new("/no/such/dir/python3", "/nonexistent");
        assert_eq!(b.run(&ExecutionRequest::plain("", "()")).unwrap().result.status, ExecStatus::InterpreterMissing);
    }

    #[test]
    fn canned_harness_response() {
        let dir = tempfile::tempdir().unwrap();
        let h = script(
            dir.path(),
            "h.sh",
            "cat > /dev/null\nprintf '%s' '{\"status\":\"ok\",\"output_literal\":\"6\",\"stdout_text\":\"\",\"error_kind\":null}'\n",
        );
        let r = sh(h).run(&ExecutionRequest::plain("def f(x): return x*2", "(3,)")).unwrap();
        assert_eq!(r.result.status, ExecStatus::Ok);
        assert_eq!(r.result.output_literal.as_deref(), Some("6"));
    }

    #[test]
    fn child_sees_request_on_stdin_and_empty_env() {
        let dir = tempfile::tempdir().unwrap();
        // Echo the request back inside stdout_text, plus the environment size.
        let h = script(
            dir.path(),
            "h.sh",
            "req=$(cat)\nn=$(env | grep -v -e '^PYTHON' -e '^PWD=' -e '^SHLVL=' -e '^_=' | wc -l)\nesc=$(printf '%s' \"$req\" | sed 's/\\\\/\\\\\\\\/g; s/\"/\\\\\"/g')\nprintf '{\"status\":\"ok\",\"output_literal\":\"%s\",\"stdout_text\":\"%s\"}' \"$n\" \"$esc\"\n",
        );
        let req = ExecutionRequest::plain("def f(x): return x", "(1,)");
        let r = sh(h).run(&req).unwrap();
        assert_eq!(r.result.output_literal.as_deref(), Some("0"));
        let echoed: serde_json::Value = serde_json::from_str(&r.result.stdout_text).unwrap();
        assert_eq!(echoed["code"], "def f(x): return x");
        assert_eq!(echoed["mode"], "plain");
        assert_eq!(echoed["input_literal"], "(1,)");
    }

    #[test]
    fn timeout_kills_child() {
        let dir = tempfile::tempdir().unwrap();
        let h = script(dir.path(), "h.sh", "sleep 30\n");
        let started = Instant::now();
        let r = sh(h)
            .run(&ExecutionRequest::plain("", "()").with_limits(200, 1024))
            .unwrap();
        assert_eq!(r.result.status, ExecStatus::Timeout);
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn oversized_output() {
        let dir = tempfile::tempdir().unwrap();
        let h = script(dir.path(), "h.sh", "cat > /dev/null\nyes aaaaaaaaaaaaaaaa\n");
        let r = sh(h)
            .run(&ExecutionRequest::plain("", "()").with_limits(5_000, 4096))
            .unwrap();
        assert_eq!(r.result.status, ExecStatus::OversizedOutput);
    }

    #[test]
    fn harness_failure_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let h = script(dir.path(), "h.sh", "cat > /dev/null\necho broken >&2\nexit 3\n");
        match sh(h).run(&ExecutionRequest::plain("", "()")) {
            Err(ExecError::Harness { exit_code, stderr }) => {
                assert_eq!(exit_code, Some(3));
                assert!(stderr.contains("broken"));
            }
            other => panic!("{other:?}"),
        }
    }
}
