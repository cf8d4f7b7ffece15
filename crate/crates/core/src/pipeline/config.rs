use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::catalog::DEFAULT_MAX_DEPTH;
use crate::decontam::DEFAULT_NGRAM;
use crate::exec::{DEFAULT_OUTPUT_CAP_BYTES, DEFAULT_TIMEOUT_MS};
use crate::grpo::GrpoConfig;
use crate::teacher::BackendConfig;

/// Everything a pipeline run needs, read from a TOML file. Relative paths
/// are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub catalog: CatalogSection,
    pub teacher: Option<TeacherSection>,
    pub exec: ExecSection,
    pub mutate: MutateSection,
    pub distill: DistillSection,
    pub decontam: DecontamSection,
    pub grpo: GrpoConfig,
    pub toy: ToySection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 4,
            catalog: CatalogSection::default(),
            teacher: None,
            exec: ExecSection::default(),
            mutate: MutateSection::default(),
            distill: DistillSection::default(),
            decontam: DecontamSection::default(),
            grpo: GrpoConfig::default(),
            toy: ToySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    /// Method catalog TSV; the shipped catalog when absent.
    pub path: Option<PathBuf>,
    pub max_depth: u32,
    pub samples_per_method: usize,
}

impl Default for CatalogSection {
    fn default() -> Self {
        Self {
            path: None,
            max_depth: DEFAULT_MAX_DEPTH,
            samples_per_method: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    pub backend: BackendConfig,
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecKind {
    Subprocess,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecSection {
    pub backend: ExecKind,
    pub interpreter: String,
    pub interpreter_args: Vec<String>,
    /// Interpreter-side harness script (subprocess backend).
    pub harness: Option<PathBuf>,
    /// Recorded executions (replay backend).
    pub replay: Option<PathBuf>,
    /// When set, subprocess results are also appended to this replay file.
    pub record: Option<PathBuf>,
    pub timeout_ms: u64,
    pub output_cap_bytes: usize,
}

impl Default for ExecSection {
    fn default() -> Self {
        Self {
            backend: ExecKind::Subprocess,
            interpreter: "python3".into(),
            interpreter_args: Vec::new(),
            harness: None,
            replay: None,
            record: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            output_cap_bytes: DEFAULT_OUTPUT_CAP_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutateSection {
    pub count: usize,
}

impl Default for MutateSection {
    fn default() -> Self {
        Self { count: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub strict: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self { strict: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamSection {
    pub n: usize,
    /// JSONL files whose lines carry a `text` field.
    pub test_sets: Vec<PathBuf>,
}

impl Default for DecontamSection {
    fn default() -> Self {
        Self {
            n: DEFAULT_NGRAM,
            test_sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub iterations: usize,
    pub queries: usize,
    pub learning_rate: f64,
    pub inner_steps: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            iterations: 300,
            queries: 4,
            learning_rate: 1.0,
            inner_steps: 4,
        }
    }
}

const MAX_JOBS: usize = 256;
const MAX_DEPTH_LIMIT: u32 = 8;
const MAX_MUTANTS: usize = 1000;

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        for p in [&mut self.catalog.path, &mut self.exec.harness, &mut self.exec.replay, &mut self.exec.record]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        for p in &mut self.decontam.test_sets {
            resolve(base, p);
        }
        if let Some(TeacherSection {
            backend: BackendConfig::Stub { fixtures },
            ..
        }) = &mut self.teacher
        {
            resolve(base, fixtures);
        }
    }

    /// Range checks and existence of every input path the file names.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(1..=MAX_JOBS).contains(&self.jobs) {
            return bad(format!("jobs must be in 1..={MAX_JOBS}, got {}", self.jobs));
        }
        if self.catalog.max_depth > MAX_DEPTH_LIMIT {
            return bad(format!("catalog.max_depth must be at most {MAX_DEPTH_LIMIT}, got {}", self.catalog.max_depth));
        }
        if self.catalog.samples_per_method == 0 {
            return bad("catalog.samples_per_method must be positive".into());
        }
        if self.mutate.count > MAX_MUTANTS {
            return bad(format!("mutate.count must be at most {MAX_MUTANTS}, got {}", self.mutate.count));
        }
        if self.decontam.n == 0 {
            return bad("decontam.n must be positive".into());
        }
        if self.exec.timeout_ms == 0 || self.exec.output_cap_bytes == 0 {
            return bad("exec.timeout_ms and exec.output_cap_bytes must be positive".into());
        }
        if let Some(t) = &self.teacher {
            if t.max_in_flight == 0 {
                return bad("teacher.max_in_flight must be positive".into());
            }
        }
        if self.toy.queries == 0 || self.toy.inner_steps == 0 || self.toy.learning_rate.is_nan() || self.toy.learning_rate <= 0.0 {
            return bad("toy.queries, toy.inner_steps and toy.learning_rate must be positive".into());
        }
        self.grpo.validate().map_err(|e| PipelineError::Config(e.to_string()))?;

        let mut inputs: Vec<(&str, &Path)> = Vec::new();
        if let Some(p) = &self.catalog.path {
            inputs.push(("catalog.path", p));
        }
        if let Some(p) = &self.exec.harness {
            inputs.push(("exec.harness", p));
        }
        if let Some(p) = &self.exec.replay {
            inputs.push(("exec.replay", p));
        }
        if let Some(TeacherSection {
            backend: BackendConfig::Stub { fixtures },
            ..
        }) = &self.teacher
        {
            inputs.push(("teacher.backend.fixtures", fixtures));
        }
        for p in &self.decontam.test_sets {
            inputs.push(("decontam.test_sets", p));
        }
        for (key, p) in inputs {
            if !p.exists() {
                return bad(format!("{key}: {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn full_file_parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("fx.jsonl"), "").unwrap();
        let text = r#"
            out_dir = "runs"
            seed = 7
            jobs = 2
            [catalog]
            max_depth = 2
            [teacher]
            max_in_flight = 3
            [teacher.backend]
            kind = "stub"
            fixtures = "fx.jsonl"
            [exec]
            backend = "replay"
            replay = "fx.jsonl"
            [grpo]
            beta = 0.1
            [toy]
            iterations = 50
        "#;
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("runs"));
        assert_eq!(cfg.exec.replay, Some(dir.path().join("fx.jsonl")));
        assert_eq!(cfg.grpo.beta, 0.1);
        assert_eq!(cfg.grpo.epsilon, 0.2);
        assert_eq!(cfg.toy.iterations, 50);
        assert_eq!(cfg.teacher.unwrap().max_in_flight, 3);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        for text in ["jobs = 0", "[decontam]\nn = 0", "[grpo]\nepsilon = -1.0", "unknown_key = 1", "[exec]\nreplay = \"missing.jsonl\""] {
            std::fs::write(&path, text).unwrap();
            assert!(matches!(PipelineConfig::load(&path), Err(PipelineError::Config(_))), "{text}");
        }
    }
}
