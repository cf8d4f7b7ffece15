//! Stage orchestration: each stage reads a JSONL input, writes a JSONL output
//! and a `*.stats.json` sidecar, and is skipped when neither its input nor its
//! settings changed since the sidecar was written.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    CatalogSection, DecontamSection, DistillSection, ExecKind, ExecSection, MutateSection, PipelineConfig, TeacherSection,
    ToySection,
};

use crate::case::{CaseStatus, Direction, Lineage, Provenance, TestCaseRecord};
use crate::catalog::{load_catalog, sample_constraints, shipped_targets, CatalogError, GenerationConstraints, SHIPPED_CATALOG};
use crate::decontam::{build_index, partition};
use crate::eval::{aggregate, score_all, Prediction, Shown, TaskKind, TaskRecord};
use crate::exec::{
    ground_truth_questions, run_many, ExecBackend, ExecError, ExecMode, ExecStatus, Execution, ExecutionRequest, Limited,
    RecordingBackend, ReplayBackend, ReplayStore, SubprocessBackend,
};
use crate::filter::{rejection_sample_text, validate_all, FilterStats, DISTILL_STAGE_VERSION, FILTER_STAGE_VERSION};
use crate::grpo::toy::{curve_csv, CurvePoint};
use crate::grpo::{toy_train, ToyEnv, TrainOptions};
use crate::jsonl::{read_jsonl, sha256_hex, to_canonical_string, write_jsonl, JsonlError};
use crate::literal::{mutate_case, render_args};
use crate::pool::bounded_map;
use crate::rng::derive_seed;
use crate::teacher::{
    build_backend, build_cot_prompt, build_generation_prompt, complete_many, parse_teacher_output, split_entry_call,
    CompletionBackend, PromptSpec, TeacherError, TEMPLATE_VERSION,
};

pub const CATALOG_STAGE_VERSION: u32 = 1;
pub const GENERATE_STAGE_VERSION: u32 = 1;
pub const DECONTAM_STAGE_VERSION: u32 = 1;
pub const TRACE_STAGE_VERSION: u32 = 1;
pub const EVAL_STAGE_VERSION: u32 = 1;
pub const GRPO_DEMO_STAGE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} needs {}; run `{prerequisite}` first", missing.display())]
    Dependency {
        stage: Stage,
        missing: PathBuf,
        prerequisite: &'static str,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("teacher: {0}")]
    Teacher(#[from] TeacherError),
    #[error("execution: {0}")]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Filter(#[from] crate::filter::FilterError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Grpo(#[from] crate::grpo::GrpoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Catalog(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Catalog,
    Generate,
    Filter,
    Mutate,
    Distill,
    Decontam,
    Trace,
    Eval,
    GrpoDemo,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Catalog => "catalog",
            Stage::Generate => "generate",
            Stage::Filter => "filter",
            Stage::Mutate => "mutate",
            Stage::Distill => "distill",
            Stage::Decontam => "decontam",
            Stage::Trace => "trace",
            Stage::Eval => "eval",
            Stage::GrpoDemo => "grpo-demo",
        }
    }

    fn version(self) -> u32 {
        match self {
            Stage::Catalog => CATALOG_STAGE_VERSION,
            Stage::Generate => GENERATE_STAGE_VERSION,
            Stage::Filter => FILTER_STAGE_VERSION,
            Stage::Mutate => crate::literal::MUTATE_STAGE_VERSION,
            Stage::Distill => DISTILL_STAGE_VERSION,
            Stage::Decontam => DECONTAM_STAGE_VERSION,
            Stage::Trace => TRACE_STAGE_VERSION,
            Stage::Eval => EVAL_STAGE_VERSION,
            Stage::GrpoDemo => GRPO_DEMO_STAGE_VERSION,
        }
    }

    /// Default input file and the stage that produces it.
    fn default_input(self) -> Option<(&'static str, &'static str)> {
        match self {
            Stage::Catalog | Stage::GrpoDemo => None,
            Stage::Generate => Some(("constraints.jsonl", "catalog")),
            Stage::Filter => Some(("generated.jsonl", "generate")),
            Stage::Mutate | Stage::Distill | Stage::Decontam | Stage::Trace => Some(("validated.jsonl", "filter")),
            Stage::Eval => Some(("tasks.jsonl", "trace")),
        }
    }

    fn default_output(self) -> &'static str {
        match self {
            Stage::Catalog => "constraints.jsonl",
            Stage::Generate => "generated.jsonl",
            Stage::Filter => "validated.jsonl",
            Stage::Mutate => "mutated.jsonl",
            Stage::Distill => "distill.jsonl",
            Stage::Decontam => "decontaminated.jsonl",
            Stage::Trace => "tasks.jsonl",
            Stage::Eval => "eval_report.json",
            Stage::GrpoDemo => "grpo_curve.csv",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct StageArgs {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub strict: Option<bool>,
    pub n: Option<usize>,
    pub iters: Option<usize>,
    /// Process at most this many input records.
    pub limit: Option<usize>,
    pub predictions: Option<PathBuf>,
    /// Score the gold answers instead of a predictions file.
    pub use_gold: bool,
    /// Write the prompts a teacher stage would send, then stop.
    pub emit_prompts: Option<PathBuf>,
    pub force: bool,
}

/// Sidecar written next to every stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: Stage,
    pub stage_version: u32,
    pub input_digest: Option<String>,
    pub config_digest: String,
    pub output_digest: String,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub report: Value,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub output: PathBuf,
    pub skipped: bool,
    pub stats: StageStats,
    /// Extra human-readable lines (tables, trend summaries).
    pub notes: Vec<String>,
}

pub fn stats_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    output.with_file_name(format!("{stem}.stats.json"))
}

pub fn discarded_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    output.with_file_name(format!("{stem}.discarded.jsonl"))
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

struct Counts(BTreeMap<String, usize>);

impl Counts {
    fn new() -> Self {
        Self(BTreeMap::new())
    }

    fn add(&mut self, key: impl Into<String>, n: usize) {
        *self.0.entry(key.into()).or_default() += n;
    }
}

/// What a stage body hands back to the runner.
struct Produced {
    counts: Counts,
    report: Value,
    notes: Vec<String>,
}

impl Produced {
    fn counts(counts: Counts) -> Self {
        Self {
            counts,
            report: Value::Null,
            notes: Vec::new(),
        }
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    args: &'a StageArgs,
    stage: Stage,
    input: Option<PathBuf>,
    output: PathBuf,
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.args.seed.unwrap_or(self.cfg.seed)
    }

    fn jobs(&self) -> usize {
        self.args.jobs.unwrap_or(self.cfg.jobs).max(1)
    }

    fn input(&self) -> &Path {
        self.input.as_deref().expect("stage has an input")
    }

    fn read_cases(&self) -> Result<Vec<TestCaseRecord>, PipelineError> {
        let mut cases: Vec<TestCaseRecord> = read_jsonl(self.input())?;
        if let Some(n) = self.args.limit {
            cases.truncate(n);
        }
        Ok(cases)
    }

    fn validated_cases(&self, counts: &mut Counts) -> Result<Vec<TestCaseRecord>, PipelineError> {
        let all = self.read_cases()?;
        let total = all.len();
        let kept: Vec<TestCaseRecord> = all.into_iter().filter(TestCaseRecord::is_validated).collect();
        counts.add("input_records", total);
        counts.add("skipped_not_validated", total - kept.len());
        Ok(kept)
    }

    fn teacher(&self) -> Result<(Box<dyn CompletionBackend>, usize), PipelineError> {
        let t = self
            .cfg
            .teacher
            .as_ref()
            .ok_or_else(|| PipelineError::Config(format!("{} needs a [teacher] section", self.stage)))?;
        Ok((build_backend(&t.backend)?, t.max_in_flight))
    }
}

/// The configured execution backend, plus a recorder to flush afterwards.
pub struct ExecHandle {
    backend: Box<dyn ExecBackend>,
    record: Option<(std::sync::Arc<RecordingBackend<Limited<SubprocessBackend>>>, PathBuf)>,
}

struct Shared<T>(std::sync::Arc<T>);

impl<T: ExecBackend> ExecBackend for Shared<T> {
    fn run(&self, request: &ExecutionRequest) -> Result<Execution, ExecError> {
        self.0.run(request)
    }
}

impl ExecHandle {
    pub fn from_config(cfg: &ExecSection) -> Result<Self, PipelineError> {
        match cfg.backend {
            ExecKind::Replay => {
                let path = cfg
                    .replay
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("exec.backend = \"replay\" needs exec.replay".into()))?;
                Ok(Self {
                    backend: Box::new(ReplayBackend::load(path)?),
                    record: None,
                })
            }
            ExecKind::Subprocess => {
                let harness = cfg
                    .harness
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("exec.backend = \"subprocess\" needs exec.harness".into()))?;
                let mut sub = SubprocessBackend::new(cfg.interpreter.clone(), harness.clone());
                sub.interpreter_args = cfg.interpreter_args.clone();
                let limited = Limited {
                    inner: sub,
                    timeout_ms: cfg.timeout_ms,
                    output_cap_bytes: cfg.output_cap_bytes,
                };
                Ok(match &cfg.record {
                    Some(path) => {
                        let rec = std::sync::Arc::new(RecordingBackend::new(limited));
                        Self {
                            backend: Box::new(Shared(rec.clone())),
                            record: Some((rec, path.clone())),
                        }
                    }
                    None => Self {
                        backend: Box::new(limited),
                        record: None,
                    },
                })
            }
        }
    }

    pub fn backend(&self) -> &dyn ExecBackend {
        self.backend.as_ref()
    }

    /// Merge anything recorded into the replay file.
    pub fn finish(self) -> Result<(), PipelineError> {
        if let Some((rec, path)) = self.record {
            let mut store = if path.exists() { ReplayStore::load(&path)? } else { ReplayStore::new() };
            store.merge(rec.snapshot());
            store.save(&path)?;
        }
        Ok(())
    }
}

fn stage_settings(stage: Stage, cfg: &PipelineConfig, ctx: &Ctx) -> Result<Value, PipelineError> {
    let exec = || -> Result<Value, PipelineError> {
        let replay = match (&cfg.exec.backend, &cfg.exec.replay) {
            (ExecKind::Replay, Some(p)) => Some(file_digest(p)?),
            _ => None,
        };
        Ok(json!({
            "backend": cfg.exec.backend,
            "interpreter": cfg.exec.interpreter,
            "interpreter_args": cfg.exec.interpreter_args,
            "harness": cfg.exec.harness.as_ref().map(|p| file_digest(p)).transpose()?,
            "replay": replay,
            "timeout_ms": cfg.exec.timeout_ms,
            "output_cap_bytes": cfg.exec.output_cap_bytes,
        }))
    };
    let teacher = || -> Result<Value, PipelineError> {
        Ok(match &cfg.teacher {
            Some(TeacherSection {
                backend: crate::teacher::BackendConfig::Stub { fixtures },
                ..
            }) => json!({"stub": file_digest(fixtures)?, "template": TEMPLATE_VERSION}),
            Some(TeacherSection {
                backend: crate::teacher::BackendConfig::Http(h),
                ..
            }) => json!({"http": h.base_url, "model": h.model, "temperature": h.temperature, "template": TEMPLATE_VERSION}),
            None => Value::Null,
        })
    };
    let limit = ctx.args.limit;
    Ok(match stage {
        Stage::Catalog => json!({
            "catalog": match &cfg.catalog.path { Some(p) => file_digest(p)?, None => sha256_hex(SHIPPED_CATALOG.as_bytes()) },
            "max_depth": cfg.catalog.max_depth,
            "samples_per_method": cfg.catalog.samples_per_method,
            "seed": ctx.seed(),
        }),
        Stage::Generate => json!({"teacher": teacher()?, "limit": limit}),
        Stage::Filter => json!({"exec": exec()?, "limit": limit}),
        Stage::Mutate => json!({"count": cfg.mutate.count, "seed": ctx.seed(), "limit": limit}),
        Stage::Distill => json!({
            "teacher": teacher()?,
            "exec": exec()?,
            "strict": ctx.args.strict.unwrap_or(cfg.distill.strict),
            "limit": limit,
        }),
        Stage::Decontam => {
            let sets: Result<Vec<String>, PipelineError> = cfg.decontam.test_sets.iter().map(|p| file_digest(p)).collect();
            json!({"n": ctx.args.n.unwrap_or(cfg.decontam.n), "test_sets": sets?, "limit": limit})
        }
        Stage::Trace => json!({"exec": exec()?, "limit": limit}),
        Stage::Eval => json!({
            "exec": exec()?,
            "predictions": ctx.args.predictions.as_ref().map(|p| file_digest(p)).transpose()?,
            "use_gold": ctx.args.use_gold,
        }),
        Stage::GrpoDemo => json!({
            "grpo": cfg.grpo,
            "toy": cfg.toy,
            "iters": ctx.args.iters.unwrap_or(cfg.toy.iterations),
            "seed": ctx.seed(),
        }),
    })
}

/// Run one stage end to end: resolve paths, check prerequisites, skip if up
/// to date, otherwise compute and write output plus sidecar.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageOutcome, PipelineError> {
    let input = match stage.default_input() {
        None => None,
        Some((file, prerequisite)) => {
            let path = args.input.clone().unwrap_or_else(|| cfg.out_dir.join(file));
            if !path.exists() {
                return Err(PipelineError::Dependency {
                    stage,
                    missing: path,
                    prerequisite,
                });
            }
            Some(path)
        }
    };
    let output = args.output.clone().unwrap_or_else(|| cfg.out_dir.join(stage.default_output()));
    let ctx = Ctx {
        cfg,
        args,
        stage,
        input,
        output,
    };

    if let Some(path) = &args.emit_prompts {
        return emit_prompts(&ctx, path);
    }

    let input_digest = ctx.input.as_deref().map(file_digest).transpose()?;
    let settings = stage_settings(stage, cfg, &ctx)?;
    let config_digest = sha256_hex(
        to_canonical_string(&json!({"stage": stage, "version": stage.version(), "settings": settings})).as_bytes(),
    );
    let sidecar = stats_path(&ctx.output);
    if !args.force && ctx.output.exists() && sidecar.exists() {
        if let Ok(prev) = serde_json::from_slice::<StageStats>(&std::fs::read(&sidecar).unwrap_or_default()) {
            if prev.input_digest == input_digest
                && prev.config_digest == config_digest
                && prev.stage_version == stage.version()
                && file_digest(&ctx.output)? == prev.output_digest
            {
                return Ok(StageOutcome {
                    stage,
                    output: ctx.output,
                    skipped: true,
                    stats: prev,
                    notes: Vec::new(),
                });
            }
        }
    }

    let started = Instant::now();
    let produced = match stage {
        Stage::Catalog => run_catalog(&ctx)?,
        Stage::Generate => run_generate(&ctx)?,
        Stage::Filter => with_exec(&ctx, run_filter)?,
        Stage::Mutate => run_mutate(&ctx)?,
        Stage::Distill => with_exec(&ctx, run_distill)?,
        Stage::Decontam => run_decontam(&ctx)?,
        Stage::Trace => with_exec(&ctx, run_trace)?,
        Stage::Eval => with_exec(&ctx, run_eval)?,
        Stage::GrpoDemo => run_grpo_demo(&ctx)?,
    };
    let stats = StageStats {
        stage,
        stage_version: stage.version(),
        input_digest,
        config_digest,
        output_digest: file_digest(&ctx.output)?,
        counts: produced.counts.0,
        report: produced.report,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    let mut text = serde_json::to_string_pretty(&serde_json::to_value(&stats).expect("stats serialize")).expect("stats serialize");
    text.push('\n');
    write_file(&sidecar, text.as_bytes())?;
    Ok(StageOutcome {
        stage,
        output: ctx.output,
        skipped: false,
        stats,
        notes: produced.notes,
    })
}

fn with_exec(ctx: &Ctx, body: fn(&Ctx, &dyn ExecBackend) -> Result<Produced, PipelineError>) -> Result<Produced, PipelineError> {
    let handle = ExecHandle::from_config(&ctx.cfg.exec)?;
    let produced = body(ctx, handle.backend());
    // Keep whatever was recorded even when the stage failed part-way.
    handle.finish()?;
    produced
}

#[derive(Serialize)]
struct EmittedPrompt<'a> {
    digest: String,
    intent: &'a str,
    system_text: &'a str,
    user_text: &'a str,
}

fn prompts_for(ctx: &Ctx) -> Result<Vec<PromptSpec>, PipelineError> {
    match ctx.stage {
        Stage::Generate => {
            let mut rows: Vec<GenerationConstraints> = read_jsonl(ctx.input())?;
            if let Some(n) = ctx.args.limit {
                rows.truncate(n);
            }
            Ok(rows.iter().map(build_generation_prompt).collect())
        }
        Stage::Distill => {
            let cases = ctx.validated_cases(&mut Counts::new())?;
            Ok(cases
                .iter()
                .flat_map(|c| [build_cot_prompt(c, Direction::Forward), build_cot_prompt(c, Direction::Backward)])
                .collect())
        }
        other => Err(PipelineError::Config(format!("{other} sends no prompts"))),
    }
}

fn emit_prompts(ctx: &Ctx, path: &Path) -> Result<StageOutcome, PipelineError> {
    let prompts = prompts_for(ctx)?;
    let rows: Vec<EmittedPrompt> = prompts
        .iter()
        .map(|p| EmittedPrompt {
            digest: p.digest(),
            intent: p.intent.as_str(),
            system_text: &p.system_text,
            user_text: &p.user_text,
        })
        .collect();
    write_jsonl(path, &rows)?;
    let mut counts = Counts::new();
    counts.add("prompts", rows.len());
    Ok(StageOutcome {
        stage: ctx.stage,
        output: path.to_path_buf(),
        skipped: false,
        stats: StageStats {
            stage: ctx.stage,
            stage_version: ctx.stage.version(),
            input_digest: None,
            config_digest: String::new(),
            output_digest: file_digest(path)?,
            counts: counts.0,
            report: Value::Null,
            wall_ms: 0,
        },
        notes: vec![format!("wrote {} prompts; no teacher was called", rows.len())],
    })
}

fn run_catalog(ctx: &Ctx) -> Result<Produced, PipelineError> {
    let targets = match &ctx.cfg.catalog.path {
        Some(p) => load_catalog(p)?,
        None => shipped_targets(),
    };
    let k = ctx.cfg.catalog.samples_per_method;
    let seed = ctx.seed();
    let mut rows = Vec::with_capacity(targets.len() * k);
    for (i, m) in targets.iter().enumerate() {
        for j in 0..k {
            rows.push(sample_constraints(m, derive_seed(seed, (i * k + j) as u64), ctx.cfg.catalog.max_depth));
        }
    }
    write_jsonl(&ctx.output, &rows)?;
    let mut counts = Counts::new();
    counts.add("targets", targets.len());
    counts.add("constraints", rows.len());
    counts.add("use_nested_calls", rows.iter().filter(|c| c.use_nested_calls).count());
    counts.add("use_other_methods", rows.iter().filter(|c| c.use_other_methods).count());
    for c in &rows {
        counts.add(format!("control_depth_{}", c.control_flow.sequence.len()), 1);
    }
    Ok(Produced::counts(counts))
}

/// Record id for a generated case: the target method plus its sample seed.
pub fn generated_case_id(c: &GenerationConstraints) -> String {
    format!("{}.{}-{:016x}", c.base_method.type_name, c.base_method.method_name, c.seed)
}

fn run_generate(ctx: &Ctx) -> Result<Produced, PipelineError> {
    let mut rows: Vec<GenerationConstraints> = read_jsonl(ctx.input())?;
    if let Some(n) = ctx.args.limit {
        rows.truncate(n);
    }
    let (teacher, in_flight) = ctx.teacher()?;
    let prompts: Vec<PromptSpec> = rows.iter().map(build_generation_prompt).collect();
    let responses = complete_many(&prompts, teacher.as_ref(), in_flight);
    let mut counts = Counts::new();
    counts.add("constraints", rows.len());
    let mut cases = Vec::new();
    for ((c, prompt), resp) in rows.iter().zip(&prompts).zip(responses) {
        let resp = resp?;
        let parsed = match parse_teacher_output(&resp.raw_text) {
            Ok(p) => p,
            Err(_) => {
                counts.add("rejected_malformed_tags", 1);
                continue;
            }
        };
        let Some(block) = parsed.code_block else {
            counts.add("rejected_no_code", 1);
            continue;
        };
        let Some((code, call)) = split_entry_call(&block, "f") else {
            counts.add("rejected_no_entry_call", 1);
            continue;
        };
        cases.push(TestCaseRecord {
            id: generated_case_id(c),
            code,
            entry_point: call.func_name,
            input_literal: render_args(&call.args),
            expected_output_literal: None,
            constraints: Some(c.clone()),
            lineage: Lineage::Base,
            status: CaseStatus::Raw,
            provenance: Provenance {
                prompt_template: Some(prompt.template_id()),
                backend_id: Some(resp.backend_id),
                ..Provenance::stage("generate", GENERATE_STAGE_VERSION)
            },
        });
    }
    counts.add("generated", cases.len());
    write_jsonl(&ctx.output, &cases)?;
    Ok(Produced::counts(counts))
}

fn run_filter(ctx: &Ctx, exec: &dyn ExecBackend) -> Result<Produced, PipelineError> {
    let cases = ctx.read_cases()?;
    let out = validate_all(&cases, exec, ctx.jobs())?;
    let stats = FilterStats::tally(&out);
    let (kept, dropped): (Vec<_>, Vec<_>) = out.into_iter().partition(TestCaseRecord::is_validated);
    write_jsonl(&ctx.output, &kept)?;
    write_jsonl(&discarded_path(&ctx.output), &dropped)?;
    let mut counts = Counts::new();
    counts.add("input_records", cases.len());
    counts.add("validated", stats.validated);
    for (reason, n) in &stats.discarded {
        counts.add(format!("discarded_{}", reason.as_str()), *n);
    }
    Ok(Produced {
        counts,
        report: serde_json::to_value(&stats).expect("stats serialize"),
        notes: Vec::new(),
    })
}

fn run_mutate(ctx: &Ctx) -> Result<Produced, PipelineError> {
    let mut counts = Counts::new();
    let parents = ctx.validated_cases(&mut counts)?;
    let seed = ctx.seed();
    let mut out = Vec::new();
    for (i, parent) in parents.iter().enumerate() {
        out.push(parent.clone());
        match mutate_case(parent, derive_seed(seed, i as u64), ctx.cfg.mutate.count) {
            Ok(children) => {
                counts.add("mutants", children.len());
                out.extend(children);
            }
            Err(_) => counts.add("unparseable_input", 1),
        }
    }
    counts.add("parents", parents.len());
    write_jsonl(&ctx.output, &out)?;
    Ok(Produced::counts(counts))
}

fn run_distill(ctx: &Ctx, exec: &dyn ExecBackend) -> Result<Produced, PipelineError> {
    let mut counts = Counts::new();
    let cases = ctx.validated_cases(&mut counts)?;
    let strict = ctx.args.strict.unwrap_or(ctx.cfg.distill.strict);
    let (teacher, in_flight) = ctx.teacher()?;
    let jobs: Vec<(&TestCaseRecord, Direction)> = cases
        .iter()
        .flat_map(|c| [(c, Direction::Forward), (c, Direction::Backward)])
        .collect();
    let prompts: Vec<PromptSpec> = jobs.iter().map(|(c, d)| build_cot_prompt(c, *d)).collect();
    let responses: Vec<_> = complete_many(&prompts, teacher.as_ref(), in_flight)
        .into_iter()
        .collect::<Result<_, _>>()?;
    let work: Vec<_> = jobs.iter().zip(&prompts).zip(&responses).collect();
    let records = bounded_map(&work, ctx.jobs(), |(((case, dir), prompt), resp)| {
        rejection_sample_text(case, &resp.raw_text, *dir, exec, strict).map(|mut r| {
            r.provenance.prompt_template = Some(prompt.template_id());
            r.provenance.backend_id = Some(resp.backend_id.clone());
            r
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    for r in &records {
        match r.reject_reason {
            None => counts.add(format!("accepted_{}", r.direction.as_str()), 1),
            Some(reason) => counts.add(format!("rejected_{}", reason.as_str()), 1),
        }
    }
    write_jsonl(&ctx.output, &records)?;
    Ok(Produced::counts(counts))
}

#[derive(Deserialize)]
struct TestDoc {
    text: String,
}

fn run_decontam(ctx: &Ctx) -> Result<Produced, PipelineError> {
    let n = ctx.args.n.unwrap_or(ctx.cfg.decontam.n);
    if n == 0 {
        return Err(PipelineError::Config("--n must be positive".into()));
    }
    let mut docs = Vec::new();
    for p in &ctx.cfg.decontam.test_sets {
        let rows: Vec<TestDoc> = read_jsonl(p)?;
        docs.extend(rows.into_iter().map(|d| d.text));
    }
    let index = build_index(&docs, n);
    let mut counts = Counts::new();
    let cases = ctx.validated_cases(&mut counts)?;
    let (clean, dirty, report) = partition(cases, |c| c.code.as_str(), &index);
    write_jsonl(&ctx.output, &clean)?;
    write_jsonl(&discarded_path(&ctx.output), &dirty)?;
    counts.add("kept", report.kept);
    counts.add("discarded", report.discarded);
    Ok(Produced {
        counts,
        report: serde_json::to_value(&report).expect("report serialize"),
        notes: vec![format!(
            "{} of {} cases overlap the test sets on a {n}-gram ({:.2}%)",
            report.discarded,
            report.kept + report.discarded,
            100.0 * report.discard_rate
        )],
    })
}

/// Eval tasks derived from one validated case: forward and backward, plus
/// every trace question when the traced run succeeded.
pub fn tasks_for_case(case: &TestCaseRecord, traced: Option<&Execution>) -> Vec<TaskRecord> {
    let Some(expected) = case.expected_output_literal.clone() else {
        return Vec::new();
    };
    let base = |kind: TaskKind, shown: Shown, gold: String| TaskRecord {
        task_id: format!("{}/{}", case.id, kind.as_str()),
        kind,
        code: case.code.clone(),
        entry_point: case.entry_point.clone(),
        shown,
        gold,
    };
    let mut tasks = vec![
        base(
            TaskKind::Forward,
            Shown {
                input_literal: Some(case.input_literal.clone()),
                ..Shown::default()
            },
            expected.clone(),
        ),
        base(
            TaskKind::Backward,
            Shown {
                output_literal: Some(expected),
                ..Shown::default()
            },
            case.input_literal.clone(),
        ),
    ];
    if let Some(trace) = traced.and_then(|e| e.trace.as_ref()) {
        let mut seen: BTreeMap<TaskKind, usize> = BTreeMap::new();
        for q in ground_truth_questions(&case.code, trace) {
            let kind: TaskKind = q.kind.into();
            let k = seen.entry(kind).or_default();
            let id = format!("{}/{}/{}", case.id, kind.as_str(), k);
            *k += 1;
            tasks.push(TaskRecord::from_question(id, &case.code, &case.entry_point, &case.input_literal, &q));
        }
    }
    tasks
}

fn run_trace(ctx: &Ctx, exec: &dyn ExecBackend) -> Result<Produced, PipelineError> {
    let mut counts = Counts::new();
    let cases = ctx.validated_cases(&mut counts)?;
    let requests: Vec<ExecutionRequest> = cases
        .iter()
        .map(|c| ExecutionRequest::new(&c.code, &c.entry_point, &c.input_literal, ExecMode::Trace))
        .collect();
    let runs = run_many(exec, &requests, ctx.jobs());
    let mut tasks = Vec::new();
    for (case, run) in cases.iter().zip(runs) {
        let run = run?;
        if run.result.status == ExecStatus::InterpreterMissing {
            return Err(PipelineError::Exec(ExecError::Spawn(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("interpreter {:?} not found", ctx.cfg.exec.interpreter),
            ))));
        }
        if run.trace.is_none() {
            counts.add("trace_failed", 1);
        }
        tasks.extend(tasks_for_case(case, Some(&run)));
    }
    for t in &tasks {
        counts.add(format!("tasks_{}", t.kind.as_str()), 1);
    }
    write_jsonl(&ctx.output, &tasks)?;
    Ok(Produced::counts(counts))
}

fn run_eval(ctx: &Ctx, exec: &dyn ExecBackend) -> Result<Produced, PipelineError> {
    let tasks: Vec<TaskRecord> = read_jsonl(ctx.input())?;
    let predictions: BTreeMap<String, String> = if ctx.args.use_gold {
        tasks.iter().map(|t| (t.task_id.clone(), t.gold.clone())).collect()
    } else {
        let path = ctx
            .args
            .predictions
            .as_ref()
            .ok_or_else(|| PipelineError::Config("eval needs --predictions <path> or --use-gold".into()))?;
        read_jsonl::<Prediction>(path)?
            .into_iter()
            .map(|p| (p.task_id, p.prediction))
            .collect()
    };
    let scored = score_all(&tasks, &predictions, exec, ctx.jobs())?;
    let flat: Vec<(TaskKind, bool)> = scored.iter().map(|(k, o)| (*k, o.correct)).collect();
    let report = aggregate(&flat)?;
    let mut text = serde_json::to_string_pretty(&serde_json::to_value(&report).expect("report serialize")).expect("report serialize");
    text.push('\n');
    write_file(&ctx.output, text.as_bytes())?;
    let mut counts = Counts::new();
    counts.add("tasks", tasks.len());
    counts.add("correct", flat.iter().filter(|x| x.1).count());
    counts.add("invalid_predictions", scored.iter().filter(|(_, o)| o.reason.is_some()).count());
    Ok(Produced {
        counts,
        report: serde_json::to_value(&report).expect("report serialize"),
        notes: vec![report.table()],
    })
}

fn window_mean(curve: &[CurvePoint], f: impl Fn(&CurvePoint) -> f64) -> f64 {
    curve.iter().map(f).sum::<f64>() / curve.len().max(1) as f64
}

/// One line comparing the first and last tenth of a training curve.
pub fn trend_summary(curve: &[CurvePoint]) -> String {
    let w = (curve.len() / 10).max(1).min(curve.len());
    let (head, tail) = (&curve[..w], &curve[curve.len() - w..]);
    let r0 = window_mean(head, |c| c.mean_reward);
    let r1 = window_mean(tail, |c| c.mean_reward);
    let o0 = window_mean(head, |c| c.overlength_frac);
    let o1 = window_mean(tail, |c| c.overlength_frac);
    let trend = if r1 > r0 { "rising" } else if r1 < r0 { "falling" } else { "flat" };
    format!(
        "mean reward {r0:.3} -> {r1:.3} ({trend}); overlength fraction {o0:.3} -> {o1:.3}; {} iterations, windows of {w}",
        curve.len()
    )
}

fn run_grpo_demo(ctx: &Ctx) -> Result<Produced, PipelineError> {
    let toy = &ctx.cfg.toy;
    let env = ToyEnv::standard(toy.queries, ctx.cfg.grpo.max_response_len);
    let options = TrainOptions {
        iterations: ctx.args.iters.unwrap_or(toy.iterations),
        learning_rate: toy.learning_rate,
        inner_steps: toy.inner_steps,
        seed: ctx.seed(),
    };
    if options.iterations == 0 {
        return Err(PipelineError::Config("--iters must be positive".into()));
    }
    let (curve, policy) = toy_train(&env, &ctx.cfg.grpo, &options)?;
    write_file(&ctx.output, curve_csv(&curve).as_bytes())?;
    let (expected_reward, overlength) = policy.expectations(&env, &ctx.cfg.grpo);
    let mut counts = Counts::new();
    counts.add("iterations", curve.len());
    Ok(Produced {
        counts,
        report: json!({"final_expected_reward": expected_reward, "final_overlength_probability": overlength}),
        notes: vec![trend_summary(&curve)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(stats_path(Path::new("out/validated.jsonl")), Path::new("out/validated.stats.json"));
        assert_eq!(discarded_path(Path::new("validated.jsonl")), Path::new("validated.discarded.jsonl"));
    }

    #[test]
    fn dependency_error_names_prerequisite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let err = run_stage(Stage::Filter, &cfg, &StageArgs::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let msg = err.to_string();
        assert!(msg.contains("generated.jsonl") && msg.contains("`generate`"), "{msg}");
    }

    #[test]
    fn catalog_stage_is_deterministic_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let first = run_stage(Stage::Catalog, &cfg, &StageArgs::default()).unwrap();
        assert!(!first.skipped);
        let bytes = std::fs::read(&first.output).unwrap();
        assert_eq!(first.stats.counts["constraints"], 141);
        let again = run_stage(Stage::Catalog, &cfg, &StageArgs::default()).unwrap();
        assert!(again.skipped);
        let forced = run_stage(Stage::Catalog, &cfg, &StageArgs { force: true, ..StageArgs::default() }).unwrap();
        assert!(!forced.skipped);
        assert_eq!(std::fs::read(&forced.output).unwrap(), bytes);
        let reseeded = run_stage(Stage::Catalog, &cfg, &StageArgs { seed: Some(5), ..StageArgs::default() }).unwrap();
        assert!(!reseeded.skipped);
        assert_ne!(std::fs::read(&reseeded.output).unwrap(), bytes);
    }

    #[test]
    fn generate_without_teacher_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        run_stage(Stage::Catalog, &cfg, &StageArgs::default()).unwrap();
        let err = run_stage(Stage::Generate, &cfg, &StageArgs::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn grpo_demo_writes_curve() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let out = run_stage(Stage::GrpoDemo, &cfg, &StageArgs { iters: Some(40), ..StageArgs::default() }).unwrap();
        let csv = std::fs::read_to_string(&out.output).unwrap();
        assert_eq!(csv.lines().count(), 41);
        assert!(out.notes[0].contains("rising"), "{}", out.notes[0]);
    }
}
