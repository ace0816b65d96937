//! Benchmark protocol runner.
//!
//! Loads a benchmark manifest and a completion set, judges every completion
//! (refusal check, then compilation, then simulation), and folds the verdicts
//! into Pass@k tables, Original/Mirage outcome breakdowns and refusal rates.
//! Completions for the Mirage and Mismatch modes are produced elsewhere; here
//! they are just labels on the records.

mod compare;
mod mismatch;
mod report;

pub use compare::{compare_models, compare_models_with, ComparisonRow, McNemarTable};
pub use mismatch::{
    derangement, mismatch_assignments, run_mismatch_rounds, DiagramAssignment, FileProvider, MismatchCompletion,
    MismatchReport, MismatchRound, CompletionProvider,
};
pub use report::{emit_report, render_markdown, render_mismatch_markdown, write_csv, EmitTargets};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use crate::anonymize::{anonymize_header, apply_rename, original_index, verify_anonymized, AnonymizeError};
use crate::jsonl::{read_jsonl, JsonlError};
use crate::metrics::{
    aggregate_pass_at_k, detect_refusal, outcome_breakdown, refusal_rates, BreakdownRow, MetricsError, Mode, PassKind,
    ProblemOutcome, RefusalRates, RefusalRecord, RefusalTemplateConfig, Variant,
};
use crate::par::{self, Execution};
use crate::stats::StatsError;
use crate::toolchain::{SuccessRule, ToolError, Toolchain, ToolchainConfig};
use crate::verilog::parse_header;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("completion refers to unknown sample `{0}`")]
    UnknownSample(String),
    #[error("sample `{id}`: anonymized header fails verification ({violations} violations)")]
    AnonHeader { id: String, violations: usize },
    #[error("sample `{id}`: {source}")]
    Header { id: String, source: AnonymizeError },
    #[error("completions for ({sample_id}, {variant:?}, {mode:?}) are not indexed 0..n")]
    CompletionIndices { sample_id: String, variant: Variant, mode: Mode },
    #[error("completion count differs across cells: expected {expected}, ({sample_id}, {variant:?}, {mode:?}) has {found}")]
    NonUniformN {
        expected: usize,
        found: usize,
        sample_id: String,
        variant: Variant,
        mode: Mode,
    },
    #[error("no completions to evaluate")]
    NoCompletions,
    #[error("n = {n} completions per cell is fewer than k = {k}")]
    TooFewCompletions { n: usize, k: usize },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("reports cover different sample ids for {0:?}")]
    IdMismatch(Variant),
    #[error("mismatch rounds need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("no completions for round {round}, sample `{sample_id}`")]
    MissingRoundCompletions { round: usize, sample_id: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("judging failed: {0}")]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Whether the failure comes from inputs or configuration rather than
    /// from running the judge.
    pub fn is_config(&self) -> bool {
        !matches!(
            self,
            HarnessError::Tool(ToolError::Io(_) | ToolError::MissingInput(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCategory {
    Combinational,
    Sequential,
    Fsm,
    Math,
}

/// One benchmark problem. `*_ref` fields are paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub category: SampleCategory,
    pub header: String,
    pub body_ref: String,
    pub testbench_ref: String,
    pub diagram_ref: String,
    pub description: String,
    pub anon_header: String,
    pub anon_body_ref: String,
    pub anon_diagram_ref: String,
    #[serde(default)]
    pub token_count: Option<u64>,
    #[serde(default)]
    pub anon_token_count: Option<u64>,
    /// Testbench for the anonymized module. When absent it is derived from
    /// `testbench_ref` by applying the header rename map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anon_testbench_ref: Option<String>,
}

impl BenchmarkSample {
    pub fn header_for(&self, variant: Variant) -> &str {
        match variant {
            Variant::Normal => &self.header,
            Variant::Anony => &self.anon_header,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkManifest {
    pub samples: Vec<BenchmarkSample>,
    /// Directory that `*_ref` paths are relative to.
    pub base_dir: PathBuf,
}

impl BenchmarkManifest {
    pub fn new(samples: Vec<BenchmarkSample>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            samples,
            base_dir: base_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let samples = read_jsonl(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(samples, base))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Unique ids and verified anonymized headers.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(HarnessError::DuplicateSample(s.id.clone()));
            }
            let index = original_index(&s.header).map_err(|source| HarnessError::Header {
                id: s.id.clone(),
                source,
            })?;
            let violations = verify_anonymized(&s.anon_header, &index);
            if !violations.is_empty() {
                return Err(HarnessError::AnonHeader {
                    id: s.id.clone(),
                    violations: violations.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub sample_id: String,
    pub variant: Variant,
    pub mode: Mode,
    pub completion_index: usize,
    pub text: String,
}

type CellKey = (String, Variant, Mode);

fn cell_key(r: &CompletionRecord) -> CellKey {
    (r.sample_id.clone(), r.variant, r.mode)
}

/// Check completions against the manifest; returns the uniform per-cell `n`.
pub fn validate_completions(manifest: &BenchmarkManifest, records: &[CompletionRecord]) -> Result<usize, HarnessError> {
    let ids: HashSet<&str> = manifest.samples.iter().map(|s| s.id.as_str()).collect();
    let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for r in records {
        if !ids.contains(r.sample_id.as_str()) {
            return Err(HarnessError::UnknownSample(r.sample_id.clone()));
        }
        cells.entry(cell_key(r)).or_default().push(r.completion_index);
    }
    let mut n = None;
    for ((sample_id, variant, mode), mut idx) in cells {
        idx.sort_unstable();
        if idx.iter().enumerate().any(|(i, &x)| i != x) {
            return Err(HarnessError::CompletionIndices { sample_id, variant, mode });
        }
        match n {
            None => n = Some(idx.len()),
            Some(expected) if expected != idx.len() => {
                return Err(HarnessError::NonUniformN {
                    expected,
                    found: idx.len(),
                    sample_id,
                    variant,
                    mode,
                })
            }
            Some(_) => {}
        }
    }
    n.ok_or(HarnessError::NoCompletions)
}

/// Code inside the first ```verilog (or bare ```) fence, else the whole text.
pub fn extract_code(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub refused: bool,
    pub syntax: bool,
    pub functional: bool,
}

/// Judge one completion: a refusal fails both checks; otherwise compile, and
/// simulate only what compiled.
pub fn judge_completion(
    toolchain: &Toolchain,
    header: &str,
    text: &str,
    testbench: &Path,
    rule: &SuccessRule,
    refusal: &RefusalTemplateConfig,
) -> Result<Verdict, ToolError> {
    if detect_refusal(text, refusal) {
        return Ok(Verdict {
            refused: true,
            ..Verdict::default()
        });
    }
    let compiled = toolchain.compile_candidate(header, extract_code(text))?;
    if !compiled.pass {
        return Ok(Verdict::default());
    }
    let sim = toolchain.simulate_candidate(compiled.candidate.path(), testbench, rule)?;
    Ok(Verdict {
        refused: false,
        syntax: true,
        functional: sim.pass,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    /// Pass@k cut-offs; `None` means {1, 5} when n >= 5 and {1} otherwise.
    pub k_list: Option<Vec<usize>>,
    /// Judging worker threads; 0 uses the default pool.
    pub jobs: usize,
    pub execution: Execution,
    pub rule: SuccessRule,
    pub refusal: RefusalTemplateConfig,
    /// Recorded in the report metadata.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k_list: None,
            jobs: 0,
            execution: Execution::Parallel,
            rule: SuccessRule::default(),
            refusal: RefusalTemplateConfig::default(),
            seed: 0,
        }
    }
}

pub fn default_k_list(n: usize) -> Vec<usize> {
    if n >= 5 {
        vec![1, 5]
    } else {
        vec![1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub n: usize,
    pub k_list: Vec<usize>,
    pub records: usize,
    pub success_rule: SuccessRule,
    pub refusal_key: String,
    pub toolchain: Option<ToolchainConfig>,
}

/// Tallies for one (sample, variant, mode) cell plus the first completion's
/// verdict, which feeds the paired analyses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub sample_id: String,
    pub variant: Variant,
    pub mode: Mode,
    pub n: usize,
    pub c_syntax: usize,
    pub c_func: usize,
    pub refusals: usize,
    pub first_syntax: bool,
    pub first_functional: bool,
}

impl CellOutcome {
    pub fn outcome(&self) -> ProblemOutcome {
        ProblemOutcome {
            sample_id: self.sample_id.clone(),
            variant: self.variant,
            mode: self.mode,
            n: self.n,
            c_syntax: self.c_syntax,
            c_func: self.c_func,
            refusals: self.refusals,
        }
    }

    pub fn first_pass(&self, kind: PassKind) -> bool {
        match kind {
            PassKind::Syntax => self.first_syntax,
            PassKind::Functional => self.first_functional,
        }
    }
}

/// Pass@k in percent for one (variant, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKRow {
    pub variant: Variant,
    pub mode: Mode,
    pub k: usize,
    pub syntax: f64,
    pub functional: f64,
}

/// Paired first-completion functional outcomes, Original vs Mirage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEntry {
    pub variant: Variant,
    pub samples: usize,
    pub row: BreakdownRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalEntry {
    pub variant: Variant,
    pub rates: RefusalRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub pass_at_k: Vec<PassAtKRow>,
    pub breakdown: Vec<BreakdownEntry>,
    pub refusal: Vec<RefusalEntry>,
    pub cells: Vec<CellOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<McNemarTable>,
}

impl EvalReport {
    pub fn pass_at(&self, variant: Variant, mode: Mode, k: usize) -> Option<&PassAtKRow> {
        self.pass_at_k
            .iter()
            .find(|r| r.variant == variant && r.mode == mode && r.k == k)
    }

    pub fn refusal_for(&self, variant: Variant) -> Option<&RefusalRates> {
        self.refusal.iter().find(|r| r.variant == variant).map(|r| &r.rates)
    }

    pub fn breakdown_for(&self, variant: Variant) -> Option<&BreakdownRow> {
        self.breakdown.iter().find(|r| r.variant == variant).map(|r| &r.row)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Testbench paths per (sample, variant), deriving anonymized testbenches
/// into `scratch` where needed.
fn resolve_testbenches(
    manifest: &BenchmarkManifest,
    needed: &HashSet<(String, Variant)>,
    scratch: &Path,
) -> Result<BTreeMap<(String, Variant), PathBuf>, HarnessError> {
    let mut out = BTreeMap::new();
    let mut needed: Vec<_> = needed.iter().collect();
    needed.sort();
    for (id, variant) in needed {
        let sample = manifest.get(id).ok_or_else(|| HarnessError::UnknownSample(id.clone()))?;
        let normal = manifest.resolve(&sample.testbench_ref);
        let path = match (variant, &sample.anon_testbench_ref) {
            (Variant::Normal, _) => normal,
            (Variant::Anony, Some(rel)) => manifest.resolve(rel),
            (Variant::Anony, None) => {
                if !normal.is_file() {
                    return Err(HarnessError::MissingFile(normal));
                }
                let header = parse_header(&sample.header).map_err(|e| HarnessError::Header {
                    id: id.clone(),
                    source: e.into(),
                })?;
                let map = anonymize_header(&header)
                    .map_err(|source| HarnessError::Header { id: id.clone(), source })?
                    .map;
                let text = apply_rename(&fs::read_to_string(&normal)?, &map)
                    .map_err(|source| HarnessError::Header { id: id.clone(), source })?;
                let derived = scratch.join(format!("tb_{}.v", out.len()));
                fs::write(&derived, text)?;
                derived
            }
        };
        if !path.is_file() {
            return Err(HarnessError::MissingFile(path));
        }
        out.insert((id.clone(), *variant), path);
    }
    Ok(out)
}

/// Judge all records and aggregate them into a report.
pub fn run_protocol(
    manifest: &BenchmarkManifest,
    completions: &[CompletionRecord],
    toolchain: &Toolchain,
    config: &RunConfig,
) -> Result<EvalReport, HarnessError> {
    manifest.validate()?;
    let n = validate_completions(manifest, completions)?;
    let k_list = config.k_list.clone().unwrap_or_else(|| default_k_list(n));
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(HarnessError::Config("k_list must hold positive cut-offs".into()));
    }
    if let Some(&k) = k_list.iter().max().filter(|&&k| k > n) {
        return Err(HarnessError::TooFewCompletions { n, k });
    }
    config.rule.validate().map_err(|e| HarnessError::Config(e.to_string()))?;

    fs::create_dir_all(&toolchain.config().workdir)?;
    let scratch: TempDir = tempfile::Builder::new()
        .prefix("tb-")
        .tempdir_in(&toolchain.config().workdir)?;
    let needed: HashSet<(String, Variant)> = completions.iter().map(|r| (r.sample_id.clone(), r.variant)).collect();
    let testbenches = resolve_testbenches(manifest, &needed, scratch.path())?;

    let mut records: Vec<&CompletionRecord> = completions.iter().collect();
    records.sort_by(|a, b| cell_key(a).cmp(&cell_key(b)).then(a.completion_index.cmp(&b.completion_index)));

    let verdicts = par::with_jobs(config.jobs, || {
        par::map(config.execution, &records, |r| {
            let sample = manifest.get(&r.sample_id).expect("validated sample id");
            let tb = &testbenches[&(r.sample_id.clone(), r.variant)];
            judge_completion(
                toolchain,
                sample.header_for(r.variant),
                &r.text,
                tb,
                &config.rule,
                &config.refusal,
            )
        })
    });

    let mut cells: BTreeMap<CellKey, CellOutcome> = BTreeMap::new();
    let mut refusal_records: BTreeMap<Variant, Vec<RefusalRecord>> = BTreeMap::new();
    for (r, verdict) in records.iter().zip(verdicts) {
        let v = verdict?;
        let cell = cells.entry(cell_key(r)).or_insert_with(|| CellOutcome {
            sample_id: r.sample_id.clone(),
            variant: r.variant,
            mode: r.mode,
            n: 0,
            c_syntax: 0,
            c_func: 0,
            refusals: 0,
            first_syntax: false,
            first_functional: false,
        });
        cell.n += 1;
        cell.c_syntax += usize::from(v.syntax);
        cell.c_func += usize::from(v.functional);
        cell.refusals += usize::from(v.refused);
        if r.completion_index == 0 {
            cell.first_syntax = v.syntax;
            cell.first_functional = v.functional;
        }
        refusal_records.entry(r.variant).or_default().push(RefusalRecord {
            mode: r.mode,
            refused: v.refused,
            valid_input: r.mode == Mode::Original,
        });
    }

    let mut groups: BTreeMap<(Variant, Mode), Vec<ProblemOutcome>> = BTreeMap::new();
    for cell in cells.values() {
        let outcome = cell.outcome();
        outcome.validate()?;
        groups.entry((cell.variant, cell.mode)).or_default().push(outcome);
    }
    let mut pass_at_k = Vec::new();
    for ((variant, mode), outcomes) in &groups {
        for &k in &k_list {
            pass_at_k.push(PassAtKRow {
                variant: *variant,
                mode: *mode,
                k,
                syntax: aggregate_pass_at_k(outcomes, k, PassKind::Syntax)?,
                functional: aggregate_pass_at_k(outcomes, k, PassKind::Functional)?,
            });
        }
    }

    let mut breakdown = Vec::new();
    for variant in Variant::ALL {
        let paired: Vec<(bool, bool)> = cells
            .values()
            .filter(|c| c.variant == variant && c.mode == Mode::Original)
            .filter_map(|orig| {
                cells
                    .get(&(orig.sample_id.clone(), variant, Mode::Mirage))
                    .map(|m| (orig.first_functional, m.first_functional))
            })
            .collect();
        if !paired.is_empty() {
            breakdown.push(BreakdownEntry {
                variant,
                samples: paired.len(),
                row: outcome_breakdown(&paired)?,
            });
        }
    }

    let refusal = refusal_records
        .into_iter()
        .map(|(variant, recs)| RefusalEntry {
            variant,
            rates: refusal_rates(&recs),
        })
        .collect();

    Ok(EvalReport {
        meta: RunMeta {
            seed: config.seed,
            n,
            k_list,
            records: completions.len(),
            success_rule: config.rule.clone(),
            refusal_key: config.refusal.key_phrase.clone(),
            toolchain: Some(toolchain.config().clone()),
        },
        pass_at_k,
        breakdown,
        refusal,
        cells: cells.into_values().collect(),
        comparison: None,
    })
}

#[cfg(test)]
pub(crate) mod fixture {
    //! A three-sample benchmark judged by a scripted toolchain: compilation
    //! fails on `assign y = ;`, and simulation passes when the candidate
    //! contains the statement on the line after the testbench's `// expect`
    //! marker.

    use std::sync::Arc;

    use super::*;
    use crate::toolchain::{CommandSpec, FnRunner, StubReply};

    pub const SAMPLES: [(&str, &str, &str); 3] = [
        (
            "and2",
            "module and2(input a, input b, output y);",
            "assign y = a & b;",
        ),
        (
            "or2",
            "module or2(input a, input b, output y);",
            "assign y = a | b;",
        ),
        (
            "inv",
            "module inv(input a, output y);",
            "assign y = ~a;",
        ),
    ];

    pub fn stub_toolchain(workdir: &Path) -> Toolchain {
        let cfg = ToolchainConfig {
            synth_cmd: CommandSpec::single(["synth", "{in}"]),
            render_cmd: CommandSpec::single(["render", "{in}", "{out}"]),
            compile_cmd: CommandSpec::single(["compile", "{in}"]),
            sim_cmd: CommandSpec::single(["sim", "{in}", "{tb}"]),
            timeout_s: 5.0,
            workdir: workdir.to_path_buf(),
        };
        let runner = FnRunner(|argv: &[String], _: &Path| {
            let cand = fs::read_to_string(&argv[1]).unwrap_or_default();
            match argv[0].as_str() {
                "compile" => StubReply::exit(if cand.contains("= ;") { 1 } else { 0 }),
                "sim" => {
                    let tb = fs::read_to_string(&argv[2]).unwrap_or_default();
                    let mut lines = tb.lines().map(str::trim);
                    let want = lines
                        .by_ref()
                        .find(|l| *l == "// expect")
                        .and_then(|_| lines.next())
                        .unwrap_or("<none>");
                    if cand.contains(want) {
                        StubReply::exit(0).with_stdout("all vectors passed")
                    } else {
                        StubReply::exit(0).with_stdout("FAIL: output mismatch")
                    }
                }
                _ => StubReply::exit(0),
            }
        });
        Toolchain::new(cfg, Arc::new(runner)).unwrap()
    }

    /// Manifest on disk; anonymized testbenches are left to derivation.
    pub fn manifest(dir: &Path) -> BenchmarkManifest {
        let mut samples = Vec::new();
        for (id, header, body) in SAMPLES {
            let h = parse_header(header).unwrap();
            let anon = anonymize_header(&h).unwrap();
            let tb = format!("module tb;\n  {id} dut();\n  // expect\n  {body}\nendmodule\n");
            fs::write(dir.join(format!("{id}_tb.v")), tb).unwrap();
            samples.push(BenchmarkSample {
                id: id.into(),
                category: SampleCategory::Combinational,
                header: header.into(),
                body_ref: format!("{id}.v"),
                testbench_ref: format!("{id}_tb.v"),
                diagram_ref: format!("{id}.svg"),
                description: format!("{id} gate"),
                anon_header: anon.text,
                anon_body_ref: format!("{id}_anon.v"),
                anon_diagram_ref: format!("{id}_anon.svg"),
                token_count: Some(100),
                anon_token_count: Some(100),
                anon_testbench_ref: None,
            });
        }
        BenchmarkManifest::new(samples, dir)
    }

    pub fn record(id: &str, variant: Variant, mode: Mode, index: usize, text: &str) -> CompletionRecord {
        CompletionRecord {
            sample_id: id.into(),
            variant,
            mode,
            completion_index: index,
            text: text.into(),
        }
    }

    /// Reference statement of sample `i`, renamed for the Anony variant.
    pub fn body(i: usize, variant: Variant) -> String {
        let (_, header, body) = SAMPLES[i];
        match variant {
            Variant::Normal => body.to_string(),
            Variant::Anony => {
                let map = anonymize_header(&parse_header(header).unwrap()).unwrap().map;
                apply_rename(body, &map).unwrap()
            }
        }
    }

    pub fn fenced(code: &str) -> String {
        format!("```verilog\n{code}\nendmodule\n```")
    }

    pub fn refusal(header: &str) -> String {
        crate::pairs::render_refusal(&parse_header(header).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::fixture::*;
    use super::*;

    /// and2 always correct, or2 always refuses, inv always broken.
    fn scripted(modes: &[Mode], variant: Variant, n: usize) -> Vec<CompletionRecord> {
        let mut out = Vec::new();
        for &mode in modes {
            for i in 0..n {
                out.push(record("and2", variant, mode, i, &fenced(&body(0, variant))));
                out.push(record("or2", variant, mode, i, &refusal(SAMPLES[1].1)));
                out.push(record("inv", variant, mode, i, &fenced("assign y = ;")));
            }
        }
        out
    }

    #[test]
    fn hand_tallied_three_sample_run() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let recs = scripted(&[Mode::Original], Variant::Normal, 1);
        let report = run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap();
        let row = report.pass_at(Variant::Normal, Mode::Original, 1).unwrap();
        assert!((row.functional - 100.0 / 3.0).abs() < 1e-12);
        assert!((row.syntax - 100.0 / 3.0).abs() < 1e-12);
        let rates = report.refusal_for(Variant::Normal).unwrap();
        assert!((rates.frr.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(rates.rr, None);
        assert_eq!(report.meta.k_list, vec![1]);
        assert!(report.breakdown.is_empty());
    }

    #[test]
    fn all_refusals() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let recs: Vec<_> = SAMPLES
            .iter()
            .flat_map(|(id, header, _)| (0..5).map(move |i| record(id, Variant::Normal, Mode::Original, i, &refusal(header))))
            .collect();
        let report = run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap();
        assert_eq!(report.meta.k_list, vec![1, 5]);
        assert!(report.pass_at_k.iter().all(|r| r.syntax == 0.0 && r.functional == 0.0));
        assert_eq!(report.refusal_for(Variant::Normal).unwrap().frr, Some(100.0));
    }

    #[test]
    fn modes_judged_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let mut recs = scripted(&[Mode::Original, Mode::Mirage], Variant::Normal, 1);
        recs.extend(scripted(&[Mode::Original, Mode::Mirage], Variant::Anony, 1));
        let report = run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap();
        for v in Variant::ALL {
            let o = report.pass_at(v, Mode::Original, 1).unwrap();
            let g = report.pass_at(v, Mode::Mirage, 1).unwrap();
            assert_eq!((o.syntax, o.functional), (g.syntax, g.functional));
            let b = report.breakdown_for(v).unwrap();
            assert_eq!(b.original_only + b.mirage_only, 0.0);
            assert!((b.both - 1.0 / 3.0).abs() < 1e-12);
            let rates = report.refusal_for(v).unwrap();
            assert_eq!(rates.frr, rates.rr);
        }
        for c in &report.cells {
            assert!(c.c_func <= c.c_syntax);
        }
        let again = run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let recs = scripted(&[Mode::Original, Mode::Mirage, Mode::Mismatch], Variant::Anony, 5);
        let par = run_protocol(&m, &recs, &tc, &RunConfig { jobs: 4, ..RunConfig::default() }).unwrap();
        let seq = run_protocol(
            &m,
            &recs,
            &tc,
            &RunConfig {
                execution: Execution::Sequential,
                ..RunConfig::default()
            },
        )
        .unwrap();
        assert_eq!(par, seq);
        assert_eq!(fs::read_dir(tmp.path().join("work")).unwrap().count(), 0);
    }

    #[test]
    fn anonymized_testbench_is_derived() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        // the anonymized reference uses placeholder names
        let recs = vec![record("and2", Variant::Anony, Mode::Original, 0, &fenced("assign val_2 = val_0 & val_1;"))];
        let report = run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap();
        assert_eq!(report.pass_at(Variant::Anony, Mode::Original, 1).unwrap().functional, 100.0);
    }

    #[test]
    fn input_validation() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let cfg = RunConfig::default();
        let bad_id = vec![record("nand", Variant::Normal, Mode::Original, 0, "x")];
        assert!(matches!(run_protocol(&m, &bad_id, &tc, &cfg), Err(HarnessError::UnknownSample(_))));
        let gap = vec![record("and2", Variant::Normal, Mode::Original, 1, "x")];
        assert!(matches!(run_protocol(&m, &gap, &tc, &cfg), Err(HarnessError::CompletionIndices { .. })));
        let uneven = vec![
            record("and2", Variant::Normal, Mode::Original, 0, "x"),
            record("inv", Variant::Normal, Mode::Original, 0, "x"),
            record("inv", Variant::Normal, Mode::Original, 1, "x"),
        ];
        assert!(matches!(run_protocol(&m, &uneven, &tc, &cfg), Err(HarnessError::NonUniformN { .. })));
        let one = vec![record("and2", Variant::Normal, Mode::Original, 0, "x")];
        let k5 = RunConfig {
            k_list: Some(vec![1, 5]),
            ..RunConfig::default()
        };
        assert!(matches!(run_protocol(&m, &one, &tc, &k5), Err(HarnessError::TooFewCompletions { n: 1, k: 5 })));
        assert!(matches!(run_protocol(&m, &[], &tc, &cfg), Err(HarnessError::NoCompletions)));

        fs::remove_file(tmp.path().join("and2_tb.v")).unwrap();
        assert!(matches!(run_protocol(&m, &one, &tc, &cfg), Err(HarnessError::MissingFile(_))));

        let mut dup = m.clone();
        dup.samples.push(dup.samples[0].clone());
        assert!(matches!(dup.validate(), Err(HarnessError::DuplicateSample(_))));
        let mut leaky = m.clone();
        leaky.samples[0].anon_header = "module module_name(input a, input val_1, output val_2);".into();
        assert!(matches!(leaky.validate(), Err(HarnessError::AnonHeader { .. })));
    }

    #[test]
    fn code_extraction() {
        assert_eq!(extract_code("```verilog\nassign y = a;\n```\nthanks"), "assign y = a;\n");
        assert_eq!(extract_code("plain text"), "plain text");
        assert_eq!(extract_code("```\nx\n"), "x\n");
    }
}
