//! Corpus curation: Rouge-L decontamination, visual-token budget filtering,
//! token-count statistics and the ordered curation pipeline.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::toolchain::{RenderOutcome, ToolError, Toolchain};
use crate::verilog::lex;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_TOKENS: u64 = 2048;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("max_tokens must be >= 1")]
    MaxTokens,
    #[error("no entry has a visual token count")]
    NoCounts,
    #[error("histogram needs at least one bin")]
    Bins,
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    SynthOk,
    RenderOk,
    Decontaminated,
    BudgetOk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub source_text: String,
    #[serde(default)]
    pub token_count_visual: Option<u64>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
}

impl CorpusEntry {
    pub fn new(id: impl Into<String>, source_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source_text: source_text.into(),
            token_count_visual: None,
            flags: BTreeSet::new(),
        }
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.token_count_visual = Some(count);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RemovalReason {
    Contaminated { test_id: String, score: f64 },
    OverBudget { count: u64, max_tokens: u64 },
    Uncounted,
    SynthFailed,
    Difficulty,
    RenderFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removed {
    pub id: String,
    #[serde(flatten)]
    pub reason: RemovalReason,
}

/// Result of a filter: every input lands in exactly one of the two lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub kept: Vec<CorpusEntry>,
    pub removed: Vec<Removed>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tokenization {
    /// Identifier, keyword, number, string, operator and directive tokens
    /// from the Verilog lexer; comments and whitespace dropped.
    #[default]
    Lexer,
    /// Whitespace-separated words of the raw text.
    Whitespace,
}

/// Tokens for similarity. Text the lexer rejects (for example an
/// unterminated comment) falls back to whitespace splitting.
pub fn tokenize(text: &str, mode: Tokenization) -> Vec<String> {
    let words = || text.split_whitespace().map(str::to_string).collect();
    match mode {
        Tokenization::Whitespace => words(),
        Tokenization::Lexer => match lex(text) {
            Ok(tokens) => tokens
                .iter()
                .filter(|t| !t.kind.is_trivia())
                .map(|t| t.text.to_string())
                .collect(),
            Err(_) => words(),
        },
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// LCS-based F1 (`2PR / (P + R)`), 0 when either side is empty.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(reference, candidate);
    if lcs == 0 {
        return 0.0;
    }
    // 2 * (l/r) * (l/c) / (l/r + l/c) simplifies to 2l / (r + c)
    2.0 * lcs as f64 / (reference.len() + candidate.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecontamOptions {
    pub threshold: f64,
    pub tokenization: Tokenization,
    pub execution: Execution,
}

impl Default for DecontamOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            tokenization: Tokenization::Lexer,
            execution: Execution::Parallel,
        }
    }
}

/// Highest similarity against the test set and the first test id reaching it.
fn best_match<'t>(tokens: &[String], tests: &'t [(String, Vec<String>)]) -> Option<(&'t str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (id, t) in tests {
        let score = rouge_l(t, tokens);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    best
}

/// Remove every corpus entry whose best Rouge-L against the test set is
/// strictly above the threshold. Output keeps input order.
pub fn decontaminate(
    corpus: &[CorpusEntry],
    testset: &[CorpusEntry],
    options: &DecontamOptions,
) -> Result<Partition, CorpusError> {
    if !(options.threshold > 0.0 && options.threshold <= 1.0) {
        return Err(CorpusError::Threshold(options.threshold));
    }
    let tests: Vec<(String, Vec<String>)> = testset
        .iter()
        .map(|t| (t.id.clone(), tokenize(&t.source_text, options.tokenization)))
        .collect();
    let verdicts = par::map(options.execution, corpus, |entry| {
        let tokens = tokenize(&entry.source_text, options.tokenization);
        best_match(&tokens, &tests)
            .filter(|&(_, score)| score > options.threshold)
            .map(|(id, score)| (id.to_string(), score))
    });
    let mut out = Partition::default();
    for (entry, verdict) in corpus.iter().zip(verdicts) {
        match verdict {
            Some((test_id, score)) => out.removed.push(Removed {
                id: entry.id.clone(),
                reason: RemovalReason::Contaminated { test_id, score },
            }),
            None => {
                let mut e = entry.clone();
                e.flags.insert(Flag::Decontaminated);
                out.kept.push(e);
            }
        }
    }
    Ok(out)
}

/// Keep entries whose visual token count is at most `max_tokens`. Entries
/// without a count are removed as `uncounted`.
pub fn token_budget_filter(entries: &[CorpusEntry], max_tokens: u64) -> Result<Partition, CorpusError> {
    if max_tokens == 0 {
        return Err(CorpusError::MaxTokens);
    }
    let mut out = Partition::default();
    for entry in entries {
        match entry.token_count_visual {
            None => out.removed.push(Removed {
                id: entry.id.clone(),
                reason: RemovalReason::Uncounted,
            }),
            Some(count) if count > max_tokens => out.removed.push(Removed {
                id: entry.id.clone(),
                reason: RemovalReason::OverBudget { count, max_tokens },
            }),
            Some(_) => {
                let mut e = entry.clone();
                e.flags.insert(Flag::BudgetOk);
                out.kept.push(e);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: u64,
    /// Fraction of counts `<= value`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean: f64,
    /// Lower median.
    pub median: u64,
    /// Nearest-rank 10th through 90th percentiles.
    pub deciles: Vec<u64>,
    pub histogram: Vec<HistogramBin>,
    pub cdf: Vec<CdfPoint>,
}

/// Nearest-rank percentile of an ascending slice: element `ceil(p n / 100)`.
fn nearest_rank(sorted: &[u64], p: usize) -> u64 {
    let rank = (p * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn corpus_stats(entries: &[CorpusEntry], bins: usize) -> Result<CorpusStats, CorpusError> {
    if bins == 0 {
        return Err(CorpusError::Bins);
    }
    let mut counts: Vec<u64> = entries.iter().filter_map(|e| e.token_count_visual).collect();
    if counts.is_empty() {
        return Err(CorpusError::NoCounts);
    }
    counts.sort_unstable();
    let n = counts.len();
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let median = counts[(n - 1) / 2];
    let deciles = (1..=9).map(|d| nearest_rank(&counts, 10 * d)).collect();

    let (lo, hi) = (counts[0] as f64, counts[n - 1] as f64);
    let width = (hi - lo) / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &c in &counts {
        let slot = if width > 0.0 {
            (((c as f64 - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        histogram[slot].count += 1;
    }

    let mut cdf = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if counts.get(i + 1) != Some(&c) {
            cdf.push(CdfPoint {
                value: c,
                fraction: (i + 1) as f64 / n as f64,
            });
        }
    }
    Ok(CorpusStats {
        count: n,
        mean,
        median,
        deciles,
        histogram,
        cdf,
    })
}

/// Supplies the visual token count of a rendered diagram.
pub trait TokenCounter: Sync {
    fn count(&self, entry: &CorpusEntry, diagram: &Path) -> Option<u64>;
}

/// Uses the count already recorded on the entry.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordedCount;

impl TokenCounter for RecordedCount {
    fn count(&self, entry: &CorpusEntry, _diagram: &Path) -> Option<u64> {
        entry.token_count_visual
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateOptions {
    pub decontam: DecontamOptions,
    pub max_tokens: u64,
    /// Ids that survived the external difficulty filter; `None` keeps all.
    pub difficulty_kept: Option<HashSet<String>>,
    /// Where rendered diagrams are written, one `<id>.svg` per entry.
    pub diagram_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub input: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurateReport {
    pub kept: Vec<CorpusEntry>,
    pub removed: Vec<Removed>,
    pub stages: Vec<StageCount>,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Run the stages in order: synthesis check, decontamination, difficulty,
/// rendering, visual-token budget.
pub fn curate(
    entries: &[CorpusEntry],
    testset: &[CorpusEntry],
    toolchain: &Toolchain,
    counter: &dyn TokenCounter,
    options: &CurateOptions,
) -> Result<CurateReport, CorpusError> {
    let exec = options.decontam.execution;
    let mut report = CurateReport::default();
    let mut stage = |name: &str, input: usize, kept: usize| {
        report.stages.push(StageCount {
            stage: name.into(),
            input,
            kept,
        });
    };

    fs::create_dir_all(&toolchain.config().workdir)?;
    let sources = tempfile::Builder::new()
        .prefix("sources-")
        .tempdir_in(&toolchain.config().workdir)?;
    let synth = par::map(exec, entries, |e| -> Result<bool, CorpusError> {
        let path = sources.path().join(format!("{}.v", file_stem(&e.id)));
        fs::write(&path, &e.source_text)?;
        Ok(toolchain.check_synthesizable(&path)?.pass)
    });
    let mut after_synth = Vec::new();
    let mut removed = Vec::new();
    for (e, ok) in entries.iter().zip(synth) {
        if ok? {
            let mut e = e.clone();
            e.flags.insert(Flag::SynthOk);
            after_synth.push(e);
        } else {
            removed.push(Removed {
                id: e.id.clone(),
                reason: RemovalReason::SynthFailed,
            });
        }
    }
    stage("synth", entries.len(), after_synth.len());

    let clean = decontaminate(&after_synth, testset, &options.decontam)?;
    stage("decontaminate", after_synth.len(), clean.kept.len());
    removed.extend(clean.removed);

    let mut hard = Vec::new();
    for e in clean.kept.iter() {
        let keep = options.difficulty_kept.as_ref().is_none_or(|ids| ids.contains(&e.id));
        if keep {
            hard.push(e.clone());
        } else {
            removed.push(Removed {
                id: e.id.clone(),
                reason: RemovalReason::Difficulty,
            });
        }
    }
    stage("difficulty", clean.kept.len(), hard.len());

    fs::create_dir_all(&options.diagram_dir)?;
    let renders = par::map(exec, &hard, |e| -> Result<Option<PathBuf>, CorpusError> {
        let src = sources.path().join(format!("{}.v", file_stem(&e.id)));
        let out = options.diagram_dir.join(format!("{}.svg", file_stem(&e.id)));
        Ok(match toolchain.render_diagram(&src, &out)? {
            RenderOutcome::Rendered { path, .. } => Some(path),
            RenderOutcome::Failed { .. } => None,
        })
    });
    let mut rendered = Vec::new();
    for (e, r) in hard.iter().zip(renders) {
        match r? {
            Some(path) => {
                let mut e = e.clone();
                e.flags.insert(Flag::RenderOk);
                e.token_count_visual = counter.count(&e, &path);
                rendered.push(e);
            }
            None => removed.push(Removed {
                id: e.id.clone(),
                reason: RemovalReason::RenderFailed,
            }),
        }
    }
    stage("render", hard.len(), rendered.len());

    let budget = token_budget_filter(&rendered, options.max_tokens)?;
    stage("budget", rendered.len(), budget.kept.len());
    removed.extend(budget.removed);

    report.kept = budget.kept;
    report.removed = removed;
    Ok(report)
}
