//! `mirage` command-line interface.
//!
//! Exit codes: 0 success, 2 judging errors, 3 configuration or input errors,
//! 1 anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mirage_core::anonymize::{anonymize_module_with, AnonymizeOptions};
use mirage_core::corpus::{self, CorpusEntry, DecontamOptions, Removed, Tokenization};
use mirage_core::dorpo::{self, DecisionConfig, TokenPair, ToyScorer};
use mirage_core::harness::{
    self, BenchmarkManifest, CompletionRecord, EmitTargets, EvalReport, FileProvider, HarnessError, MismatchCompletion,
    RunConfig,
};
use mirage_core::jsonl::{read_jsonl, write_jsonl, JsonlError};
use mirage_core::metrics::{Mode, PassKind};
use mirage_core::pairs::{self, AlignRecord, BuildOptions};
use mirage_core::stats::{holm_bonferroni, mcnemar};
use mirage_core::toolchain::{SuccessRule, ToolError, Toolchain, ToolchainConfig};

#[derive(Parser)]
#[command(name = "mirage", version, about = "Circuit-diagram-to-Verilog reliability toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rename every identifier of a module to placeholders.
    Anonymize(AnonymizeArgs),
    /// Statistical tests.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Decision-focused ORPO utilities.
    #[command(subcommand)]
    Dorpo(DorpoCommand),
    /// Build Match/Blank/Mismatch preference pairs.
    BuildPairs(BuildPairsArgs),
    /// Remove corpus entries too similar to a test set.
    Decontaminate(DecontaminateArgs),
    /// Remove corpus entries over the visual token budget.
    FilterTokens(FilterTokensArgs),
    /// Token-count statistics as histogram and CDF CSV.
    CorpusStats(CorpusStatsArgs),
    /// Judge completions and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// McNemar comparison of two evaluation reports.
    Compare(CompareArgs),
    /// Seeded mismatch rounds.
    MismatchRounds(MismatchArgs),
}

#[derive(Args)]
struct AnonymizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    strip_comments: bool,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// McNemar tests from rows of (label, b, c) with Holm correction.
    Mcnemar {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Subcommand)]
enum DorpoCommand {
    /// Run the property suite and print the phi/Gamma table.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy scorer and emit the loss trace as CSV.
    Toy(ToyArgs),
}

#[derive(Args)]
struct ToyArgs {
    /// JSON Lines of {"chosen": [token ids], "rejected": [token ids]}.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long = "K", default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildPairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image path recorded on Blank pairs; written if it does not exist.
    #[arg(long, default_value = "blank.ppm")]
    blank_image: PathBuf,
    #[arg(long, default_value_t = pairs::DEFAULT_BLANK_WIDTH)]
    blank_width: u32,
    #[arg(long, default_value_t = pairs::DEFAULT_BLANK_HEIGHT)]
    blank_height: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizeArg {
    Lexer,
    Whitespace,
}

#[derive(Args)]
struct DecontaminateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    testset: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = TokenizeArg::Lexer)]
    tokenize: TokenizeArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    removed: Option<PathBuf>,
}

#[derive(Args)]
struct FilterTokensArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_TOKENS)]
    max: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    removed: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusStatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    completions: PathBuf,
    /// TOML toolchain config; an optional [success_rule] table sets the
    /// testbench pass criterion.
    #[arg(long)]
    toolchain: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Prefix for CSV tables.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Pass@k cut-offs, e.g. `1,5`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Functional,
    Syntax,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = KindArg::Functional)]
    kind: KindArg,
    /// Write the comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MismatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON Lines of {round, sample_id, completion_index, text}. Without it
    /// only the diagram assignments are printed.
    #[arg(long)]
    completions: Option<PathBuf>,
    #[arg(long)]
    toolchain: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
enum Exit {
    #[error("{0:#}")]
    Config(anyhow::Error),
    #[error("{0:#}")]
    Judging(anyhow::Error),
}

fn config_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    Exit::Config(e.into()).into()
}

fn classify_harness(e: HarnessError) -> anyhow::Error {
    if e.is_config() {
        Exit::Config(e.into()).into()
    } else {
        Exit::Judging(e.into()).into()
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return match e {
            Exit::Config(_) => 3,
            Exit::Judging(_) => 2,
        };
    }
    if err.downcast_ref::<JsonlError>().is_some() {
        return 3;
    }
    match err.downcast_ref::<ToolError>() {
        Some(ToolError::Config(_) | ToolError::MissingTool(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Anonymize(a) => anonymize(a),
        Command::Stats(StatsCommand::Mcnemar { pairs, alpha }) => stats_mcnemar(&pairs, alpha),
        Command::Dorpo(DorpoCommand::Check { seed }) => dorpo_check(seed),
        Command::Dorpo(DorpoCommand::Toy(a)) => dorpo_toy(a),
        Command::BuildPairs(a) => build_pairs(a),
        Command::Decontaminate(a) => decontaminate(a),
        Command::FilterTokens(a) => filter_tokens(a),
        Command::CorpusStats(a) => corpus_stats(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::MismatchRounds(a) => mismatch_rounds(a),
    }
}

fn anonymize(a: AnonymizeArgs) -> Result<()> {
    let src = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let anon = anonymize_module_with(
        &src,
        AnonymizeOptions {
            strip_comments: a.strip_comments,
        },
    )
    .map_err(config_err)?;
    fs::write(&a.out, &anon.text)?;
    if let Some(map_path) = a.map {
        let json = anon.map.to_json().map_err(config_err)?;
        fs::write(map_path, serde_json::to_string_pretty(&json)? + "\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct PairRow {
    label: String,
    b: u64,
    c: u64,
}

fn stats_mcnemar(path: &Path, alpha: f64) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(config_err)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(config_err)?;
        match rec.deserialize::<PairRow>(None) {
            Ok(r) => rows.push(r),
            // a header line
            Err(_) if i == 0 => continue,
            Err(e) => return Err(config_err(anyhow::anyhow!("row {}: {e}", i + 1))),
        }
    }
    let tests: Vec<_> = rows.iter().map(|r| mcnemar(r.b, r.c)).collect();
    let ps: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let holm = holm_bonferroni(&ps, alpha).map_err(config_err)?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["label", "b", "c", "variant", "statistic", "raw_p", "adjusted_p", "reject"])?;
    for (i, (r, t)) in rows.iter().zip(&tests).enumerate() {
        w.write_record([
            r.label.clone(),
            r.b.to_string(),
            r.c.to_string(),
            t.variant.label().to_string(),
            t.statistic.map_or_else(String::new, |s| s.to_string()),
            t.p_value.to_string(),
            holm.adjusted[i].to_string(),
            holm.rejected[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dorpo_check(seed: u64) -> Result<()> {
    let report = dorpo::run_property_suite(seed);
    println!("property suite (seed {seed})");
    for c in &report.checks {
        println!("  [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    println!();
    println!("{:>6} {:>6} {:>4} {:>8} {:>10} {:>10} {:>10}", "T_c", "T_r", "K", "alpha", "phi(T_c)", "phi(T_r)", "Gamma");
    let rows = dorpo::rebalance_table(&[100, 300, 1000], &[20, 30, 50], &[4, 8, 16], &[1.0, 2.0, 5.0, 10.0]);
    for r in rows {
        println!(
            "{:>6} {:>6} {:>4} {:>8} {:>10.5} {:>10.5} {:>10.4}",
            r.code_len, r.refusal_len, r.window, r.alpha, r.phi_code, r.phi_refusal, r.gamma
        );
    }
    if !report.all_passed() {
        bail!("property suite failed");
    }
    Ok(())
}

fn dorpo_toy(a: ToyArgs) -> Result<()> {
    let pairs: Vec<TokenPair> = read_jsonl(&a.pairs)?;
    let cfg = DecisionConfig::new(a.window, a.alpha, a.beta).map_err(config_err)?;
    let all = || pairs.iter().flat_map(|p| p.chosen.iter().chain(&p.rejected));
    let vocab = all().max().map_or(1, |m| m + 1);
    let positions = pairs.iter().map(|p| p.chosen.len().max(p.rejected.len())).max().unwrap_or(1);
    let run = dorpo::toy_align_loop(&pairs, ToyScorer::zeros(positions, vocab), &cfg, a.steps, a.lr).map_err(config_err)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for s in run.trace.iter().chain(std::iter::once(&run.final_stats)) {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn build_pairs(a: BuildPairsArgs) -> Result<()> {
    let records: Vec<AlignRecord> = read_jsonl(&a.manifest)?;
    let opts = BuildOptions {
        seed: a.seed,
        blank_image: a.blank_image.to_string_lossy().into_owned(),
    };
    let out = pairs::build_pairs(&records, &opts).map_err(config_err)?;
    write_jsonl(&a.out, &out)?;
    if !a.blank_image.exists() {
        pairs::write_blank_image(&a.blank_image, a.blank_width, a.blank_height).map_err(config_err)?;
    }
    let plan = pairs::plan_ratio(records.len());
    eprintln!(
        "{} pairs: {} match, {} blank, {} mismatch",
        out.len(),
        plan.n_match,
        plan.n_blank,
        plan.n_mismatch
    );
    Ok(())
}

fn write_partition(kept: &[CorpusEntry], removed: &[Removed], out: &Path, removed_path: Option<&Path>) -> Result<()> {
    write_jsonl(out, kept)?;
    if let Some(p) = removed_path {
        write_jsonl(p, removed)?;
    }
    eprintln!("kept {}, removed {}", kept.len(), removed.len());
    Ok(())
}

fn decontaminate(a: DecontaminateArgs) -> Result<()> {
    let corpus: Vec<CorpusEntry> = read_jsonl(&a.corpus)?;
    let testset: Vec<CorpusEntry> = read_jsonl(&a.testset)?;
    let opts = DecontamOptions {
        threshold: a.threshold,
        tokenization: match a.tokenize {
            TokenizeArg::Lexer => Tokenization::Lexer,
            TokenizeArg::Whitespace => Tokenization::Whitespace,
        },
        ..DecontamOptions::default()
    };
    let part = corpus::decontaminate(&corpus, &testset, &opts).map_err(config_err)?;
    write_partition(&part.kept, &part.removed, &a.out, a.removed.as_deref())
}

fn filter_tokens(a: FilterTokensArgs) -> Result<()> {
    let entries: Vec<CorpusEntry> = read_jsonl(&a.input)?;
    let part = corpus::token_budget_filter(&entries, a.max).map_err(config_err)?;
    write_partition(&part.kept, &part.removed, &a.out, a.removed.as_deref())
}

#[derive(Serialize)]
struct StatsRow {
    series: &'static str,
    x: f64,
    x_end: f64,
    y: f64,
}

fn corpus_stats(a: CorpusStatsArgs) -> Result<()> {
    let entries: Vec<CorpusEntry> = read_jsonl(&a.input)?;
    let s = corpus::corpus_stats(&entries, a.bins).map_err(config_err)?;
    eprintln!("n = {}, mean = {:.1}, median = {}, deciles = {:?}", s.count, s.mean, s.median, s.deciles);
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for b in &s.histogram {
        w.serialize(StatsRow {
            series: "histogram",
            x: b.lo,
            x_end: b.hi,
            y: b.count as f64,
        })?;
    }
    for p in &s.cdf {
        w.serialize(StatsRow {
            series: "cdf",
            x: p.value as f64,
            x_end: p.value as f64,
            y: p.fraction,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RuleFile {
    success_rule: Option<SuccessRule>,
}

fn load_toolchain(path: &Path) -> Result<(Toolchain, SuccessRule)> {
    let cfg = ToolchainConfig::load(path).map_err(config_err)?;
    let text = fs::read_to_string(path)?;
    let rule = toml::from_str::<RuleFile>(&text)
        .map_err(config_err)?
        .success_rule
        .unwrap_or_default();
    rule.validate().map_err(config_err)?;
    Ok((Toolchain::with_processes(cfg).map_err(config_err)?, rule))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest).map_err(classify_harness)?;
    let completions: Vec<CompletionRecord> = read_jsonl(&a.completions)?;
    let (tc, rule) = load_toolchain(&a.toolchain)?;
    let cfg = RunConfig {
        k_list: a.k,
        jobs: a.jobs,
        rule,
        seed: a.seed,
        ..RunConfig::default()
    };
    let report = harness::run_protocol(&manifest, &completions, &tc, &cfg).map_err(classify_harness)?;
    harness::emit_report(
        &report,
        &EmitTargets {
            json: Some(a.out),
            markdown: a.markdown,
            csv: a.csv,
        },
    )
    .map_err(classify_harness)?;
    Ok(())
}

fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EvalReport::from_json(&text).map_err(classify_harness)
}

fn compare(a: CompareArgs) -> Result<()> {
    let (ra, rb) = (load_report(&a.a)?, load_report(&a.b)?);
    let kind = match a.kind {
        KindArg::Functional => PassKind::Functional,
        KindArg::Syntax => PassKind::Syntax,
    };
    let table = harness::compare_models_with(&ra, &rb, a.alpha, kind, Mode::Original).map_err(classify_harness)?;
    let mut shell = ra.clone();
    shell.pass_at_k.clear();
    shell.breakdown.clear();
    shell.refusal.clear();
    shell.cells.clear();
    shell.comparison = Some(table.clone());
    let md = harness::render_markdown(&shell);
    let section = md.split("## McNemar\n\n").nth(1).unwrap_or_default();
    print!("{section}");
    if let Some(p) = a.out {
        fs::write(p, serde_json::to_string_pretty(&table)? + "\n")?;
    }
    Ok(())
}

fn mismatch_rounds(a: MismatchArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest).map_err(classify_harness)?;
    let Some(completions) = a.completions else {
        let plans = harness::mismatch_assignments(&manifest, a.rounds, a.seed).map_err(classify_harness)?;
        for (r, plan) in plans.iter().enumerate() {
            for (i, &j) in plan.iter().enumerate() {
                println!(
                    "{}",
                    serde_json::json!({
                        "round": r + 1,
                        "sample_id": manifest.samples[i].id,
                        "diagram_id": manifest.samples[j].id,
                    })
                );
            }
        }
        return Ok(());
    };
    let Some(tc_path) = a.toolchain else {
        return Err(config_err(anyhow::anyhow!("--toolchain is required with --completions")));
    };
    let records: Vec<MismatchCompletion> = read_jsonl(&completions)?;
    let (tc, rule) = load_toolchain(&tc_path)?;
    let cfg = RunConfig {
        jobs: a.jobs,
        rule,
        seed: a.seed,
        ..RunConfig::default()
    };
    let report = harness::run_mismatch_rounds(&manifest, &FileProvider::new(records), &tc, &cfg, a.rounds, a.seed)
        .map_err(classify_harness)?;
    let md = harness::render_mismatch_markdown(&report);
    if let Some(p) = a.markdown {
        fs::write(p, &md)?;
    }
    match a.out {
        Some(p) => fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?,
        None => print!("{md}"),
    }
    Ok(())
}
