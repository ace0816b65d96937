//! Report emission as JSON, Markdown tables and CSV files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EvalReport, HarnessError, McNemarTable, MismatchReport};
use crate::metrics::{round2, Mode, Variant};

const DASH: &str = "--";

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| DASH.to_string(), |v| format!("{:.2}", round2(v)))
}

fn main_table(report: &EvalReport, out: &mut String) {
    out.push_str("| Mode |");
    for v in Variant::ALL {
        for m in ["Syn@1", "Syn@5", "Func@1", "Func@5"] {
            let _ = write!(out, " {} {m} |", v.label());
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(8));
    out.push('\n');
    let modes = Mode::ALL.into_iter().filter(|m| report.cells.iter().any(|c| c.mode == *m));
    for mode in modes {
        let _ = write!(out, "| {} |", mode.label());
        for variant in Variant::ALL {
            let at = |k| report.pass_at(variant, mode, k);
            let cells = [
                at(1).map(|r| r.syntax),
                at(5).map(|r| r.syntax),
                at(1).map(|r| r.functional),
                at(5).map(|r| r.functional),
            ];
            for c in cells {
                let _ = write!(out, " {} |", pct(c));
            }
        }
        out.push('\n');
    }
}

fn breakdown_table(report: &EvalReport, out: &mut String) {
    out.push_str("| Variant | Both | Original only | Mirage only | Neither |\n|---|---:|---:|---:|---:|\n");
    for b in &report.breakdown {
        let _ = write!(out, "| {} |", b.variant.label());
        for x in b.row.as_array() {
            let _ = write!(out, " {} |", pct(Some(100.0 * x)));
        }
        out.push('\n');
    }
}

fn refusal_table(report: &EvalReport, out: &mut String) {
    out.push_str("| Variant | FRR | RR | MRR |\n|---|---:|---:|---:|\n");
    for r in &report.refusal {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.variant.label(),
            pct(r.rates.frr),
            pct(r.rates.rr),
            pct(r.rates.mrr)
        );
    }
}

fn comparison_table(t: &McNemarTable, out: &mut String) {
    out.push_str("| Condition | b | c | Test | p | Holm p | Significant |\n|---|---:|---:|---|---:|---:|---|\n");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3e} | {:.3e} | {} |",
            r.condition.label(),
            r.b,
            r.c,
            r.test.variant.label(),
            r.test.p_value,
            r.adjusted_p,
            if r.rejected { "yes" } else { "no" }
        );
    }
}

/// Markdown: the 8-column Pass@k table, then breakdown, refusal rates and
/// (when present) the model comparison.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::from("## Pass@k (%)\n\n");
    main_table(report, &mut out);
    if !report.breakdown.is_empty() {
        out.push_str("\n## Original vs Mirage breakdown (%)\n\n");
        breakdown_table(report, &mut out);
    }
    if !report.refusal.is_empty() {
        out.push_str("\n## Refusal rates (%)\n\n");
        refusal_table(report, &mut out);
    }
    if let Some(t) = &report.comparison {
        out.push_str("\n## McNemar\n\n");
        comparison_table(t, &mut out);
    }
    out
}

pub fn render_mismatch_markdown(report: &MismatchReport) -> String {
    let mut out = String::from("| Round | Func. | MRR |\n|---|---:|---:|\n");
    for r in &report.rounds {
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            r.round,
            pct(Some(r.functional_pass_at_1)),
            pct(Some(r.mrr))
        );
    }
    let _ = writeln!(
        out,
        "| Avg. | {} | {} |",
        pct(Some(report.avg_functional_pass_at_1)),
        pct(Some(report.avg_mrr))
    );
    out
}

#[derive(Serialize)]
struct PassCsv {
    variant: Variant,
    mode: Mode,
    k: usize,
    syntax: f64,
    functional: f64,
}

#[derive(Serialize)]
struct BreakdownCsv {
    variant: Variant,
    samples: usize,
    both: f64,
    original_only: f64,
    mirage_only: f64,
    neither: f64,
}

#[derive(Serialize)]
struct RefusalCsv {
    variant: Variant,
    frr: Option<f64>,
    rr: Option<f64>,
    mrr: Option<f64>,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Write `<prefix>.pass_at_k.csv`, `<prefix>.breakdown.csv` and
/// `<prefix>.refusal.csv`, percentages rounded to two decimals.
pub fn write_csv(report: &EvalReport, prefix: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let paths = [".pass_at_k.csv", ".breakdown.csv", ".refusal.csv"].map(|s| with_suffix(prefix, s));
    write_rows(
        &paths[0],
        report.pass_at_k.iter().map(|r| PassCsv {
            variant: r.variant,
            mode: r.mode,
            k: r.k,
            syntax: round2(r.syntax),
            functional: round2(r.functional),
        }),
    )?;
    write_rows(
        &paths[1],
        report.breakdown.iter().map(|b| BreakdownCsv {
            variant: b.variant,
            samples: b.samples,
            both: round2(100.0 * b.row.both),
            original_only: round2(100.0 * b.row.original_only),
            mirage_only: round2(100.0 * b.row.mirage_only),
            neither: round2(100.0 * b.row.neither),
        }),
    )?;
    write_rows(
        &paths[2],
        report.refusal.iter().map(|r| RefusalCsv {
            variant: r.variant,
            frr: r.rates.frr.map(round2),
            rr: r.rates.rr.map(round2),
            mrr: r.rates.mrr.map(round2),
        }),
    )?;
    Ok(paths.to_vec())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmitTargets {
    pub json: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
    /// Prefix for the CSV files.
    pub csv: Option<PathBuf>,
}

/// Write every requested format; returns the files written.
pub fn emit_report(report: &EvalReport, targets: &EmitTargets) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    if let Some(p) = &targets.json {
        fs::write(p, report.to_json() + "\n")?;
        written.push(p.clone());
    }
    if let Some(p) = &targets.markdown {
        fs::write(p, render_markdown(report))?;
        written.push(p.clone());
    }
    if let Some(p) = &targets.csv {
        written.extend(write_csv(report, p)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixture::*;
    use crate::harness::{compare_models, run_protocol, RunConfig};

    fn sample_report(dir: &Path) -> EvalReport {
        let m = manifest(dir);
        let tc = stub_toolchain(&dir.join("work"));
        let mut recs = Vec::new();
        for variant in Variant::ALL {
            for mode in [Mode::Original, Mode::Mirage] {
                recs.push(record("and2", variant, mode, 0, &fenced(&body(0, variant))));
                let or2 = if mode == Mode::Mirage { refusal(SAMPLES[1].1) } else { fenced(&body(1, variant)) };
                recs.push(record("or2", variant, mode, 0, &or2));
                recs.push(record("inv", variant, mode, 0, &fenced("assign y = ;")));
            }
        }
        run_protocol(&m, &recs, &tc, &RunConfig::default()).unwrap()
    }

    #[test]
    fn markdown_golden() {
        let tmp = tempfile::tempdir().unwrap();
        let report = sample_report(tmp.path());
        let want = "\
## Pass@k (%)

| Mode | Normal Syn@1 | Normal Syn@5 | Normal Func@1 | Normal Func@5 | Anony Syn@1 | Anony Syn@5 | Anony Func@1 | Anony Func@5 |
|---|---:|---:|---:|---:|---:|---:|---:|---:|
| Original | 66.67 | -- | 66.67 | -- | 66.67 | -- | 66.67 | -- |
| Mirage | 33.33 | -- | 33.33 | -- | 33.33 | -- | 33.33 | -- |

## Original vs Mirage breakdown (%)

| Variant | Both | Original only | Mirage only | Neither |
|---|---:|---:|---:|---:|
| Normal | 33.33 | 33.33 | 0.00 | 33.33 |
| Anony | 33.33 | 33.33 | 0.00 | 33.33 |

## Refusal rates (%)

| Variant | FRR | RR | MRR |
|---|---:|---:|---:|
| Normal | 0.00 | 33.33 | -- |
| Anony | 0.00 | 33.33 | -- |
";
        assert_eq!(render_markdown(&report), want);
    }

    #[test]
    fn json_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut report = sample_report(tmp.path());
        report.comparison = Some(compare_models(&report, &report, 0.05).unwrap());
        let back = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_breakdown_sums_to_100() {
        let tmp = tempfile::tempdir().unwrap();
        let report = sample_report(tmp.path());
        let written = emit_report(
            &report,
            &EmitTargets {
                json: Some(tmp.path().join("r.json")),
                markdown: Some(tmp.path().join("r.md")),
                csv: Some(tmp.path().join("r")),
            },
        )
        .unwrap();
        assert_eq!(written.len(), 5);
        let mut rdr = csv::Reader::from_path(tmp.path().join("r.breakdown.csv")).unwrap();
        let headers = rdr.headers().unwrap().clone();
        assert_eq!(&headers, vec!["variant", "samples", "both", "original_only", "mirage_only", "neither"]);
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let sum: f64 = (2..6).map(|i| rec[i].parse::<f64>().unwrap()).sum();
            assert!((sum - 100.0).abs() <= 0.1, "{sum}");
        }
        let refusal = fs::read_to_string(tmp.path().join("r.refusal.csv")).unwrap();
        assert_eq!(refusal, "variant,frr,rr,mrr\nnormal,0.0,33.33,\nanony,0.0,33.33,\n");
        assert!(emit_report(
            &report,
            &EmitTargets {
                json: Some(tmp.path().join("missing/dir/r.json")),
                ..EmitTargets::default()
            }
        )
        .is_err());
    }

    #[test]
    fn mismatch_markdown_shape() {
        let rep = MismatchReport {
            seed: 1,
            rounds: vec![
                crate::harness::MismatchRound {
                    round: 1,
                    assignment: vec![],
                    functional_pass_at_1: 10.0,
                    mrr: 50.0,
                },
                crate::harness::MismatchRound {
                    round: 2,
                    assignment: vec![],
                    functional_pass_at_1: 20.0,
                    mrr: 70.0,
                },
            ],
            avg_functional_pass_at_1: 15.0,
            avg_mrr: 60.0,
        };
        assert_eq!(
            render_mismatch_markdown(&rep),
            "| Round | Func. | MRR |\n|---|---:|---:|\n| 1 | 10.00 | 50.00 |\n| 2 | 20.00 | 70.00 |\n| Avg. | 15.00 | 60.00 |\n"
        );
    }
}
