//! End-to-end runs of the `mirage` binary. Judging uses a real `sh`
//! toolchain: compilation fails on `= ;`, and simulation passes when the
//! candidate contains the statement after the testbench's `// expect` line.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const SAMPLES: [(&str, &str, &str); 3] = [
    ("and2", "module and2(input a, input b, output y);", "assign y = a & b;"),
    ("or2", "module or2(input a, input b, output y);", "assign y = a | b;"),
    ("inv", "module inv(input a, output y);", "assign y = ~a;"),
];

const TOOLCHAIN: &str = r#"
synth_cmd = ["true", "{in}"]
render_cmd = ["cp", "{in}", "{out}"]
compile_cmd = ["sh", "-c", '! grep -qF "= ;" "$1"', "compile", "{in}"]
sim_cmd = ["sh", "-c", '''want=$(sed -n '/\/\/ expect/{n;s/^ *//;p;}' "$2"); if grep -qF "$want" "$1"; then echo all vectors passed; else echo FAIL; fi''', "sim", "{in}", "{tb}"]
timeout_s = 10
workdir = "work"

[success_rule]
success_pattern = "passed"
"#;

fn mirage(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirage"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mirage")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn jsonl(values: &[Value]) -> String {
    values.iter().map(|v| v.to_string() + "\n").collect()
}

/// Anonymized header and renamed body of a sample, via the CLI itself.
fn anonymized(dir: &Path, header: &str, body: &str) -> (String, String) {
    let src = dir.join("tmp_src.v");
    fs::write(&src, format!("{header}\n{body}\nendmodule\n")).unwrap();
    ok(&mirage(dir, &["anonymize", "--in", "tmp_src.v", "--out", "tmp_anon.v"]));
    let text = fs::read_to_string(dir.join("tmp_anon.v")).unwrap();
    let mut lines = text.lines();
    (lines.next().unwrap().to_string(), lines.next().unwrap().to_string())
}

fn write_benchmark(dir: &Path) -> Vec<String> {
    let mut rows = Vec::new();
    let mut anon_bodies = Vec::new();
    for (id, header, body) in SAMPLES {
        let (anon_header, anon_body) = anonymized(dir, header, body);
        fs::write(dir.join(format!("{id}_tb.v")), format!("module tb;\n  {id} dut();\n  // expect\n  {body}\nendmodule\n")).unwrap();
        rows.push(json!({
            "id": id,
            "category": "combinational",
            "header": header,
            "body_ref": format!("{id}.v"),
            "testbench_ref": format!("{id}_tb.v"),
            "diagram_ref": format!("{id}.svg"),
            "description": format!("{id} gate"),
            "anon_header": anon_header,
            "anon_body_ref": format!("{id}_anon.v"),
            "anon_diagram_ref": format!("{id}_anon.svg"),
        }));
        anon_bodies.push(anon_body);
    }
    fs::write(dir.join("manifest.jsonl"), jsonl(&rows)).unwrap();
    fs::write(dir.join("tc.toml"), TOOLCHAIN).unwrap();
    anon_bodies
}

fn fenced(code: &str) -> String {
    format!("```verilog\n{code}\nendmodule\n```")
}

fn refusal(header: &str) -> String {
    format!(
        "Based on the provided circuit diagram, I cannot accurately determine the Verilog implementation.\n{header}\n"
    )
}

/// Model A: and2 right everywhere, or2 refuses in Mirage mode, inv broken.
/// Model B: everything broken.
fn write_completions(dir: &Path, anon_bodies: &[String]) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (variant, bodies) in [("normal", SAMPLES.map(|s| s.2.to_string()).to_vec()), ("anony", anon_bodies.to_vec())] {
        for mode in ["original", "mirage"] {
            for (i, (id, header, _)) in SAMPLES.iter().enumerate() {
                let text = match (i, mode) {
                    (1, "mirage") => refusal(header),
                    (2, _) => fenced("assign y = ;"),
                    _ => fenced(&bodies[i]),
                };
                let rec = |text: &str| {
                    json!({"sample_id": id, "variant": variant, "mode": mode, "completion_index": 0, "text": text})
                };
                a.push(rec(&text));
                b.push(rec(&fenced("assign y = ;")));
            }
        }
    }
    fs::write(dir.join("a.jsonl"), jsonl(&a)).unwrap();
    fs::write(dir.join("b.jsonl"), jsonl(&b)).unwrap();
}

#[test]
fn anonymize_writes_module_and_map() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("m.v"),
        "module and2(input a, input b, output y); // gate\nassign y = a & b;\nendmodule\n",
    )
    .unwrap();
    ok(&mirage(
        tmp.path(),
        &["anonymize", "--in", "m.v", "--out", "m.anon.v", "--map", "m.map.json", "--strip-comments"],
    ));
    assert_eq!(
        fs::read_to_string(tmp.path().join("m.anon.v")).unwrap(),
        "module module_name(input val_0, input val_1, output val_2); \nassign val_2 = val_0 & val_1;\nendmodule\n"
    );
    let map: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("m.map.json")).unwrap()).unwrap();
    assert_eq!(map["and2"], "module_name");
    assert_eq!(map["y"], "val_2");
}

#[test]
fn anonymize_rejects_non_verilog() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.v"), "this is not a module").unwrap();
    let out = mirage(tmp.path(), &["anonymize", "--in", "bad.v", "--out", "x.v"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn mcnemar_table() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.csv"), "label,b,c\nnormal,22,21\nanony,56,4\n").unwrap();
    let out = ok(&mirage(tmp.path(), &["stats", "mcnemar", "--pairs", "p.csv", "--alpha", "0.05"]));
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "normal");
    assert_eq!(rows[0][5].parse::<f64>().unwrap(), 1.0);
    assert_eq!(&rows[0][7], "false");
    assert!(rows[1][5].parse::<f64>().unwrap() < 1e-3);
    assert_eq!(&rows[1][7], "true");
}

#[test]
fn mcnemar_bad_row_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.csv"), "normal,22,21\nanony,lots,4\n").unwrap();
    let out = mirage(tmp.path(), &["stats", "mcnemar", "--pairs", "p.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dorpo_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&mirage(tmp.path(), &["dorpo", "check", "--seed", "3"]));
    assert!(!out.contains("FAIL"));
    assert!(out.contains("Gamma"));
}

#[test]
fn dorpo_toy_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = [json!({"chosen": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1], "rejected": [3, 3, 3, 3, 3, 3, 3, 3, 3, 3]})];
    fs::write(tmp.path().join("t.jsonl"), jsonl(&pairs)).unwrap();
    let out = ok(&mirage(
        tmp.path(),
        &["dorpo", "toy", "--pairs", "t.jsonl", "--steps", "20", "--alpha", "2", "--K", "8", "--beta", "0.1"],
    ));
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>()[..5], ["step", "total", "nll", "or_term", "gap"]);
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 > w[0].1));
}

#[test]
fn build_pairs_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let records: Vec<Value> = (0..10)
        .map(|i| {
            json!({
                "id": format!("m{i}"),
                "header": format!("module m{i}(input a, output y);"),
                "reference": format!("assign y = a ^ {i};"),
                "diagram": format!("img/m{i}.png"),
            })
        })
        .collect();
    fs::write(tmp.path().join("m.jsonl"), jsonl(&records)).unwrap();
    let run = |out: &str| {
        ok(&mirage(tmp.path(), &["build-pairs", "--manifest", "m.jsonl", "--out", out, "--seed", "7"]));
        fs::read(tmp.path().join(out)).unwrap()
    };
    let first = run("p1.jsonl");
    assert_eq!(first, run("p2.jsonl"));
    let lines: Vec<Value> = String::from_utf8(first)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let count = |c: &str| lines.iter().filter(|p| p["category"] == c).count();
    assert_eq!((count("match"), count("blank"), count("mismatch")), (10, 8, 7));
    let ppm = fs::read(tmp.path().join("blank.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n640 480\n255\n"));
}

#[test]
fn corpus_filters_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = [
        json!({"id": "copy", "source_text": "module t(input a, output y); assign y = ~a; endmodule", "token_count_visual": 100}),
        json!({"id": "fresh", "source_text": "module counter(input clk, output reg [3:0] q); always @(posedge clk) q <= q + 1; endmodule", "token_count_visual": 3000}),
        json!({"id": "small", "source_text": "parameter WIDTH = 8;", "token_count_visual": 2048}),
    ];
    let testset = [json!({"id": "t1", "source_text": "module t(input a, output y); assign y = ~a; endmodule"})];
    fs::write(tmp.path().join("c.jsonl"), jsonl(&corpus)).unwrap();
    fs::write(tmp.path().join("t.jsonl"), jsonl(&testset)).unwrap();

    ok(&mirage(
        tmp.path(),
        &[
            "decontaminate", "--corpus", "c.jsonl", "--testset", "t.jsonl", "--threshold", "0.5", "--out", "kept.jsonl",
            "--removed", "removed.jsonl",
        ],
    ));
    let removed = fs::read_to_string(tmp.path().join("removed.jsonl")).unwrap();
    let r: Value = serde_json::from_str(removed.lines().next().unwrap()).unwrap();
    assert_eq!((r["id"].as_str(), r["reason"].as_str(), r["test_id"].as_str()), (Some("copy"), Some("contaminated"), Some("t1")));
    assert_eq!(fs::read_to_string(tmp.path().join("kept.jsonl")).unwrap().lines().count(), 2);

    ok(&mirage(tmp.path(), &["filter-tokens", "--in", "kept.jsonl", "--max", "2048", "--out", "final.jsonl"]));
    let fin = fs::read_to_string(tmp.path().join("final.jsonl")).unwrap();
    assert_eq!(fin.lines().count(), 1);
    assert!(fin.contains("\"small\""));

    let csv_out = ok(&mirage(tmp.path(), &["corpus-stats", "--in", "c.jsonl", "--bins", "4"]));
    let mut rdr = csv::Reader::from_reader(csv_out.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let hist: f64 = rows.iter().filter(|r| &r[0] == "histogram").map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert_eq!(hist, 3.0);
    let last_cdf = rows.iter().rev().find(|r| &r[0] == "cdf").unwrap();
    assert_eq!(last_cdf[3].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn evaluate_then_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let anon_bodies = write_benchmark(dir);
    write_completions(dir, &anon_bodies);
    for model in ["a", "b"] {
        ok(&mirage(
            dir,
            &[
                "evaluate", "--manifest", "manifest.jsonl", "--completions", &format!("{model}.jsonl"), "--toolchain",
                "tc.toml", "--jobs", "2", "--out", &format!("{model}.json"), "--markdown", &format!("{model}.md"),
            ],
        ));
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("a.json")).unwrap()).unwrap();
    let cell = |variant: &str, mode: &str| {
        report["pass_at_k"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["variant"] == variant && r["mode"] == mode && r["k"] == 1)
            .cloned()
            .unwrap()
    };
    for variant in ["normal", "anony"] {
        let orig = cell(variant, "original");
        assert!((orig["functional"].as_f64().unwrap() - 200.0 / 3.0).abs() < 1e-9, "{orig}");
        assert!((cell(variant, "mirage")["syntax"].as_f64().unwrap() - 100.0 / 3.0).abs() < 1e-9);
    }
    let md = fs::read_to_string(dir.join("a.md")).unwrap();
    assert!(md.contains("| Original | 66.67 | -- | 66.67 | -- | 66.67 | -- | 66.67 | -- |"), "{md}");
    assert!(md.contains("| Normal | 0.00 | 33.33 | -- |"), "{md}");

    let table = ok(&mirage(dir, &["compare", "--a", "a.json", "--b", "b.json", "--out", "cmp.json"]));
    assert!(table.contains("| Normal | 2 | 0 | exact-mid-p |"), "{table}");
    let cmp: Value = serde_json::from_str(&fs::read_to_string(dir.join("cmp.json")).unwrap()).unwrap();
    assert_eq!(cmp["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let anon_bodies = write_benchmark(dir);
    write_completions(dir, &anon_bodies);
    fs::write(dir.join("bad.toml"), "compile_cmd = [\"cc\"]\n").unwrap();
    let args = |tc: &'static str| {
        vec![
            "evaluate", "--manifest", "manifest.jsonl", "--completions", "a.jsonl", "--toolchain", tc, "--out", "r.json",
        ]
    };
    assert_eq!(mirage(dir, &args("bad.toml")).status.code(), Some(3));
    assert_eq!(mirage(dir, &args("missing.toml")).status.code(), Some(3));
    fs::remove_file(dir.join("inv_tb.v")).unwrap();
    assert_eq!(mirage(dir, &args("tc.toml")).status.code(), Some(3));
    assert_eq!(mirage(dir, &["evaluate", "--manifest"]).status.code(), Some(3));
}

#[test]
fn mismatch_rounds_assignments_and_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_benchmark(dir);
    let plan = ok(&mirage(dir, &["mismatch-rounds", "--manifest", "manifest.jsonl", "--rounds", "5", "--seed", "1"]));
    let lines: Vec<Value> = plan.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 15);
    assert!(lines.iter().all(|l| l["sample_id"] != l["diagram_id"]));
    let again = ok(&mirage(dir, &["mismatch-rounds", "--manifest", "manifest.jsonl", "--rounds", "5", "--seed", "1"]));
    assert_eq!(plan, again);

    let mut recs = Vec::new();
    for round in 1..=5 {
        for (id, header, body) in SAMPLES {
            let text = if id == "inv" { refusal(header) } else { fenced(body) };
            recs.push(json!({"round": round, "sample_id": id, "completion_index": 0, "text": text}));
        }
    }
    fs::write(dir.join("mm.jsonl"), jsonl(&recs)).unwrap();
    let md = ok(&mirage(
        dir,
        &[
            "mismatch-rounds", "--manifest", "manifest.jsonl", "--rounds", "5", "--seed", "1", "--completions", "mm.jsonl",
            "--toolchain", "tc.toml",
        ],
    ));
    assert!(md.starts_with("| Round | Func. | MRR |"));
    assert!(md.contains("| Avg. | 66.67 | 33.33 |"), "{md}");
}
