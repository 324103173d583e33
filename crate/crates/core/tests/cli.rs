use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn exprkit(args: &[&str], stdin: &str) -> Output {
    exprkit_env(args, stdin, None)
}

fn exprkit_env(args: &[&str], stdin: &str, config_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_exprkit"));
    cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    cmd.env_remove("EXPRKIT_CONFIG_DIR");
    if let Some(d) = config_dir {
        cmd.env("EXPRKIT_CONFIG_DIR", d);
    }
    let mut child = cmd.spawn().unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
    let s = stdout(o);
    assert!(s.ends_with('\n'));
    serde_json::from_str(&s).unwrap()
}

#[test]
fn fit_reports_exact_scale() {
    let v = json(&exprkit(&["fit", "--h", "1024", "--w", "1024", "--patch", "16", "--budget", "256"], ""));
    assert_eq!(v["s_star"], "1/4");
    assert_eq!(v["target"], serde_json::json!([256, 256]));
    assert_eq!(v["grid"], serde_json::json!([16, 16]));
    assert_eq!(v["resized"], true);
}

#[test]
fn fit_rejects_zero_budget_as_domain_error() {
    assert_eq!(exprkit(&["fit", "--h", "10", "--w", "10", "--patch", "16", "--budget", "0"], "").status.code(), Some(2));
}

#[test]
fn parse_and_render_round_trip() {
    let tree = exprkit(&["parse"], r"\frac{a}{b}");
    let v = json(&tree);
    assert_eq!(v["type"], "frac", "{v}");
    let back = exprkit(&["render"], &stdout(&tree));
    assert_eq!(stdout(&back), "\\frac{a}{b}\n");
}

#[test]
fn strict_parse_error_is_serialized_on_stderr() {
    let o = exprkit(&["--mode", "strict", "parse", "-e", "{x"], "");
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
    let err = stderr(&o);
    let payload = err.trim().strip_prefix("error: ").unwrap();
    let v: Value = serde_json::from_str(payload).unwrap();
    assert_eq!(v["code"], "unbalanced_brace");
}

#[test]
fn exit_codes_under_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let missing = missing.to_str().unwrap();
    assert_eq!(exprkit(&["parse", "--in", missing], "").status.code(), Some(3));
    assert_eq!(exprkit(&["curate", "stats", "--in", missing], "").status.code(), Some(3));
    assert_eq!(exprkit(&["score", "--pred", missing, "--ref", missing], "").status.code(), Some(3));
    assert_eq!(exprkit(&["tok", "encode", "--model", missing], "x").status.code(), Some(3));

    assert_eq!(exprkit(&["fit", "--h", "x"], "").status.code(), Some(4));
    assert_eq!(exprkit(&["frobnicate"], "").status.code(), Some(4));
    assert_eq!(exprkit(&["--mode", "sloppy", "parse"], "").status.code(), Some(4));
    assert_eq!(exprkit(&[], "").status.code(), Some(4));
    assert_eq!(exprkit(&["--help"], "").status.code(), Some(0));

    let bad = "{\"id\":\"a\",\"latex\":\"x+y\"}\nnot json\n";
    for sub in ["clean", "filter", "stats", "tier", "run"] {
        let o = exprkit(&["curate", sub], bad);
        assert_eq!(o.status.code(), Some(2), "{sub}: {}", stderr(&o));
        assert!(stderr(&o).contains("line 2"), "{sub}: {}", stderr(&o));
    }
    let model = dir.path().join("bad.json");
    std::fs::write(&model, "{}").unwrap();
    assert_eq!(exprkit(&["tok", "encode", "--model", model.to_str().unwrap()], "x").status.code(), Some(2));
}

#[test]
fn curate_stats_buckets_three_samples() {
    let x = |n: usize| vec!["x"; n].join(" ");
    let m = format!(
        "{}\n{}\n{}\n",
        serde_json::json!({"id": "a", "latex": x(10)}),
        serde_json::json!({"id": "b", "latex": x(100)}),
        serde_json::json!({"id": "c", "latex": x(500)}),
    );
    let v = json(&exprkit(&["curate", "stats"], &m));
    let counts: Vec<u64> = v["length"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, [1, 1, 0, 0, 1]);
    assert_eq!(v["total"], 3);

    let table = exprkit(&["--format", "text", "curate", "stats"], &m);
    assert!(stdout(&table).contains("0-20"), "{}", stdout(&table));

    let report = exprkit(&["report"], &stdout(&exprkit(&["curate", "stats"], &m)));
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(stdout(&report), stdout(&table));
}

#[test]
fn score_of_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"1\",\"latex\":\"\\\\frac{a}{b}\",\"tier\":\"easy\"}\n{\"id\":\"2\",\"latex\":\"x^2+y^2=z^2\",\"tier\":\"complex\"}\n",
    )
    .unwrap();
    let p = p.to_str().unwrap();
    let v = json(&exprkit(&["score", "--pred", p, "--ref", p], ""));
    let overall = &v["overall"];
    assert_eq!(overall["bleu"], 1.0);
    assert_eq!(overall["avg_edit"], 0.0);
    assert_eq!(overall["count"], 2);
    assert_eq!(v["tiers"].as_array().unwrap().len(), 2);
}

#[test]
fn score_joins_on_id_and_reports_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let (p, r) = (dir.path().join("p.jsonl"), dir.path().join("r.jsonl"));
    std::fs::write(&p, "{\"id\":\"2\",\"latex\":\"y\"}\n{\"id\":\"9\",\"latex\":\"z\"}\n").unwrap();
    std::fs::write(&r, "{\"id\":\"1\",\"latex\":\"x\"}\n{\"id\":\"2\",\"latex\":\"y\"}\n").unwrap();
    let o = exprkit(&["score", "--pred", p.to_str().unwrap(), "--ref", r.to_str().unwrap()], "");
    let v = json(&o);
    assert_eq!(v["overall"]["count"], 2);
    assert_eq!(v["overall"]["bleu"], 0.5);
    let err = stderr(&o);
    assert!(err.contains("reference 1 has no prediction") && err.contains("prediction 9 has no reference"), "{err}");

    std::fs::write(&p, "{\"id\":\"2\",\"latex\":\"y\"}\n{\"id\":\"2\",\"latex\":\"z\"}\n").unwrap();
    let o = exprkit(&["score", "--pred", p.to_str().unwrap(), "--ref", r.to_str().unwrap()], "");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sml_round_trips_through_both_forms() {
    let src = "\\begin{matrix} a & b \\\\ c & d \\end{matrix} + \\sqrt[3]{x}\n\\left( \\frac{1}{2} \\right)\n";
    let canonical = stdout(&exprkit(&["render", "--lines"], &stdout(&exprkit(&["parse", "--lines"], src))));
    for fmt in ["json", "text"] {
        let enc = exprkit(&["--format", fmt, "sml", "encode", "--lines"], src);
        assert_eq!(enc.status.code(), Some(0));
        let dec = exprkit(&["sml", "decode", "--lines"], &stdout(&enc));
        assert_eq!(stdout(&dec), canonical);
    }
}

#[test]
fn tokenizer_train_encode_decode() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let corpus = "\\frac{a}{b} + \\alpha\nx^{2} + y^{2}\n\\sum_{i=1}^{n} i\n".repeat(20);
    let o = exprkit(&["tok", "train", "--vocab-size", "800", "--out", model.to_str().unwrap()], &corpus);
    let v = json(&o);
    assert!(v["vocab_size"].as_u64().unwrap() <= 800);
    let m = model.to_str().unwrap();
    let lines = "\\frac{x}{y} ü\n\n\\alphabet\n";
    let ids = exprkit(&["tok", "encode", "--model", m], lines);
    assert_eq!(stdout(&ids).lines().count(), 3);
    let back = exprkit(&["tok", "decode", "--model", m], &stdout(&ids));
    assert_eq!(stdout(&back), lines);

    let saved = std::fs::read(&model).unwrap();
    let again = dir.path().join("m2.json");
    exprkit(&["tok", "train", "--vocab-size", "800", "--out", again.to_str().unwrap()], &corpus);
    assert_eq!(std::fs::read(&again).unwrap(), saved, "training is deterministic");
}

#[test]
fn config_dir_from_environment_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = include_str!("../data/curation.toml");
    std::fs::write(dir.path().join("curation.toml"), shipped.replace("min_tokens = 3", "min_tokens = 1")).unwrap();
    let m = "{\"id\":\"a\",\"latex\":\"x\"}\n";
    assert_eq!(stdout(&exprkit(&["curate", "filter"], m)), "");
    assert_eq!(stdout(&exprkit_env(&["curate", "filter"], m, Some(dir.path()))), m);
    let flag = exprkit(&["--config-dir", dir.path().to_str().unwrap(), "curate", "filter"], m);
    assert_eq!(stdout(&flag), m);
}

#[test]
fn filter_records_provenance_for_every_drop() {
    let dir = tempfile::tempdir().unwrap();
    let prov = dir.path().join("prov.jsonl");
    let m = "{\"id\":\"a\",\"latex\":\"x+y\"}\n{\"id\":\"b\",\"latex\":\"{x + y\"}\n{\"id\":\"c\",\"latex\":\"x\"}\n";
    let o = exprkit(&["curate", "filter", "--provenance", prov.to_str().unwrap()], m);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "{\"id\":\"a\",\"latex\":\"x+y\"}\n");
    let records: Vec<Value> =
        std::fs::read_to_string(&prov).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<&str> = records.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["b", "c"]);
    assert!(records.iter().all(|r| r["stage"] == "validate"));
}

#[test]
fn curate_run_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let (out, prov, stats) = (dir.path().join("o.jsonl"), dir.path().join("p.jsonl"), dir.path().join("s.json"));
    let m = [
        r#"{"id":"1","latex":"a + b \\label{eq}"}"#,
        r#"{"id":"2","latex":"a+b"}"#,
        r#"{"id":"3","latex":"\\frac{1}{2"}"#,
        r#"{"id":"4","latex":"\\begin{aligned} x &= 1 \\\\ y &= 2 \\end{aligned}"}"#,
    ]
    .join("\n");
    let args = |input: &str| {
        vec![
            "curate".to_string(),
            "run".into(),
            "--in".into(),
            input.into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--provenance".into(),
            prov.to_str().unwrap().into(),
            "--stats".into(),
            stats.to_str().unwrap().into(),
        ]
    };
    let input = dir.path().join("m.jsonl");
    std::fs::write(&input, m).unwrap();
    let a = args(input.to_str().unwrap());
    let o = exprkit(&a.iter().map(String::as_str).collect::<Vec<_>>(), "");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 2);
    assert_eq!(std::fs::read_to_string(&prov).unwrap().lines().count(), 2);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(s["stats"]["total"], 2);

    let second_in = dir.path().join("again.jsonl");
    std::fs::copy(&out, &second_in).unwrap();
    let a = args(second_in.to_str().unwrap());
    exprkit(&a.iter().map(String::as_str).collect::<Vec<_>>(), "");
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);
    assert_eq!(std::fs::read_to_string(&prov).unwrap(), "");
}

#[test]
fn output_is_independent_of_worker_count() {
    let src: String = (0..2500).map(|i| format!("x_{{{i}}} + \\frac{{{i}}}{{y}}\n")).collect();
    let one = exprkit(&["--jobs", "1", "sml", "encode", "--lines"], &src);
    let many = exprkit(&["--jobs", "8", "sml", "encode", "--lines"], &src);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(stdout(&one), stdout(&many));
    assert_eq!(stdout(&one).lines().count(), 2500);
}
