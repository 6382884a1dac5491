use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

fn mcqgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcqgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MCQGEN_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn lines(p: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn manifest(output: &Path) -> serde_json::Value {
    let path = format!("{}.manifest.json", output.display());
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_on_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("items.jsonl");
    let audit = dir.path().join("audit.jsonl");
    let run = mcqgen(&[
        "--config",
        &fx("run.toml"),
        "--audit-log",
        &s(&audit),
        "generate",
        "--input",
        &fx("qa.jsonl"),
        "--output",
        &s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let items = lines(&out);
    assert_eq!(items.len(), 10);
    for item in &items {
        let choices = item["choices"].as_array().unwrap();
        assert_eq!(choices.len(), 4);
    }
    let m = manifest(&out);
    assert_eq!(m["records_in"], 10);
    assert_eq!(m["items_written"], 10);
    let stages = m["filter_stages"].as_object().unwrap();
    assert_eq!(stages.len(), 4);
    for stage in stages.values() {
        assert_eq!(
            stage["input"].as_u64().unwrap(),
            stage["output"].as_u64().unwrap() + stage["rejected"].as_u64().unwrap()
        );
    }
    assert!(!lines(&audit).is_empty());
}

#[test]
fn generate_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        let run = mcqgen(&[
            "--config",
            &fx("run.toml"),
            "--workers",
            workers,
            "generate",
            "--input",
            &fx("qa.jsonl"),
            "--output",
            &s(out),
        ]);
        assert_eq!(code(&run), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_flag_changes_shuffle_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("{i}.jsonl"))).collect();
    for (out, seed) in outs.iter().zip(["11", "11", "12"]) {
        let run = mcqgen(&[
            "--config",
            &fx("run.toml"),
            "--seed",
            seed,
            "generate",
            "--input",
            &fx("qa.jsonl"),
            "--output",
            &s(out),
        ]);
        assert_eq!(code(&run), 0);
    }
    let read = |p: &PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(&outs[0]), read(&outs[1]));
    assert_ne!(read(&outs[0]), read(&outs[2]));
    assert_eq!(manifest(&outs[0])["seeds"]["shuffle_scope"]["seed"], 11);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    std::fs::write(&input, "").unwrap();
    let out = dir.path().join("out.jsonl");
    let run = mcqgen(&[
        "--config",
        &fx("run.toml"),
        "generate",
        "--input",
        &s(&input),
        "--output",
        &s(&out),
    ]);
    assert_eq!(code(&run), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
    assert_eq!(manifest(&out)["records_in"], 0);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("o.jsonl"));
    let missing = mcqgen(&[
        "--config",
        "/nonexistent/run.toml",
        "generate",
        "--input",
        &fx("qa.jsonl"),
        "--output",
        &out,
    ]);
    assert_eq!(code(&missing), 1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[pipeline]\nno_such_key = 1\n").unwrap();
    let unknown = mcqgen(&[
        "--config",
        &s(&bad),
        "generate",
        "--input",
        &fx("qa.jsonl"),
        "--output",
        &out,
    ]);
    assert_eq!(code(&unknown), 1);

    assert_eq!(code(&mcqgen(&["generate"])), 1);
    assert_eq!(code(&mcqgen(&["--help"])), 0);
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.jsonl");
    std::fs::write(&input, "{not json\n").unwrap();
    let run = mcqgen(&[
        "--config",
        &fx("run.toml"),
        "--fail-fast",
        "generate",
        "--input",
        &s(&input),
        "--output",
        &s(&dir.path().join("o.jsonl")),
    ]);
    assert_eq!(code(&run), 2);
}

#[test]
fn train_kg_on_toy_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("kg.emb");
    let run = mcqgen(&[
        "--seed",
        "7",
        "train-kg",
        "--triples",
        &fx("kg.tsv"),
        "--output",
        &s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("20 entities, 3 relations, 60 triples"), "{stdout}");
    let mrr: f64 = stdout
        .split("MRR ")
        .nth(1)
        .unwrap()
        .split(';')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(mrr >= 0.6);

    let again = dir.path().join("again.emb");
    assert_eq!(
        code(&mcqgen(&[
            "--seed",
            "7",
            "train-kg",
            "--triples",
            &fx("kg.tsv"),
            "--output",
            &s(&again)
        ])),
        0
    );
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let zero = dir.path().join("zero.emb");
    assert_eq!(
        code(&mcqgen(&[
            "train-kg",
            "--triples",
            &fx("kg.tsv"),
            "--output",
            &s(&zero),
            "--epochs",
            "0",
            "--dim",
            "4"
        ])),
        0
    );
    assert!(std::fs::read_to_string(&zero).unwrap().starts_with("20 3 4"));
}

#[test]
fn train_kg_empty_store_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let run = mcqgen(&[
        "train-kg",
        "--triples",
        &s(&empty),
        "--output",
        &s(&dir.path().join("e.emb")),
    ]);
    assert_eq!(code(&run), 2);
}

#[test]
fn categorize_without_llm_keeps_others() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let run = mcqgen(&["categorize", "--input", &fx("mcq3.jsonl"), "--output", &s(&out)]);
    assert_eq!(code(&run), 0);
    let items = lines(&out);
    let types: Vec<&str> = items.iter().map(|i| i["qtype"].as_str().unwrap()).collect();
    assert_eq!(types, ["WHO", "WHEN", "WHERE"]);
    assert!(items.iter().all(|i| i["content"] == "OTHERS"));
}

#[test]
fn categorize_with_replayed_llm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let report = dir.path().join("dist.json");
    let run = mcqgen(&[
        "--config",
        &fx("categorize.toml"),
        "categorize",
        "--input",
        &fx("mcq3.jsonl"),
        "--output",
        &s(&out),
        "--report",
        &s(&report),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let content: Vec<String> = lines(&out)
        .iter()
        .map(|i| i["content"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(content, ["ART_CULTURE", "HISTORY", "GEOGRAPHY"]);
    let dist: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(dist["total"], 3);
    let sum: u64 = dist["qtype"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(sum, 3);
}

#[test]
fn evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval.json");
    let tables = dir.path().join("tables.tsv");
    let run = mcqgen(&[
        "evaluate",
        "--logs",
        &fx("eval_logs.jsonl"),
        "--dataset",
        &fx("mcq3.jsonl"),
        "--output",
        &s(&out),
        "--style",
        "tsv",
        "--tables",
        &s(&tables),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let runs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let alpha = &runs[0];
    assert_eq!(alpha["label"], "alpha (16-bit)");
    let r = &alpha["report"];
    assert_eq!(r["n"], 3);
    assert!((r["hard_accuracy"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((r["soft_accuracy"].as_f64().unwrap() - (0.7 + 0.25 + 0.5) / 3.0).abs() < 1e-12);
    let text = std::fs::read_to_string(&tables).unwrap();
    assert!(text.contains("alpha (16-bit)\t3\t33.3\t48.3"), "{text}");

    let report = mcqgen(&[
        "report",
        "--evaluation",
        &s(&out),
        "--annotations",
        &fx("annotations.jsonl"),
    ]);
    assert_eq!(code(&report), 0);
    let stdout = String::from_utf8_lossy(&report.stdout);
    assert!(stdout.contains("33.3"), "{stdout}");
    assert!(stdout.contains("100.0"), "{stdout}");

    assert_eq!(code(&mcqgen(&["report"])), 1);
}

#[test]
fn evaluate_error_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("e.json"));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let run = mcqgen(&[
        "evaluate",
        "--logs",
        &s(&empty),
        "--dataset",
        &fx("mcq3.jsonl"),
        "--output",
        &out,
    ]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("no records"));

    let unknown = dir.path().join("unknown.jsonl");
    std::fs::write(
        &unknown,
        "{\"item_id\":\"zz\",\"model_id\":\"m\",\"probs\":[1,0,0,0],\"correct_index\":0}\n",
    )
    .unwrap();
    let run = mcqgen(&[
        "evaluate",
        "--logs",
        &s(&unknown),
        "--dataset",
        &fx("mcq3.jsonl"),
        "--output",
        &out,
    ]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("zz"));
}
