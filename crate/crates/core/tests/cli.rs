use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn chatea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatea"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = chatea(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// A 40-entity synthetic pair and a quick config next to it.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", data.to_str().unwrap(), "--entities", "40", "--seed", "3"]);
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"output_dir = "out"

[data]
dir = "data"
temporal = true
train_ratio = 0.3

[features]
name_dim = 16
time_dim = 8
structure_dim = 16

[features.train]
epochs = 20
hidden_dim = 16
time_dim = 8
"#,
    )
    .unwrap();
    (dir, config)
}

#[test]
fn subcommands_are_idempotent() {
    let (dir, config) = workspace();
    let c = config.to_str().unwrap();
    let out = dir.path().join("out");

    let first = ok(&["preprocess", "-c", c]);
    assert!(first.contains("embeddings_1.bin"));
    assert_eq!(first, ok(&["preprocess", "-c", c]));

    // The second run finds every description in the on-disk cache, so only
    // the shared spend may differ.
    let report = || {
        let mut v: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
        let shared = v.as_object_mut().unwrap().remove("shared_tokens").unwrap();
        (v, shared.as_u64().unwrap())
    };
    ok(&["align", "-c", c]);
    let results = read(out.join("results.jsonl"));
    let (first_report, first_shared) = report();
    ok(&["align", "-c", c]);
    assert_eq!(results, read(out.join("results.jsonl")));
    let (second_report, second_shared) = report();
    assert_eq!(first_report, second_report);
    assert!(first_shared > 0);
    assert_eq!(second_shared, 0);

    // Replaying the transcript twice gives the same bytes as the live run.
    let saved = dir.path().join("saved.jsonl");
    std::fs::copy(out.join("transcript.jsonl"), &saved).unwrap();
    for _ in 0..2 {
        ok(&["replay", "-c", c, "-t", saved.to_str().unwrap()]);
        assert_eq!(results, read(out.join("results.jsonl")));
        assert_eq!(read(&saved), read(out.join("transcript.jsonl")));
    }
}

#[test]
fn eval_writes_all_three_reports() {
    let (dir, config) = workspace();
    let c = config.to_str().unwrap();
    ok(&["preprocess", "-c", c]);
    ok(&["align", "-c", c]);
    let out = dir.path().join("out");
    let eval_dir = dir.path().join("eval");
    let text = ok(&[
        "eval",
        "--results",
        out.join("results.jsonl").to_str().unwrap(),
        "--gold",
        out.join("test_pairs").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "-c",
        c,
    ]);
    assert!(text.contains("Hits@1"));
    let live: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    let rebuilt: serde_json::Value = serde_json::from_str(&read(eval_dir.join("report.json"))).unwrap();
    for key in ["targets", "hits1", "hits10", "mrr", "avg_tokens", "config_fingerprint"] {
        assert_eq!(live[key], rebuilt[key], "{key}");
    }
    let csv = read(eval_dir.join("report.csv"));
    assert!(csv.starts_with("targets,hits1,hits10,mrr"));
    assert!(read(eval_dir.join("report.txt")).contains("MRR"));
}

#[test]
fn ablation_flags_reach_the_loop() {
    let (dir, config) = workspace();
    let c = config.to_str().unwrap();
    ok(&["preprocess", "-c", c]);
    ok(&["align", "-c", c, "--ablate", "no-two-stage", "--ablate", "no-description", "--rethink", "rule"]);
    let results = read(dir.path().join("out/results.jsonl"));
    for line in results.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["rounds_used"], 1);
        assert_eq!(r["judged"].as_array().unwrap().len(), 20);
    }
    let transcript = read(dir.path().join("out/transcript.jsonl"));
    assert!(!transcript.contains("description of the entity e ="));
    assert!(!transcript.contains("Please answer the question"));
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| chatea(args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["align", "-c", "/nonexistent/run.toml"]), 1);

    let (dir, config) = workspace();
    let c = config.to_str().unwrap();
    assert_eq!(code(&["align", "-c", c, "--ablate", "no-such-thing"]), 1);
    // Aligning before preprocessing: the checkpoint is missing.
    assert_eq!(code(&["align", "-c", c]), 1);
    assert_eq!(code(&["sweep", "-c", c, "--ratios", "1.5"]), 1);

    // A server that is not there fails the probe.
    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", closed.local_addr().unwrap());
    drop(closed);
    let http = dir.path().join("http.toml");
    std::fs::write(
        &http,
        read(&config) + &format!("[backend]\nkind = \"http\"\nbase_url = \"{url}\"\ntimeout_secs = 2\n[backend.retry]\nmax_attempts = 1\n"),
    )
    .unwrap();
    ok(&["preprocess", "-c", http.to_str().unwrap()]);
    assert_eq!(code(&["align", "-c", http.to_str().unwrap()]), 2);
}

#[test]
fn inspect_needs_no_model() {
    let listing = ok(&["inspect", "templates"]);
    for name in ["system", "reasoning", "rethinking", "description"] {
        assert!(listing.lines().any(|l| l.starts_with(name)), "{name} missing from\n{listing}");
    }
    assert!(listing.contains("digest "));

    let (dir, config) = workspace();
    let c = config.to_str().unwrap();
    let pairs = read(dir.path().join("data/ref_ent_ids"));
    let (t, g) = pairs.lines().next().unwrap().split_once('\t').unwrap();
    let card = ok(&["inspect", "card", "-c", c, "--entity", t]);
    assert!(card.contains(&format!("'{t}'")));
    let plain = ok(&["inspect", "card", "-c", c, "--kg", "2", "--entity", g, "--plain"]);
    assert!(plain.contains(&format!("id: '{g}'")));
    let prompt = ok(&["inspect", "prompt", "-c", c, "--target", t, "--candidate", g]);
    assert!(prompt.contains("=== system ===") && prompt.contains("[Candidate Entity] r_e"));
    assert_eq!(chatea(&["inspect", "card", "-c", c, "--entity", "999999"]).status.code(), Some(1));
}
