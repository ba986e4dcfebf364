use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn metawalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metawalk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"
preset = "synthetic"

[train]
max_epochs = 2
patience = 2
rollouts = 8
test_rollouts = 10

[synth]
drugs = 12
proteins = 60
processes = 6
planted_pairs = 12
participates = 60
upregulates = 30
downregulates = 40
"#;

fn setup() -> (TempDir, std::path::PathBuf) {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    ok(metawalk(&[
        "generate-synthetic",
        "-c",
        p(&config),
        "-o",
        p(&dir.path().join("data")),
    ]));
    (dir, config)
}

fn metrics(dir: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    serde_json::json!({ "standard": v["standard"], "pruned": v["pruned"] })
}

#[test]
fn pipeline_runs_end_to_end() {
    let (dir, config) = setup();
    let d = dir.path();
    for f in ["triples.tsv", "schema.toml", "rules.toml", "truth.json", "splits.json", "config.toml"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    let data = d.join("data");
    let run = d.join("train");
    ok(metawalk(&["train", "-c", p(&config), "--data", p(&data), "-o", p(&run)]));
    for f in [
        "config.toml",
        "metrics.json",
        "predictions.tsv",
        "rule_weights.csv",
        "trajectories.log",
        "training.json",
        "training.jsonl",
        "checkpoint.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(run.join("rule_weights.csv")).unwrap();
    assert!(csv.starts_with("epoch,rule_id,weight\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4, "header plus 4 rules for epochs 0..=2");

    // Evaluating the saved checkpoint reproduces the training run's test metrics.
    let eval = d.join("eval");
    let cp = run.join("checkpoint.json");
    let eval_config = d.join("eval.toml");
    fs::write(&eval_config, format!("{SMALL}\n[eval]\ncheckpoint = {:?}\n", p(&cp))).unwrap();
    ok(metawalk(&["evaluate", "-c", p(&eval_config), "--data", p(&data), "-o", p(&eval)]));
    assert_eq!(metrics(&eval), metrics(&run));

    // Permute, then evaluate the same policy on the permuted graph.
    let perm = d.join("permuted");
    ok(metawalk(&["permute", "-c", p(&config), "--data", p(&data), "-o", p(&perm)]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(perm.join("permutation.json")).unwrap()).unwrap();
    assert_eq!(report["degree_checksum_before"], report["degree_checksum_after"]);
    for f in ["triples.tsv", "schema.toml", "rules.toml", "splits.json"] {
        assert!(perm.join(f).exists(), "{f}");
    }
    let perm_eval = d.join("permuted-eval");
    ok(metawalk(&["evaluate", "-c", p(&eval_config), "--data", p(&perm), "-o", p(&perm_eval)]));
    assert!(perm_eval.join("metrics.json").exists());

    ok(metawalk(&["analyze-trajectories", "-c", p(&eval_config), "--data", p(&data), "-o", p(&d.join("analysis"))]));
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("analysis/trajectory_analysis.json")).unwrap()).unwrap();
    let total: u64 = a["signatures"].as_array().unwrap().iter().map(|s| s["count"].as_u64().unwrap()).sum();
    assert_eq!(total, a["successful"].as_u64().unwrap());

    ok(metawalk(&["dwpc", "-c", p(&config), "--data", p(&data), "-o", p(&d.join("dwpc"))]));
    assert!(d.join("dwpc/metrics.json").exists());
}

#[test]
fn echoed_config_reproduces_artifacts() {
    let (dir, config) = setup();
    let d = dir.path();
    let data = d.join("data");
    let first = d.join("first");
    ok(metawalk(&["train", "-c", p(&config), "--data", p(&data), "-o", p(&first), "--seed", "5"]));
    let echoed = first.join("config.toml");
    let second = d.join("second");
    ok(metawalk(&["train", "-c", p(&echoed), "-o", p(&second)]));
    assert_eq!(metrics(&first), metrics(&second));
    for f in ["rule_weights.csv", "trajectories.log", "predictions.tsv", "checkpoint.json", "training.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let resolved = fs::read_to_string(&echoed).unwrap();
    assert!(resolved.contains("seed = 5"), "{resolved}");
}

#[test]
fn trim_and_enumerate() {
    let (dir, config) = setup();
    let d = dir.path();
    let data = d.join("data");
    let trim_config = d.join("trim.toml");
    fs::write(&trim_config, format!("{SMALL}\n[trim]\nrelation = \"interacts\"\nthreshold = 10\n")).unwrap();
    ok(metawalk(&["trim", "-c", p(&trim_config), "--data", p(&data), "-o", p(&d.join("trimmed"))]));
    let tsv = fs::read_to_string(d.join("trimmed/triples.tsv")).unwrap();
    assert!(tsv.lines().filter(|l| l.split('\t').nth(1) == Some("interacts")).count() <= 10);

    let enum_config = d.join("enum.toml");
    fs::write(
        &enum_config,
        format!(
            "[data]\nschema = {:?}\nquery_relation = \"induces\"\n[enumerate]\nmax_len = 4\n",
            p(&data.join("schema.toml"))
        ),
    )
    .unwrap();
    let out = ok(metawalk(&["enumerate-metapaths", "-c", p(&enum_config), "-o", p(&d.join("enum"))]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 6, "{stdout}");
    assert!(d.join("enum/rules.toml").exists());
    let _ = config;
}

#[test]
fn missing_rules_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    let missing = dir.path().join("nope/rules.toml");
    fs::write(
        &config,
        format!(
            "[data]\ntriples = {:?}\nschema = {:?}\nrules = {:?}\n",
            p(&config),
            p(&config),
            p(&missing)
        ),
    )
    .unwrap();
    let out = metawalk(&["train", "-c", p(&config), "-o", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.rules") && err.contains(p(&missing)), "{err}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "[train]\nlearning_rte = 0.1\n").unwrap();
    let out = metawalk(&["train", "-c", p(&config), "-o", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));

    fs::write(&config, "[train]\nbatch_size = 0\n").unwrap();
    let out = metawalk(&["train", "-c", p(&config), "-o", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
}

#[test]
fn runtime_failure_exits_with_two() {
    let (dir, config) = setup();
    let d = dir.path();
    let bad = d.join("bad.tsv");
    fs::write(&bad, "D0\tno_such_relation\tP0\n").unwrap();
    let c = d.join("bad.toml");
    fs::write(
        &c,
        format!(
            "{SMALL}\n[data]\ntriples = {:?}\nschema = {:?}\nrules = {:?}\nsplits = {:?}\n",
            p(&bad),
            p(&d.join("data/schema.toml")),
            p(&d.join("data/rules.toml")),
            p(&d.join("data/splits.json"))
        ),
    )
    .unwrap();
    let out = metawalk(&["train", "-c", p(&c), "-o", p(&d.join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_relation"));
    let _ = config;
}
