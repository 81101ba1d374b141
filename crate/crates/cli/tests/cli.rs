use std::path::Path;
use std::process::{Command, Output};

fn surfglm(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surfglm")).current_dir(root).args(args).output().unwrap()
}

fn ok(root: &Path, args: &[&str]) {
    let out = surfglm(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate(root: &Path) {
    std::fs::write(
        root.join("spec.json"),
        r#"{"mesh":{"kind":"grid","nx":7,"ny":6,"spacing":2},
 "tasks":[{"kappa":0.4,"tau":0.5,"mean":0.6}],"runs":1,"n_volumes":100,"seed":3}"#,
    )
    .unwrap();
    ok(root, &["simulate", "--spec", "spec.json", "--out", "data"]);
}

fn fit(root: &Path, model: &str, extra: &[&str]) -> Output {
    let out = format!("fit-{model}");
    let mut a = vec![
        "fit", "--mesh", "data/mesh.txt", "--paradigm", "data/paradigm.txt", "--bold", "data/sub-001/visit-1/run-1/bold.tsv",
        "--model", model, "--out", &out,
    ];
    a.extend(extra);
    surfglm(root, &a)
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(surfglm(root, &["activate", "--fit", "missing", "--out", "x"]).status.code(), Some(2));
    assert_eq!(surfglm(root, &["--jobs", "0", "simulate", "--spec", "s.json", "--out", "x"]).status.code(), Some(2));
    std::fs::write(root.join("bad.json"), "{\"tasks\": 3}").unwrap();
    assert_eq!(surfglm(root, &["simulate", "--spec", "bad.json", "--out", "x"]).status.code(), Some(2));

    simulate(root);
    assert!(fit(root, "classical", &[]).status.success());
    // excursion sets need a Bayesian fit
    let out = surfglm(root, &["activate", "--fit", "fit-classical", "--out", "act"]);
    assert_eq!(out.status.code(), Some(2));
    let out = surfglm(root, &["activate", "--fit", "fit-classical", "--out", "act", "--method", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = surfglm(root, &["activate", "--fit", "fit-classical", "--out", "act", "--method", "fdr", "--gamma", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_fit_writes_results_and_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate(root);
    let out = fit(root, "bayes", &["--max-evals", "5", "--restarts", "1"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["beta.tsv", "sd.tsv", "theta.json", "log.json", "manifest.json"] {
        assert!(root.join("fit-bayes").join(f).exists(), "{f}");
    }
}

#[test]
fn activation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate(root);
    assert!(fit(root, "bayes", &[]).status.success());
    for out in ["a", "b"] {
        ok(root, &["activate", "--fit", "fit-bayes", "--out", out, "--n-mc", "10000", "--seed", "9"]);
    }
    let summary = std::fs::read_to_string(root.join("a/summary.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let counts: Vec<usize> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");

    let mut entries: Vec<_> = walk(&root.join("a"));
    entries.sort();
    assert!(!entries.is_empty());
    for rel in entries {
        let a = std::fs::read(root.join("a").join(&rel)).unwrap();
        let b = std::fs::read(root.join("b").join(&rel)).unwrap();
        if rel != "manifest.json" {
            assert_eq!(a, b, "{rel}");
        }
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("a/manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("summary.tsv"));
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            out.extend(walk(&p).into_iter().map(|s| format!("{name}/{s}")));
        } else {
            out.push(p.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    out
}
