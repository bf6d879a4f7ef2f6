use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dynhtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynhtm"))
        .args(args)
        .current_dir(workspace())
        .output()
        .unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"seed": 3, "system": {"n_steps": 1000}}"#;

#[test]
fn generate_writes_one_row_per_state_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = dynhtm(&["--config", &cfg, "--out", dir.to_str().unwrap(), "generate"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let traj = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 1001);
    for name in ["trajectory.csv", "series.csv", "config.resolved.json", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["config"]["system"]["n_steps"], 1000);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 3);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 3, "system": {"n_steps": 200}, "observation": {"noise_std": 0.5}}"#,
    );
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        assert!(dynhtm(&[
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
            "generate"
        ])
        .status
        .success());
        fs::read(out.join("series.csv")).unwrap()
    };
    assert_ne!(run("3", "a"), run("4", "b"));
    assert_eq!(run("3", "c"), run("3", "d"));
}

#[test]
fn forecast_beyond_the_data_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"system": {"n_steps": 300}, "embedding": {"tau": 5, "k": 3}, "forecast": {"horizon": 400}}"#,
    );
    let o = dynhtm(&[
        "--config",
        &cfg,
        "--out",
        tmp.path().join("f").to_str().unwrap(),
        "forecast",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("insufficient data"), "{}", stderr(&o));
}

#[test]
fn ill_typed_config_value_names_its_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"system": {"rho": "abc"}}"#);
    let o = dynhtm(&[
        "--config",
        &cfg,
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "generate",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("system.rho"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"system": {"n_step": 10}}"#);
    let o = dynhtm(&[
        "--config",
        &cfg,
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "generate",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_step"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(dynhtm(&["--format", "xml", "generate"]).status.code(), Some(2));
    assert_eq!(dynhtm(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn replay_matches_and_detects_tampering() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert!(dynhtm(&["--config", &cfg, "--out", run.to_str().unwrap(), "embed"])
        .status
        .success());
    let manifest = run.join("manifest.json");
    let o = dynhtm(&[
        "--out",
        tmp.path().join("again").to_str().unwrap(),
        "replay",
        manifest.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let text = fs::read_to_string(&manifest).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let outputs = value["outputs"].as_object_mut().unwrap();
    let first = outputs.keys().next().unwrap().clone();
    outputs.insert(first, serde_json::Value::from("0".repeat(64)));
    fs::write(&manifest, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    let o = dynhtm(&[
        "--out",
        tmp.path().join("third").to_str().unwrap(),
        "replay",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("differs"), "{}", stderr(&o));
}

#[test]
fn jsonl_format_mirrors_csv_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (c, j) = (tmp.path().join("c"), tmp.path().join("j"));
    assert!(dynhtm(&["--config", &cfg, "--out", c.to_str().unwrap(), "generate"])
        .status
        .success());
    assert!(dynhtm(&[
        "--config",
        &cfg,
        "--out",
        j.to_str().unwrap(),
        "--format",
        "jsonl",
        "generate"
    ])
    .status
    .success());
    let csv = fs::read_to_string(c.join("series.csv")).unwrap();
    let jsonl = fs::read_to_string(j.join("series.jsonl")).unwrap();
    assert_eq!(csv.lines().count(), jsonl.lines().count() + 1);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    for (row, line) in csv.lines().skip(1).zip(jsonl.lines()) {
        let obj: serde_json::Value = serde_json::from_str(line).unwrap();
        for (key, cell) in header.iter().zip(row.split(',')) {
            let want: f64 = cell.parse().unwrap();
            assert_eq!(obj[*key].as_f64().unwrap(), want);
        }
    }
}

#[test]
fn causality_reads_series_from_files() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    let cfg = write_config(tmp.path(), r#"{"system": {"n_steps": 1200}}"#);
    assert!(dynhtm(&["--config", &cfg, "--out", gen.to_str().unwrap(), "generate"])
        .status
        .success());
    let series = gen.join("series.csv");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{"io": {{"series": {s:?}, "series_y": {s:?}}}, "causality": {{"tau": 10, "k": 3, "library_sizes": [100, 400]}}}}"#,
            s = series.to_str().unwrap()
        ),
    );
    let out = tmp.path().join("c");
    let o = dynhtm(&["--config", &cfg, "--out", out.to_str().unwrap(), "causality"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("causality.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "bidirectional");
}

fn readme_commands() -> Vec<Vec<String>> {
    let text = fs::read_to_string(workspace().join("README.md")).unwrap();
    let mut in_sh = false;
    let mut cmds = Vec::new();
    for line in text.lines() {
        if line.starts_with("```") {
            in_sh = line == "```sh";
            continue;
        }
        if in_sh && line.starts_with("dynhtm ") {
            cmds.push(line.split_whitespace().skip(1).map(String::from).collect());
        }
    }
    cmds
}

#[test]
fn readme_examples_run() {
    let tmp = TempDir::new().unwrap();
    let cmds = readme_commands();
    assert!(cmds.len() >= 6);
    for cmd in cmds {
        let args: Vec<String> = cmd
            .iter()
            .map(|a| match a.strip_prefix("runs/") {
                Some(rest) => tmp.path().join(rest).to_str().unwrap().to_string(),
                None => a.clone(),
            })
            .collect();
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = dynhtm(&refs);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
}
