use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn npg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npg"))
        .args(args)
        .output()
        .expect("spawn npg")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL_ONPG: &str = r#"
version = 1
experiment = "npg-vs-onpg"
seed = 11
rng = "chacha20"

[params]
n = 4
tau = 0.05
etas = [0.25, 0.5]
iterations = 150
"#;

fn run_into(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    npg(&args)
}

#[test]
fn run_is_deterministic_across_invocations_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_ONPG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run_into(&config, &a, &[]).status.success());
    assert!(run_into(&config, &b, &[]).status.success());
    let out = npg(&["--threads", "2", "run", "--config", &config, "--out", c.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["kl.csv", "param_dist.csv"] {
        let first = fs::read(a.join(name)).unwrap();
        assert_eq!(first, fs::read(b.join(name)).unwrap(), "{name} differs between runs");
        assert_eq!(first, fs::read(c.join(name)).unwrap(), "{name} differs with 2 threads");
    }
}

#[test]
fn csv_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_ONPG);
    let out = dir.path().join("out");
    assert!(run_into(&config, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("kl.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 150 + 1);
    assert_eq!(lines[0], "iteration,npg_eta=0.25,onpg_eta=0.25,npg_eta=0.5,onpg_eta=0.5");
    assert!(lines[1].starts_with("1,"));
    assert!(lines[150].starts_with("150,"));
    // The resolved config is written next to the traces and runs again.
    let again = dir.path().join("again");
    let saved = out.join("config.toml");
    assert!(run_into(saved.to_str().unwrap(), &again, &[]).status.success());
    assert_eq!(fs::read(out.join("kl.csv")).unwrap(), fs::read(again.join("kl.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_ONPG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_into(&config, &a, &[]).status.success());
    assert!(run_into(&config, &b, &["--seed", "12"]).status.success());
    assert_ne!(fs::read(a.join("kl.csv")).unwrap(), fs::read(b.join("kl.csv")).unwrap());
}

#[test]
fn bad_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL_ONPG.replace("tau = 0.05", "tau = -1.0"));
    let out = run_into(&config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));

    let unknown = write_config(dir.path(), &SMALL_ONPG.replace("iterations = 150", "iterations = 150\nfoo = 1"));
    assert_eq!(run_into(&unknown, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn gen_is_reproducible() {
    for (kind, size) in [("matrix", "4x3"), ("matrix-fa", "6x2"), ("markov", "3x2")] {
        let a = npg(&["gen", "--kind", kind, "--size", size, "--seed", "5"]);
        let b = npg(&["gen", "--kind", kind, "--size", size, "--seed", "5"]);
        assert!(a.status.success(), "{kind}: {}", String::from_utf8_lossy(&a.stderr));
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{kind}");
        let c = npg(&["gen", "--kind", kind, "--size", size, "--seed", "6"]);
        assert_ne!(a.stdout, c.stdout, "{kind}");
    }
}

#[test]
fn gen_writes_file_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("game.toml");
    let out = npg(&["gen", "--kind", "matrix", "--size", "3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(path).unwrap();
    assert!(text.contains("kind = \"matrix\""), "{text}");
}

#[test]
fn gen_rejects_bad_size() {
    let out = npg(&["gen", "--kind", "matrix", "--size", "0x3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn list_names_everything() {
    let out = npg(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["vanilla-vs-modified", "markov-fa", "monotone-wrapped", "11 "] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn accept_rejects_unknown_criterion() {
    assert_eq!(npg(&["accept", "--only", "12"]).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        npg_cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert_eq!(count, 6);
}
