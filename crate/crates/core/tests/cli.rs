mod common;

use std::path::Path;
use std::process::Command;

use serolm::pipeline::{files, PipelineConfig};

fn serolm(config: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_serolm"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn stages_exit_codes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.toml");
    std::fs::write(&cfg_path, common::small_config(&dir.path().join("a")).to_toml_string()).unwrap();

    let (code, _, err) = serolm(&cfg_path, &["evaluate"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("run stage"));

    let (code, out, err) = serolm(&cfg_path, &["run-all"]);
    assert_eq!(code, 0, "{err}");
    let run_a = Path::new(out.trim()).to_path_buf();
    assert!(run_a.join(files::REPORT).exists());

    let other = dir.path().join("b");
    let (code, out, _) = serolm(&cfg_path, &["--out", other.to_str().unwrap(), "run-all"]);
    assert_eq!(code, 0);
    let run_b = Path::new(out.trim()).to_path_buf();
    assert_ne!(run_a, run_b);
    for name in [files::REPORT, files::METRICS, files::ABLATION, files::PREDICTIONS] {
        assert_eq!(std::fs::read(run_a.join(name)).unwrap(), std::fs::read(run_b.join(name)).unwrap(), "{name}");
    }

    let (code, out, _) = serolm(&cfg_path, &["--seed", "7", "generate"]);
    assert_eq!(code, 0);
    assert!(out.trim().ends_with("-seed7"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "top_k = 0\n").unwrap();
    let (code, _, err) = serolm(&bad, &["generate"]);
    assert_eq!(code, 1);
    assert!(err.contains("top_k"));
}

#[test]
fn shipped_configs_match_constructors() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = PipelineConfig::load(root.join("default.toml")).unwrap();
    assert_eq!(default, PipelineConfig::default());
    let planted = PipelineConfig::load(root.join("planted.toml")).unwrap();
    assert_eq!(planted, PipelineConfig::planted());
}
