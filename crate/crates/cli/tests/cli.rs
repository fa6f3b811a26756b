use std::path::Path;
use std::process::{Command, Output};

fn spkraug(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spkraug")).args(args).current_dir(dir).env_remove("SPKRAUG_WORKERS").output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn wer_of_identical_transcripts_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ref.txt"), "the cat sat\non the mat\n").unwrap();
    let out = spkraug(&["eval", "wer", "--ref", "ref.txt", "--hyp", "ref.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["wer"], 0.0);
    assert_eq!(json(&out)["reference_words"], 6);
}

#[test]
fn unknown_flag_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = spkraug(&["synth", "--out-root", "corpus", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(spkraug(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(spkraug(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn loss_combines_terms() {
    let dir = tempfile::tempdir().unwrap();
    let out = spkraug(&["loss", "--l1", "0.5", "--att", "0.25", "--sv", "0.2", "--gamma", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["loss"].as_f64().unwrap() - 0.85).abs() < 1e-12);
    let bad = spkraug(&["loss", "--l1", "-1", "--att", "0", "--sv", "0"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spkraug(&["subset", "--manifest", "nope.jsonl", "--per-speaker", "2", "--out", "s.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
    assert!(!dir.path().join("s.jsonl").exists());
}

#[test]
fn worker_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: &str| {
        Command::new(env!("CARGO_BIN_EXE_spkraug"))
            .args(["--workers", "1", "synth", "--out-root", "c", "--speakers", "2", "--per-speaker", "2"])
            .current_dir(dir.path())
            .env("SPKRAUG_WORKERS", env)
            .output()
            .unwrap()
    };
    assert_eq!(run("3").status.code(), Some(0));
    assert_eq!(run("zero").status.code(), Some(1));
    assert_eq!(run("0").status.code(), Some(1));
}

#[test]
fn vocode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(spkraug(&["synth", "--out-root", "c", "--speakers", "1", "--per-speaker", "1"], dir.path()).status.success());
    let wav = "c/spk_a/spk_a_0001.wav";
    assert!(dir.path().join(wav).exists());
    assert!(spkraug(&["analyze", "--input", wav, "--out", "a.spg"], dir.path()).status.success());
    let out = spkraug(&["vocode", "--input", "a.spg", "--out", "v.wav", "--iterations", "5"], dir.path());
    assert!(out.status.success());
    let r = json(&out);
    assert!(r["final_error"].as_f64().unwrap() <= r["initial_error"].as_f64().unwrap());
}
