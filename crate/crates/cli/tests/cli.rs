use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = scd(dir, args);
    assert!(
        out.status.success(),
        "scd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_corpus(dir: &Path, name: &str, seed: &str, speakers: &str) {
    corpus_with(dir, name, seed, speakers, "3");
}

fn corpus_with(dir: &Path, name: &str, seed: &str, speakers: &str, utts: &str) {
    ok(
        dir,
        &[
            "synth-corpus",
            "--out",
            name,
            "--speakers",
            speakers,
            "--utts",
            utts,
            "--seconds",
            "2.5",
            "--seed",
            seed,
            "--prefix",
            name,
        ],
    );
}

fn files_with_ext(root: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.to_string_lossy().ends_with(ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn preprocess_writes_one_dump_per_utterance_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "c", "1", "3");
    let text = ok(d, &["preprocess", "--corpus", "c", "--out", "f"]);
    assert!(text.contains("9 files"), "{text}");
    assert_eq!(files_with_ext(&d.join("f"), ".feat").len(), 9);
    assert_eq!(files_with_ext(&d.join("f"), ".vad.txt").len(), 9);

    let again = scd(d, &["preprocess", "--corpus", "c", "--out", "f"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(d, &["preprocess", "--corpus", "c", "--out", "f", "--force"]);
}

#[test]
fn corrupt_wav_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "c", "1", "2");
    let victim = files_with_ext(&d.join("c"), ".wav").remove(0);
    std::fs::write(&victim, b"not a wav at all").unwrap();
    let out = scd(d, &["preprocess", "--corpus", "c", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    let name = victim.file_name().unwrap().to_string_lossy().into_owned();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&name));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(scd(tmp.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(scd(tmp.path(), &["train"]).status.code(), Some(1));
    assert_eq!(scd(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "in", "1", "4");
    corpus_with(d, "cal", "2", "4", "6");
    corpus_with(d, "tst", "3", "4", "6");

    // flags win over the config file
    ok(d, &["init-config", "--out", "cfg.toml"]);
    let cfg = std::fs::read_to_string(d.join("cfg.toml")).unwrap();
    let cfg = cfg
        .replace("hidden = [200]", "hidden = [30]")
        .replace("cg_iters_per_stage = 200", "cg_iters_per_stage = 3");
    std::fs::write(d.join("cfg.toml"), cfg).unwrap();
    let trained = ok(
        d,
        &[
            "--config", "cfg.toml", "train", "--corpus", "in", "--model", "m.bin", "--hidden", "12",
        ],
    );
    assert!(trained.contains("[390, 12, 4]"), "{trained}");
    assert!(trained.contains("iters    3"), "{trained}");

    let table = ok(
        d,
        &[
            "--config", "cfg.toml", "evaluate", "--corpus", "in", "--model", "m.bin", "--csv", "eval.csv",
        ],
    );
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("frame%") && lines[0].contains("file%") && lines[0].contains("mean"));
    assert!(lines[1].starts_with("test"));
    assert_eq!(std::fs::read_to_string(d.join("eval.csv")).unwrap().lines().count(), 5);

    for k in ["0", "1"] {
        ok(
            d,
            &["synth", "--corpus", "cal", "--seed", k, "--out", &format!("cal{k}.wav")],
        );
        ok(
            d,
            &["synth", "--corpus", "tst", "--seed", k, "--out", &format!("tst{k}.wav")],
        );
    }
    assert!(d.join("cal0.changes.txt").exists());

    ok(
        d,
        &[
            "calibrate",
            "--model",
            "m.bin",
            "--conversations",
            "cal0.wav",
            "cal1.wav",
            "--out",
            "th.toml",
            "--interval",
            "0.5",
        ],
    );
    ok(
        d,
        &[
            "detect",
            "--model",
            "m.bin",
            "--threshold",
            "th.toml",
            "--conversation",
            "tst0.wav",
            "--out",
            "flags.csv",
        ],
    );
    let flags = std::fs::read_to_string(d.join("flags.csv")).unwrap();
    assert!(flags.starts_with("boundary_s,interval_s,distance,statistic,flag"));
    let scored = ok(
        d,
        &[
            "score",
            "--flags",
            "flags.csv",
            "--truth",
            "tst0.changes.txt",
            "--csv",
            "score.csv",
        ],
    );
    assert!(scored.contains("Pe%") && scored.contains("F1"));

    let report = ok(
        d,
        &[
            "report",
            "--model",
            "m.bin",
            "--calibration",
            "cal0.wav",
            "cal1.wav",
            "--test",
            "tst0.wav",
            "tst1.wav",
            "--csv",
            "rep.csv",
        ],
    );
    // one row per configured interval for each metric
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{report}");
    for interval in ["0.5s", "1s", "2s"] {
        assert_eq!(rows.iter().filter(|r| r.trim_start().starts_with(interval)).count(), 2);
    }
    assert_eq!(std::fs::read_to_string(d.join("rep.csv")).unwrap().lines().count(), 7);
}

#[test]
fn detect_without_threshold_hints_at_calibrate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "in", "1", "2");
    ok(
        d,
        &[
            "train", "--corpus", "in", "--model", "m.bin", "--hidden", "4", "--iters", "1",
        ],
    );
    ok(d, &["synth", "--corpus", "in", "--out", "c.wav"]);
    let out = scd(
        d,
        &[
            "detect",
            "--model",
            "m.bin",
            "--threshold",
            "missing.toml",
            "--conversation",
            "c.wav",
            "--out",
            "f.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scd calibrate"));
}

#[test]
fn model_from_other_features_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "in", "1", "2");
    ok(
        d,
        &[
            "train", "--corpus", "in", "--model", "m.bin", "--hidden", "4", "--iters", "1",
        ],
    );
    std::fs::write(d.join("other.toml"), "[mfcc]\nn_mels = 26\n").unwrap();
    let out = scd(
        d,
        &[
            "--config",
            "other.toml",
            "evaluate",
            "--corpus",
            "in",
            "--model",
            "m.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn training_from_dumps_matches_training_from_audio() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_corpus(d, "in", "1", "3");
    ok(d, &["preprocess", "--corpus", "in", "--out", "f"]);
    let args = ["--hidden", "6", "--iters", "4"];
    ok(
        d,
        &[&["train", "--corpus", "in", "--model", "a.bin"][..], &args].concat(),
    );
    ok(
        d,
        &[&["train", "--features", "f", "--model", "b.bin"][..], &args].concat(),
    );
    assert!(std::fs::read(d.join("a.bin")).unwrap() == std::fs::read(d.join("b.bin")).unwrap());
}
