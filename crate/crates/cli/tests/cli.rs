use std::path::Path;
use std::process::{Command, Output};

use eoq_core::eoq::EoqRecord;
use eoq_core::frame_io::FrameReader;
use eoq_core::pipeline::RunSummary;

fn eoq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eoq")).args(args).output().unwrap()
}

fn synth(dir: &Path) {
    let out = eoq(&[
        "synth",
        "--single-mph",
        "15",
        "--duration",
        "3",
        "--seed",
        "4",
        "--out-video",
        dir.join("v.eoqv").to_str().unwrap(),
        "--out-telemetry",
        dir.join("t.tel").to_str().unwrap(),
        "--out-truth",
        dir.join("truth.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_then_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = eoq(&[
        "--input",
        &p("v.eoqv"),
        "--telemetry",
        &p("t.tel"),
        "--warmup",
        "20",
        "--out-eoq",
        &p("eoq.jsonl"),
        "--out-report",
        &p("report.jsonl"),
        "--dump-masks",
        &p("masks.eoqv"),
        "--dump-tracks",
        &p("tracks.jsonl"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: RunSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary.frames, 72);
    assert!(summary.eoq_records > 0);

    let records: Vec<EoqRecord> = std::fs::read_to_string(p("eoq.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len() as u64, summary.eoq_records);
    assert!(records.iter().all(|r| r.frame >= 20 && (r.speed_mph - 15.0).abs() < 3.0));
    assert_eq!(std::fs::read_to_string(p("report.jsonl")).unwrap().lines().count(), 72);
    let masks = FrameReader::open(std::fs::File::open(p("masks.eoqv")).unwrap()).unwrap();
    assert_eq!(masks.count(), 72);
    assert!(!std::fs::read_to_string(p("tracks.jsonl")).unwrap().is_empty());
    assert!(!std::fs::read_to_string(p("truth.jsonl")).unwrap().is_empty());
}

#[test]
fn eoq_to_stdout_moves_summary_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = eoq(&["run", "--input", &p("v.eoqv"), "--telemetry", &p("t.tel"), "--out-eoq", "-", "--warmup", "20"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() > 0);
    for l in stdout.lines() {
        serde_json::from_str::<EoqRecord>(l).unwrap();
    }
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("\"eoq_records\""));
}

#[test]
fn setup_errors_exit_nonzero() {
    let out = eoq(&["--input", "/nonexistent/video.eoqv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/video.eoqv"));

    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let video = dir.path().join("v.eoqv");
    let out = eoq(&["--input", video.to_str().unwrap(), "--blur", "4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("blur"));

    let out = eoq(&["--input", "x", "--speed-threshold-mph", "20", "--posted-limit-mph", "60"]);
    assert_eq!(out.status.code(), Some(2));
    let out = eoq(&["--input", "x", "--direction", "up"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn not_a_frame_stream() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus");
    std::fs::write(&bogus, b"not a video at all, just text").unwrap();
    let out = eoq(&["--input", bogus.to_str().unwrap()]);
    assert!(!out.status.success());
}
