use std::path::Path;
use std::process::{Command, Output};

use cvs_core::container::MeasurementSet;
use cvs_core::pipeline::DECODE_CSV_HEADER;
use cvs_core::video::{load_sequence, VideoFormat};

fn cvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvs"))
        .args(args)
        .env("CVS_THREADS", "1")
        .output()
        .expect("spawn cvs")
}

fn ok(args: &[&str]) -> Output {
    let out = cvs(args);
    assert!(
        out.status.success(),
        "cvs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("scene.y4m");
    let container = dir.path().join("scene.cvsm");
    let decoded = dir.path().join("decoded.raw");
    let csv = dir.path().join("frames.csv");

    ok(&["synth", "--size", "32", "--frames", "5", "--out", p(&video)]);
    ok(&[
        "encode",
        "--in",
        p(&video),
        "--out",
        p(&container),
        "--block",
        "16",
        "--gop",
        "5",
    ]);
    let set = MeasurementSet::load(&container).unwrap();
    assert_eq!(set.header.rows, 32);
    assert_eq!(set.header.frame_count, 5);

    let out = ok(&[
        "decode",
        "--in",
        p(&container),
        "--ref",
        p(&video),
        "--out",
        p(&decoded),
        "--csv",
        p(&csv),
        "--kmax",
        "2",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean PSNR"));

    let seq = load_sequence(&decoded, VideoFormat::Raw8, Some(32), Some(32), None).unwrap();
    assert_eq!(seq.frame_count(), 5);

    let report = std::fs::read_to_string(&csv).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some(DECODE_CSV_HEADER));
    let roles: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(roles, ["K", "N", "N", "N", "N"]);
}

#[test]
fn malformed_container_exits_with_format_code() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.cvsm");
    std::fs::write(&bogus, b"not a container").unwrap();
    let out = cvs(&[
        "decode",
        "--in",
        p(&bogus),
        "--out",
        p(&dir.path().join("x.raw")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));
}

#[test]
fn block_size_must_tile_frame() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvs(&[
        "encode",
        "--synthetic",
        "moving",
        "--synth-size",
        "40",
        "--synth-frames",
        "2",
        "--block",
        "16",
        "--out",
        p(&dir.path().join("x.cvsm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvs(&[
        "decode",
        "--in",
        p(&dir.path().join("absent.cvsm")),
        "--out",
        p(&dir.path().join("x.raw")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_cvs"))
        .args(["synth", "--out", "/dev/null"])
        .env("CVS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dict_compare_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cmp.csv");
    ok(&[
        "dict-compare",
        "--synthetic",
        "static",
        "--synth-size",
        "32",
        "--synth-frames",
        "1",
        "--frame-index",
        "0",
        "--iterations",
        "2",
        "--block",
        "16",
        "--out",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    // header plus two iterations for each of three methods
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}
