mod common;

use std::path::Path;
use std::process::{Command, Output};

use evdeblur::edi::synthesize_blur;
use evdeblur::metrics::{total_loss, LossWeights, MetricOptions};
use evdeblur::representations::{decode_voxel, NormalizedPointCloud};
use evdeblur::{write_events, EventFormat, EventStream, IntensityImage};
use serde_json::Value;

fn evdb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn evdb_env(args: &[&str], cwd: &Path, key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdb"))
        .args(args)
        .env(key, val)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_stream(dir: &Path, name: &str, s: &EventStream) {
    std::fs::write(dir.join(name), write_events(s, EventFormat::Text)).unwrap();
}

#[test]
fn missing_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = evdb(&["convert", "absent.txt", "--points", "p.pcb"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
    assert_eq!(evdb(&["convert"], dir.path()).status.code(), Some(2));
    assert_eq!(evdb(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(evdb(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn malformed_events_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "# 4 4 0 100\n10 1 1 3\n").unwrap();
    let out = evdb(&["convert", "bad.txt", "--points", "p.pcb"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("p.pcb").exists());
}

#[test]
fn convert_defaults_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(1);
    let s = common::clustered_stream(&mut r, 80, 40, 3000);
    write_stream(dir.path(), "ev.txt", &s);
    let report = json(&evdb(
        &["convert", "ev.txt", "--voxel", "v.vox", "--upscale", "160", "320", "--points", "p.pcb"],
        dir.path(),
    ));
    assert_eq!(report["points"]["bins"], 30);
    assert_eq!(report["points"]["per_bin"], 1024);
    let vox = decode_voxel(&std::fs::read(dir.path().join("v.vox")).unwrap()).unwrap();
    assert_eq!((vox.bins, vox.height, vox.width), (30, 160, 320));
    let pc = NormalizedPointCloud::from_bytes(&std::fs::read(dir.path().join("p.pcb")).unwrap()).unwrap();
    assert_eq!(pc.points.len(), 30 * 1024);
    assert!(pc.points.iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn edi_without_events_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = EventStream::empty(20, 12, 0, 1000).unwrap();
    write_stream(dir.path(), "ev.txt", &s);
    let img = IntensityImage::from_fn(20, 12, |x, y| 0.1 + 0.04 * (x + y) as f64).unwrap();
    std::fs::write(dir.path().join("b.imgf"), img.to_imgf().unwrap()).unwrap();
    json(&evdb(&["edi", "b.imgf", "ev.txt", "-o", "s.imgf"], dir.path()));
    let back = IntensityImage::decode(&std::fs::read(dir.path().join("s.imgf")).unwrap()).unwrap();
    assert_eq!(back, IntensityImage::decode(&img.to_imgf().unwrap()).unwrap());
}

#[test]
fn edi_round_trip_and_study() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, s) = common::smooth_fixture();
    std::fs::write(dir.path().join("ev.bin"), write_events(&s, EventFormat::Binary)).unwrap();
    let blurry = synthesize_blur(&sharp, &s, 0.2, 4096).unwrap();
    std::fs::write(dir.path().join("b.imgf"), blurry.to_imgf().unwrap()).unwrap();
    std::fs::write(dir.path().join("gt.imgf"), sharp.to_imgf().unwrap()).unwrap();
    let report = json(&evdb(
        &[
            "edi", "b.imgf", "ev.bin", "-o", "s.imgf", "--steps", "4096", "--c", "0.2", "--ground-truth", "gt.imgf",
            "--study", "64,128,256,512",
        ],
        dir.path(),
    ));
    assert!(report["metrics"]["psnr"].as_f64().unwrap() > 40.0);
    let rows = report["study"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[0]["ratio"].is_null());
    assert!(rows[1..].iter().all(|r| r["ratio"].as_f64().unwrap() > 1.0));

    let out = evdb(&["edi", "b.imgf", "ev.bin", "-o", "s.imgf", "--study", "64,128"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn edi_shape_mismatch_unless_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(2);
    let s = common::clustered_stream(&mut r, 16, 8, 200);
    write_stream(dir.path(), "ev.txt", &s);
    let big = IntensityImage::filled(32, 16, 0.5).unwrap();
    std::fs::write(dir.path().join("b.pgm"), big.to_pgm()).unwrap();
    let out = evdb(&["edi", "b.pgm", "ev.txt", "-o", "s.pgm"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    json(&evdb(&["edi", "b.pgm", "ev.txt", "-o", "s.pgm", "--gamma", "2"], dir.path()));
    let sharp = IntensityImage::decode(&std::fs::read(dir.path().join("s.pgm")).unwrap()).unwrap();
    assert_eq!((sharp.width(), sharp.height()), (32, 16));
}

#[test]
fn metrics_identical_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = IntensityImage::from_fn(32, 24, |x, y| ((x * 3 + y * 7) % 11) as f64 / 10.0).unwrap();
    let b = IntensityImage::from_fn(32, 24, |x, y| ((x * 5 + y * 2) % 13) as f64 / 12.0).unwrap();
    std::fs::write(dir.path().join("a.imgf"), a.to_imgf().unwrap()).unwrap();
    std::fs::write(dir.path().join("b.imgf"), b.to_imgf().unwrap()).unwrap();
    let same = json(&evdb(&["metrics", "a.imgf", "a.imgf"], dir.path()));
    assert!(same["psnr"].is_null());
    assert_eq!(same["ssim"], 1.0);
    assert_eq!(same["total"], 0.0);

    let out = evdb(&["metrics", "a.imgf", "b.imgf"], dir.path());
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let keys: Vec<usize> = ["psnr", "ssim", "l1", "ssim_loss", "msfr", "total"]
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap())
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    let cli = json(&out);
    let (a, b) = (
        IntensityImage::decode(&a.to_imgf().unwrap()).unwrap(),
        IntensityImage::decode(&b.to_imgf().unwrap()).unwrap(),
    );
    let lib = total_loss(&a, &b, &LossWeights::default(), &MetricOptions::default()).unwrap();
    assert_eq!(cli["total"].as_f64().unwrap(), lib.total);
    assert_eq!(cli["psnr"].as_f64().unwrap(), lib.psnr);

    let mismatch = IntensityImage::filled(16, 16, 0.5).unwrap();
    std::fs::write(dir.path().join("c.imgf"), mismatch.to_imgf().unwrap()).unwrap();
    assert_eq!(evdb(&["metrics", "a.imgf", "c.imgf"], dir.path()).status.code(), Some(1));
    assert_eq!(evdb(&["metrics", "a.imgf", "b.imgf", "--weights", "1,2"], dir.path()).status.code(), Some(2));
}

#[test]
fn crop_empty_stream_falls_back_to_origin() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(dir.path(), "ev.txt", &EventStream::empty(640, 640, 0, 10).unwrap());
    let report = json(&evdb(&["crop", "ev.txt"], dir.path()));
    assert_eq!(report["window"]["x0"], 0);
    assert_eq!(report["window"]["y0"], 0);
    assert_eq!(report["window"]["side"], 512);
    assert_eq!(report["cell"], serde_json::json!([0, 0]));
    let out = evdb(&["crop", "ev.txt", "--side", "700"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diffuse_writes_dumps_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(3);
    let s = common::clustered_stream(&mut r, 64, 32, 2000);
    write_stream(dir.path(), "ev.txt", &s);
    json(&evdb(&["convert", "ev.txt", "--points", "p.pcb", "--bins", "4", "--per-bin", "48"], dir.path()));
    let args = [
        "diffuse", "p.pcb", "--random-weights", "1", "--channels", "6", "--hidden", "5", "--depth", "2", "--target", "12",
        "20", "--group-count", "10", "--neighbors", "6", "--out-dir", "out",
    ];
    let summary = json(&evdb(&args, dir.path()));
    let range = summary["range"].as_f64().unwrap();
    assert!(range > 0.0 && range < 5.0);
    assert!(summary["mass_mapped"].is_number() && summary["mass_diffused"].is_number());
    for f in ["mapped.fmap", "diffused.fmap", "fused.fmap", "summary.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let out = evdb(&["diffuse", "p.pcb", "--target", "12", "20", "--out-dir", "o2"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("w.bin"), b"MTGW1\x02\x00\x00\x00{}").unwrap();
    let out = evdb(&["diffuse", "p.pcb", "--weights", "w.bin", "--out-dir", "o3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(4);
    let s = common::clustered_stream(&mut r, 32, 32, 500);
    write_stream(dir.path(), "ev.txt", &s);
    std::fs::write(dir.path().join("run.toml"), "seed = 5\n[convert]\nbins = 3\nper_bin = 10\n").unwrap();
    let report = json(&evdb(&["--config", "run.toml", "convert", "ev.txt", "--points", "a.pcb"], dir.path()));
    assert_eq!(report["points"]["bins"], 3);
    let report = json(&evdb(
        &["convert", "ev.txt", "--points", "b.pcb", "--config", "run.toml", "--bins", "4"],
        dir.path(),
    ));
    assert_eq!(report["points"]["bins"], 4);
    json(&evdb(&["convert", "ev.txt", "--points", "c.pcb", "--bins", "3", "--per-bin", "10", "--seed", "5"], dir.path()));
    assert_eq!(
        std::fs::read(dir.path().join("a.pcb")).unwrap(),
        std::fs::read(dir.path().join("c.pcb")).unwrap()
    );
}

#[test]
fn thread_env_is_validated_and_harmless() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(5);
    let s = common::clustered_stream(&mut r, 32, 32, 800);
    write_stream(dir.path(), "ev.txt", &s);
    let args = ["convert", "ev.txt", "--points", "p.pcb", "--bins", "5", "--per-bin", "40"];
    assert_eq!(evdb_env(&args, dir.path(), "EVDB_THREADS", "zero").status.code(), Some(2));
    json(&evdb_env(&args, dir.path(), "EVDB_THREADS", "1"));
    let one = std::fs::read(dir.path().join("p.pcb")).unwrap();
    json(&evdb_env(&args, dir.path(), "EVDB_THREADS", "4"));
    assert_eq!(std::fs::read(dir.path().join("p.pcb")).unwrap(), one);
}
