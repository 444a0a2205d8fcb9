use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ppc_core::manifest::Manifest;
use ppc_core::models::{Model, ModelSpec};
use ppc_core::projection::read_pano;
use ppc_core::tensor::Tensor;
use ppc_core::training::{InputMode, Trained};

fn ppc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppc"))
        .args(args)
        .env_remove("PPC_DATA_DIR")
        .output()
        .expect("run ppc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "ppc failed: {}", stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, per_category: usize, sets: usize) {
    ok(ppc(&[
        "synth",
        "--per-category",
        &per_category.to_string(),
        "--sets",
        &sets.to_string(),
        "--seed",
        "3",
        "--width",
        "64",
        "--height",
        "32",
        "--out",
        p(dir),
    ]));
}

const CLOUD: &str = "#meta max_range=100 n_channels=32 points_per_rev=2166
azimuth_rad,row,range_m,reflectance
0.0001,0,12.5,0.25
3.14159,31,99.75,1.0
6.2831,16,0.37,0.0
";

#[test]
fn convert_writes_both_modalities_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    fs::write(&csv, CLOUD).unwrap();
    let out = dir.path().join("pano");
    ok(ppc(&["convert", p(&csv), "--out", p(&out), "--width", "2166", "--height", "32"]));
    let depth = read_pano(out.join("scan.depth.pano")).unwrap();
    let refl = read_pano(out.join("scan.reflectance.pano")).unwrap();
    assert_eq!((depth.width, depth.height), (2166, 32));
    assert_eq!(depth.range_at(0, 0), 12.5);
    assert_eq!(depth.range_at(31, 1082), 99.75);
    assert_eq!(depth.range_at(16, 2165), 0.37);
    assert_eq!(refl.get(31, 1082), 1.0);
    assert_eq!(depth.pixels.iter().filter(|&&v| v != 0.0).count(), 3);

    ok(ppc(&["convert", p(&csv), "--out", p(&out)]));
    assert_eq!(read_pano(out.join("scan.depth.pano")).unwrap().width, 384);
}

#[test]
fn empty_cloud_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "azimuth_rad,row,range_m,reflectance\n").unwrap();
    let o = ppc(&["convert", p(&csv), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no points"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "azimuth_rad,row,range_m,reflectance\n0.1,2,5.0,0.5\n0.2,x,5.0,0.5\n").unwrap();
    let o = ppc(&["convert", p(&csv), "--out", p(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn synth_is_indexed_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 5, 2);
    synth(&b, 5, 2);
    let index = fs::read_to_string(a.join("index.csv")).unwrap();
    let rows: Vec<&str> = index.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);
    for row in &rows {
        let f: Vec<&str> = row.split(',').collect();
        assert!(f[0].starts_with(&format!("{}/", f[1])), "{row}");
        let bytes = fs::read(a.join(format!("{}.depth.pano", f[0]))).unwrap();
        assert_eq!(bytes, fs::read(b.join(format!("{}.depth.pano", f[0]))).unwrap());
    }
    assert_eq!(index, fs::read_to_string(b.join("index.csv")).unwrap());
    assert!(!ppc(&["synth", "--per-category", "1", "--sets", "1", "--out", p(dir.path())]).status.success());
}

#[test]
fn fusion_with_single_modality_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 2);
    for args in [
        vec!["--modality", "depth", "--fusion", "avg"],
        vec!["--modality", "both"],
        vec!["--model", "resnet"],
    ] {
        let mut full = vec!["train", "--data", p(dir.path()), "--out", p(dir.path())];
        full.extend(args);
        let o = ppc(&full);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
}

const TINY: [&str; 8] = ["--divisor", "16", "--epochs", "1", "--folds", "2", "--batch-size", "8"];

#[test]
fn crossval_writes_fold_rows_and_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, 2);
    let out = dir.path().join("cv");
    let mut args = vec!["crossval", "--out", p(&out), "--modality", "both", "--fusion", "late"];
    args.extend(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_ppc"))
        .args(&args)
        .env("PPC_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("folds.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("fold,accuracy,coast"));
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("1,") && rows[3].starts_with("mean,"));
    let m = Manifest::load(out.join("run.manifest")).unwrap();
    assert_eq!(m.get("fusion"), Some("late"));
    assert!(fs::read_to_string(out.join("confusion.csv")).unwrap().starts_with("truth,coast"));
}

#[test]
fn train_then_eval_agree_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, 2);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--fold", "1"];
        args.extend(TINY);
        ok(ppc(&args));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());

    let ev = dir.path().join("eval");
    ok(ppc(&["eval", "--data", p(&data), "--model-dir", p(&a), "--out", p(&ev), "--fold", "1", "--folds", "2"]));
    assert_eq!(fs::read_to_string(ev.join("metrics.csv")).unwrap(), metrics);
}

/// A model that answers `coast` whatever it sees.
fn coast_oracle(dir: &Path) {
    let spec = ModelSpec::new(1, true, true).with_divisor(16).with_input_size(32, 64);
    let mut model = Model::<f32>::build(spec, 0).unwrap();
    let fc2 = &mut model.head.fc2;
    fc2.weight.value = Tensor::zeros(fc2.weight.value.shape());
    fc2.bias.value = Tensor::from_fn(&[6], |i| if i == 0 { 10.0 } else { 0.0 });
    Trained::Single { mode: InputMode::Depth, model }.save(dir).unwrap();
}

fn coast_only(data: &Path) {
    let index = fs::read_to_string(data.join("index.csv")).unwrap();
    let kept: Vec<&str> = index.lines().filter(|l| l.starts_with("path") || l.contains(",coast,")).collect();
    fs::write(data.join("index.csv"), kept.join("\n") + "\n").unwrap();
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 2);
    coast_only(&data);
    let models = dir.path().join("oracle");
    coast_oracle(&models);
    let out = dir.path().join("eval");
    ok(ppc(&["eval", "--data", p(&data), "--model-dir", p(&models), "--out", p(&out)]));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("coast,1.000000") && metrics.ends_with("total,1.000000\n"), "{metrics}");

    let sweep = dir.path().join("sweep");
    ok(ppc(&["rotsweep", "--data", p(&data), "--model-dir", p(&models), "--out", p(&sweep), "--step", "90"]));
    let csv = fs::read_to_string(sweep.join("rotsweep.csv")).unwrap();
    let angles: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(angles, ["0", "90", "180", "270", "360"]);

    let cams = dir.path().join("cams");
    ok(ppc(&["gradcam", "--data", p(&data), "--model-dir", p(&models), "--out", p(&cams)]));
    let map = read_pano(cams.join("coast.cam.pano")).unwrap();
    assert_eq!((map.width, map.height), (64, 32));
    assert!(fs::read(cams.join("coast.pgm")).unwrap().starts_with(b"P5\n64 32\n255\n"));
    assert!(!cams.join("urban.pgm").exists());
}

#[test]
fn adaptive_fusion_trains_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, 2);
    let out = dir.path().join("adaptive");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--modality", "both", "--fusion", "adaptive"];
    args.extend(TINY);
    args.extend(["--gating-hidden", "8"]);
    ok(ppc(&args));
    assert!(out.join("gating.ckpt").exists());
    let ev = dir.path().join("eval");
    ok(ppc(&["eval", "--data", p(&data), "--model-dir", p(&out), "--out", p(&ev), "--fold", "0", "--folds", "2"]));
    assert_eq!(
        fs::read_to_string(ev.join("metrics.csv")).unwrap(),
        fs::read_to_string(out.join("metrics.csv")).unwrap()
    );
}
