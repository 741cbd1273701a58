//! End-to-end runs of the `nfseg` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nfseg_core::mrf::EnergyBreakdown;
use nfseg_core::pipeline::write_results;
use nfseg_core::{AffineMotionModel, BBox, Labeling, NormalFlowObservation, SegmentationResult, Window};

const SCENE: &str = "\
width = 160
height = 120
background = 1 0 0.5 0.3
object = box 30 30 70 70 model 1 0 6 0
noise = moderate
windows = 3
window_duration = 0.01
samples_per_source = 900
";

fn nfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfseg")).args(args).output().expect("nfseg runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config/default.cfg")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Writes `SCENE` (with `extra` lines appended) and synthesizes it into `out`.
fn synth(dir: &Path, extra: &str, out: &Path) -> Output {
    let spec = dir.join("scene.spec");
    fs::write(&spec, format!("{SCENE}{extra}")).unwrap();
    nfseg(&["synth", "--spec", s(&spec), "--out", s(out), "--seed", "4"])
}

/// Relative path to contents for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn metric(report: &Path, name: &str) -> f64 {
    let text = fs::read_to_string(report).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{name},"))).expect("metric present");
    line.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn synth_segment_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let out = synth(dir.path(), "", &gt);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["flow.txt", "gt_sidecar.csv", "gt_boxes.csv", "manifest"] {
        assert!(gt.join(name).is_file(), "{name} missing");
    }

    let seg = dir.path().join("seg");
    let out = nfseg(&["segment", "--input", s(&gt.join("flow.txt")), "--config", s(&config()), "--out", s(&seg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let results = fs::read_to_string(seg.join("results.nfseg-result")).unwrap();
    assert_eq!(results.lines().filter(|l| l.starts_with("window ")).count(), 3);
    assert_eq!(fs::read_dir(seg.join("images")).unwrap().count(), 9);
    let manifest = fs::read_to_string(seg.join("manifest")).unwrap();
    assert!(manifest.contains("windows = 3"), "{manifest}");

    let ev = dir.path().join("eval");
    let out = nfseg(&[
        "eval",
        "--results",
        s(&seg.join("results.nfseg-result")),
        "--gt-sidecar",
        s(&gt.join("gt_sidecar.csv")),
        "--gt-boxes",
        s(&gt.join("gt_boxes.csv")),
        "--gt-masks",
        s(&gt.join("masks")),
        "--out",
        s(&ev),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = ev.join("metrics.csv");
    let acc = metric(&report, "clustering_accuracy");
    assert!(acc >= 0.95, "accuracy {acc}");
    assert!((0.0..=1.0).contains(&metric(&report, "detection_rate")));
    assert!((0.0..=1.0).contains(&metric(&report, "iou")));
}

#[test]
fn segment_outputs_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    assert!(synth(dir.path(), "", &gt).status.success());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = nfseg(&["segment", "--input", s(&gt.join("flow.txt")), "--config", s(&config()), "--out", s(&out_dir)]);
        assert!(out.status.success(), "{}", stderr(&out));
        let mut files = tree(&out_dir);
        files.remove(Path::new("manifest"));
        files
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn malformed_record_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("# nfseg-flow v1 width=64 height=48\n");
    for k in 1..=30 {
        if k == 17 {
            text.push_str("0.0017,3,oops,10,0\n");
        } else {
            text.push_str(&format!("{},{},{},100,0\n", k as f64 * 1e-4, k % 60, k % 40));
        }
    }
    let flow = dir.path().join("bad.txt");
    fs::write(&flow, text).unwrap();
    let out = nfseg(&["segment", "--input", s(&flow), "--config", s(&config()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("record 17"), "{}", stderr(&out));
}

#[test]
fn missing_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config()).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|l| !l.starts_with("lambda_M"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("partial.cfg");
    fs::write(&cfg, trimmed).unwrap();
    let gt = dir.path().join("gt");
    assert!(synth(dir.path(), "", &gt).status.success());
    let flow = gt.join("flow.txt");

    let out = nfseg(&["segment", "--input", s(&flow), "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda_M"), "{}", stderr(&out));

    let out = nfseg(&["bench", "--input", s(&flow), "--config", s(&cfg), "--reps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(dir.path(), "format = binary\n", &a).status.success());
    assert!(synth(dir.path(), "format = binary\n", &b).status.success());
    let (mut ta, mut tb) = (tree(&a), tree(&b));
    ta.remove(Path::new("manifest"));
    tb.remove(Path::new("manifest"));
    assert!(ta.contains_key(Path::new("flow.bin")));
    assert_eq!(ta, tb);
}

#[test]
fn background_only_spec_gives_flow() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bg.spec");
    fs::write(&spec, "width = 40\nheight = 30\nbackground = 1 0 2 1\nsamples_per_source = 100\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = nfseg(&["synth", "--spec", s(&spec), "--out", s(&out_dir), "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let flow = fs::read_to_string(out_dir.join("flow.txt")).unwrap();
    assert!(flow.lines().count() > 1);
}

#[test]
fn zero_area_object_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), "object = box 80 80 80 90 model 1 0 1 0\n", &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no lattice points"), "{}", stderr(&out));
}

/// One window whose only moving label covers a 10x10 block.
fn block_result(dir: &Path) -> PathBuf {
    let mut window = Window::new(0.0, 0.01, 100, 100);
    let mut labels = Vec::new();
    let mut k = 0;
    for y in (0..100).step_by(5) {
        for x in (0..100).step_by(5) {
            window.observations.push(NormalFlowObservation::new(k as f64 * 1e-6, x as f64, y as f64, 1.0, 0.0));
            labels.push(1);
            k += 1;
        }
    }
    for y in 40..50 {
        for x in 40..50 {
            if x % 5 != 0 || y % 5 != 0 {
                window.observations.push(NormalFlowObservation::new(k as f64 * 1e-6, x as f64, y as f64, 5.0, 0.0));
                labels.push(2);
                k += 1;
            }
        }
    }
    let result = SegmentationResult {
        labeling: Labeling::new(labels),
        models: [(1, AffineMotionModel::translation(1.0, 0.0)), (2, AffineMotionModel::translation(5.0, 0.0))].into(),
        background_label: 1,
        imo_boxes: vec![(2, BBox::new(40.0, 40.0, 50.0, 50.0))],
        final_energy: EnergyBreakdown::new(0.0, 0.0, 0.0),
        energy_trace: Vec::new(),
        iterations: 1,
    };
    let path = dir.join("block.nfseg-result");
    let mut bytes = Vec::new();
    write_results(&mut bytes, [(0, &window, Some(&result))]).unwrap();
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn perfect_boxes_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let results = block_result(dir.path());
    let boxes = dir.path().join("boxes.csv");
    fs::write(&boxes, "t,object_id,x_min,y_min,x_max,y_max\n0.005,1,40,40,50,50\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = nfseg(&["eval", "--results", s(&results), "--gt-boxes", s(&boxes), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(metric(&out_dir.join("metrics.csv"), "detection_rate"), 1.0);
}

#[test]
fn empty_ground_truth_fails() {
    let dir = tempfile::tempdir().unwrap();
    let results = block_result(dir.path());
    let boxes = dir.path().join("boxes.csv");
    fs::write(&boxes, "t,object_id,x_min,y_min,x_max,y_max\n").unwrap();
    let out = nfseg(&["eval", "--results", s(&results), "--gt-boxes", s(&boxes), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = nfseg(&["eval", "--results", s(&results), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_prints_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    assert!(synth(dir.path(), "", &gt).status.success());
    let out = nfseg(&["bench", "--input", s(&gt.join("flow.txt")), "--config", s(&config()), "--reps", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 4, "{stdout}");
    for (row, name) in rows.iter().zip(["Pre-processing", "Initialization", "Labeling & Fitting", "Subtotal"]) {
        assert!(row.starts_with(name) && row.ends_with(" ms"), "{row}");
    }
}
