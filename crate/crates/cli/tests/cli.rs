use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wpool::fixtures::{random_model, FixtureKind};
use wpool::model::{save_model, write_raw_tensor, Layer, LayerSpec, ModelGraph};
use wpool::Tensor;

fn wpool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wpool"))
        .current_dir(dir)
        .env_remove("WPOOL_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wpool(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Classifier fixture, compressed and calibrated on four inputs.
fn calibrated(dir: &Path) -> PathBuf {
    ok(dir, &["gen-fixture", "--kind", "classifier", "--seed", "3", "-o", "m.wpnn", "--inputs", "in", "--count", "4"]);
    ok(dir, &["compress", "m.wpnn", "-o", "m.wpnc", "--max-iter", "30"]);
    ok(dir, &["calibrate", "m.wpnc", "in"]);
    dir.join("m.wpnc")
}

fn cycles(stdout: &str) -> u64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("modeled_cycles "))
        .expect("cycle line")
        .parse()
        .unwrap()
}

#[test]
fn compress_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-fixture", "--kind", "classifier", "-o", "m.wpnn"]);
    ok(d, &["compress", "m.wpnn", "-o", "a.wpnc", "--max-iter", "20"]);
    ok(d, &["compress", "m.wpnn", "-o", "b.wpnc", "--max-iter", "20"]);
    assert_eq!(std::fs::read(d.join("a.wpnc")).unwrap(), std::fs::read(d.join("b.wpnc")).unwrap());

    let seeded = wpool(d, &["compress", "m.wpnn", "-o", "c.wpnc", "--max-iter", "20", "--seed", "9"]);
    assert!(seeded.status.success());
    let env = Command::new(env!("CARGO_BIN_EXE_wpool"))
        .current_dir(d)
        .env("WPOOL_SEED", "9")
        .args(["compress", "m.wpnn", "-o", "e.wpnc", "--max-iter", "20"])
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(std::fs::read(d.join("c.wpnc")).unwrap(), std::fs::read(d.join("e.wpnc")).unwrap());
    assert_ne!(std::fs::read(d.join("a.wpnc")).unwrap(), std::fs::read(d.join("c.wpnc")).unwrap());
}

#[test]
fn resnet14_report_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-fixture", "--kind", "resnet14", "-o", "r14.wpnn"]);
    ok(
        d,
        &["compress", "r14.wpnn", "-o", "r14.wpnc", "--pool-size", "64", "--group-size", "8", "--max-iter", "2", "--report", "r.json"],
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    let cr = report["compression_ratio"].as_f64().unwrap();
    assert!((cr / 7.55 - 1.0).abs() <= 0.10, "{cr}");
    assert_eq!(report["params"].as_u64().unwrap(), 2_729_664);
}

#[test]
fn pool_larger_than_distinct_vectors_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // second layer is built from just two distinct channel vectors
    let a = [1.0f32, 0.5, -0.25, 0.0, 2.0, 1.0, 0.0, -1.0];
    let b = [-1.0f32, 0.0, 0.75, 1.0, 0.0, -2.0, 1.0, 0.5];
    let w: Vec<f32> = (0..4).flat_map(|f| if f % 2 == 0 { a } else { b }).collect();
    let first = random_model([2, 2, 3], &[LayerSpec::conv(3, 8, 1, 1, 0)], 1).unwrap().layers.remove(0);
    let second = Layer::new(LayerSpec::conv(8, 4, 1, 1, 0), Tensor::new(vec![4, 1, 1, 8], w).unwrap(), None).unwrap();
    save_model(&ModelGraph::new([2, 2, 3], vec![first, second]).unwrap(), d.join("two.wpnn")).unwrap();
    let out = wpool(d, &["compress", "two.wpnn", "-o", "two.wpnc", "--pool-size", "3"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("distinct"));
    assert!(!d.join("two.wpnc").exists());
}

#[test]
fn fewer_bits_same_shape_fewer_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    let eight = ok(d, &["run", "m.wpnc", "in/input_0000.raw", "-o", "y8.raw", "--act-bits", "8"]);
    let four = ok(d, &["run", "m.wpnc", "in/input_0000.raw", "-o", "y4.raw", "--act-bits", "4"]);
    let y8 = wpool::model::read_raw_tensor(d.join("y8.raw")).unwrap();
    let y4 = wpool::model::read_raw_tensor(d.join("y4.raw")).unwrap();
    assert_eq!(y8.shape(), y4.shape());
    assert!(cycles(&four) < cycles(&eight));
}

#[test]
fn precompute_does_not_change_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    ok(d, &["run", "m.wpnc", "in/input_0001.raw", "-o", "on.raw", "--precompute", "on", "--stats", "s.json"]);
    ok(d, &["run", "m.wpnc", "in/input_0001.raw", "-o", "off.raw", "--precompute", "off", "--order", "weight", "--no-cache"]);
    assert_eq!(std::fs::read(d.join("on.raw")).unwrap(), std::fs::read(d.join("off.raw")).unwrap());
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    assert!(stats["total"]["lut_lookups"].as_u64().unwrap() > 0);
}

#[test]
fn small_board_forced_cache_is_a_capacity_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let specs = [LayerSpec::conv(3, 16, 3, 1, 1), LayerSpec::conv(16, 64, 3, 1, 1)];
    save_model(&random_model([24, 24, 3], &specs, 2).unwrap(), d.join("wide.wpnn")).unwrap();
    std::fs::create_dir(d.join("in")).unwrap();
    let x = Tensor::new(vec![24, 24, 3], (0..24 * 24 * 3).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    write_raw_tensor(&x, d.join("in/x.raw")).unwrap();
    ok(d, &["compress", "wide.wpnn", "-o", "wide.wpnc", "--pool-size", "16", "--max-iter", "10"]);
    ok(d, &["calibrate", "wide.wpnc", "in"]);
    ok(d, &["run", "wide.wpnc", "in/x.raw", "-o", "y.raw", "--board", "mc-small"]);
    let out = wpool(d, &["run", "wide.wpnc", "in/x.raw", "-o", "y.raw", "--board", "mc-small", "--force-cache"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
    ok(d, &["run", "wide.wpnc", "in/x.raw", "-o", "y.raw", "--board", "mc-large", "--force-cache"]);
}

#[test]
fn uncalibrated_run_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-fixture", "--kind", "classifier", "-o", "m.wpnn", "--inputs", "in", "--count", "1"]);
    ok(d, &["compress", "m.wpnn", "-o", "m.wpnc", "--max-iter", "5"]);
    let out = wpool(d, &["run", "m.wpnc", "in/input_0000.raw", "-o", "y.raw"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer 0"));
}

#[test]
fn bench_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bits = ok(d, &["bench", "--sweep", "bits=1..8", "--size", "8", "--csv", "bits.csv"]);
    let unity: Vec<&str> = bits.lines().filter(|l| l.split_whitespace().nth(2) == Some("8")).collect();
    assert_eq!(unity.len(), 2);
    assert!(unity.iter().all(|l| l.ends_with("1.000")));
    let csv = std::fs::read_to_string(d.join("bits.csv")).unwrap();
    assert!(csv.starts_with("series,filters,bits,modeled_cycles,speedup"));
    assert_eq!(csv.lines().count(), 1 + 16);

    let filters = ok(d, &["bench", "--sweep", "filters=32,64,128,192", "--size", "8", "--in-ch", "64"]);
    for series in ["baseline", "caching", "precompute+caching"] {
        assert_eq!(filters.lines().filter(|l| l.starts_with(&format!("{series} "))).count(), 4);
    }

    for bad in ["filters=", "bits=", "bits=8..1", "depth=3", "bits"] {
        assert_eq!(code(&wpool(d, &["bench", "--sweep", bad])), 1, "{bad}");
    }
    assert_eq!(code(&wpool(d, &["bench"])), 1);
    assert_eq!(code(&wpool(d, &["bench", "--sweep", "bits=1..8", "--no-cache", "--force-cache"])), 1);
}

#[test]
fn calibration_is_deterministic_and_bumps_revision() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-fixture", "--kind", "classifier", "-o", "m.wpnn", "--inputs", "in", "--count", "1"]);
    ok(d, &["compress", "m.wpnn", "-o", "m.wpnc", "--max-iter", "5"]);
    let first = ok(d, &["calibrate", "m.wpnc", "in", "-o", "a.wpnc"]);
    ok(d, &["calibrate", "m.wpnc", "in", "-o", "b.wpnc"]);
    assert!(first.contains("revision 1"));
    assert_eq!(std::fs::read(d.join("a.wpnc")).unwrap(), std::fs::read(d.join("b.wpnc")).unwrap());
    let again = ok(d, &["calibrate", "a.wpnc", "in", "-o", "c.wpnc"]);
    assert!(again.contains("revision 2"));

    std::fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(code(&wpool(d, &["calibrate", "m.wpnc", "empty"])), 2);
}

#[test]
fn outlier_calibration_clips_at_four_bits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = random_model([256, 256, 1], &[LayerSpec::conv(1, 8, 1, 1, 0), LayerSpec::conv(8, 8, 1, 1, 0)], 4).unwrap();
    save_model(&g, d.join("m.wpnn")).unwrap();
    ok(d, &["compress", "m.wpnn", "-o", "m.wpnc", "--pool-size", "4", "--max-iter", "5"]);
    std::fs::create_dir(d.join("in")).unwrap();
    let mut v: Vec<f32> = (0..256 * 256).map(|i| (i % 100) as f32 / 100.0).collect();
    v[10] = 99.0;
    write_raw_tensor(&Tensor::new(vec![256, 256, 1], v).unwrap(), d.join("in/x.raw")).unwrap();
    let out = ok(d, &["calibrate", "m.wpnc", "in", "--act-bits", "4"]);
    let hi: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("layer   0  range [0, "))
        .and_then(|r| r.strip_suffix(']'))
        .unwrap()
        .parse()
        .unwrap();
    assert!(hi < 2.0, "{hi}");
}

#[test]
fn gen_lut_and_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for kind in FixtureKind::ALL {
        if kind == FixtureKind::ResNet14 {
            continue;
        }
        ok(d, &["gen-fixture", "--kind", kind.name(), "-o", &format!("{}.wpnn", kind.name())]);
    }
    assert_eq!(code(&wpool(d, &["gen-fixture", "--kind", "lenet", "-o", "x.wpnn"])), 1);
    ok(d, &["compress", "classifier.wpnn", "-o", "c.wpnc", "--max-iter", "5"]);
    ok(d, &["gen-lut", "c.wpnc", "-o", "t.lut", "--lut-bits", "16", "--order", "weight"]);
    let lut = wpool::quant::decode_lut(&std::fs::read(d.join("t.lut")).unwrap()).unwrap();
    assert_eq!((lut.bits(), lut.pool_size(), lut.group_size()), (16, 64, 8));
    assert_eq!(code(&wpool(d, &["run", "missing.wpnc", "x.raw", "-o", "y.raw"])), 2);
}
