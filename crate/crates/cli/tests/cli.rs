use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tactile_cli::error::{EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_MODE_MISMATCH, EXIT_SOLVER};
use tactile_core::metrics::MetricsReport;

const SMALL: &str = r#"{
  "seed": 5,
  "surface": {"shape": {"kind": "sphere_cap", "radius": 30.0, "apex_height": 0.0}, "width": 64, "height": 48, "pixel_pitch": 0.25},
  "camera": {"fx": 200.0, "fy": 200.0},
  "probe": {"n_samples": 5, "test_fraction": 0.4},
  "train": {"epochs": 4, "batch_size": 256, "hidden_width": 16, "dropout_rate": 0.0,
            "encoding": {"n_frequencies": 0, "include_raw": true}}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tactile3d"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Temp dir holding `config.json`, with a dataset and both PSNN modes already built under `out/`.
fn workspace(config: &str, with_models: bool) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("config.json"), config).unwrap();
    ok(tmp.path(), &["gen-dataset", "--config", "config.json", "--out", "out"]);
    if with_models {
        ok(tmp.path(), &["train", "--config", "config.json", "--out", "out"]);
        ok(tmp.path(), &["train", "--config", "config.json", "--out", "out", "--channel-mode", "rgb"]);
        ok(tmp.path(), &["build-lut", "--config", "config.json", "--out", "out", "--channel-mode", "rgb"]);
    }
    tmp
}

fn sidecar(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn gen_dataset_writes_every_sample() {
    let ws = workspace(SMALL, false);
    let dir = ws.path().join("out/dataset");
    let mut names: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["metadata.json", "sample_000.tras", "sample_001.tras", "sample_002.tras", "sample_003.tras", "sample_004.tras"]);
}

#[test]
fn train_writes_mode_sized_models() {
    let ws = workspace(SMALL, true);
    let out = ws.path().join("out");
    // six or three intensities plus two raw coordinates
    assert_eq!(sidecar(out.join("psnn_rgbnir.bin.json"))["layer_widths"][0], 8);
    assert_eq!(sidecar(out.join("psnn_rgb.bin.json"))["layer_widths"][0], 5);
    let hist = sidecar(out.join("psnn_rgbnir_history.json"));
    assert_eq!(hist["epoch_losses"].as_array().unwrap().len(), 4);
}

#[test]
fn reconstruct_outputs_and_prior_modes() {
    let ws = workspace(SMALL, true);
    let p = ws.path();
    let args = ["reconstruct", "--config", "config.json", "--estimator", "out/psnn_rgbnir.bin", "--dataset", "out/dataset", "--sample", "1"];
    ok(p, &[&args[..], &["--out", "edges"]].concat());
    ok(p, &[&args[..], &["--out", "free", "--prior", "none"]].concat());
    let mut names: Vec<String> = fs::read_dir(p.join("edges/reconstruct")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["cloud.ply", "depth.png", "depth.tras", "gradient.png", "normals.png"]);
    let a = fs::read(p.join("edges/reconstruct/depth.tras")).unwrap();
    let b = fs::read(p.join("free/reconstruct/depth.tras")).unwrap();
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b, "the edge prior must change the depth on a curved surface");

    // a dataset sample file doubles as a frame raster
    ok(p, &["reconstruct", "--config", "config.json", "--estimator", "out/lut_rgb.bin", "--frame", "out/dataset/sample_001.tras", "--out", "lut"]);
    ok(p, &["export-ply", "--config", "config.json", "--input", "lut/reconstruct/depth.tras", "--out", "lut"]);
    let ply = fs::read_to_string(p.join("lut/depth.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\nelement vertex 3072\n"));
    // the raster stores f32, so coordinates agree to float precision only
    let coords = |text: &str| -> Vec<f64> {
        text.split("end_header\n").nth(1).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect()
    };
    let (a, b) = (coords(&ply), coords(&fs::read_to_string(p.join("lut/reconstruct/cloud.ply")).unwrap()));
    assert_eq!(a.len(), 3 * 3072);
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 2e-6 * (1.0 + y.abs())));
}

#[test]
fn eval_reports_are_reproducible() {
    let ws = workspace(SMALL, true);
    let p = ws.path();
    let args = [
        "eval", "--config", "config.json", "--dataset", "out/dataset",
        "--estimator", "out/psnn_rgbnir.bin", "--estimator", "out/psnn_rgb.bin", "--estimator", "out/lut_rgb.bin",
    ];
    ok(p, &[&args[..], &["--out", "e1"]].concat());
    ok(p, &[&args[..], &["--estimator", "out/psnn_rgb.bin", "--out", "e2"]].concat());
    let read = |d: &str| -> MetricsReport {
        let mut r: MetricsReport = serde_json::from_slice(&fs::read(p.join(d).join("metrics.json")).unwrap()).unwrap();
        r.runtimes.clear();
        r
    };
    let (r1, r2) = (read("e1"), read("e2"));
    assert_eq!(r1.gradients.len(), 3);
    assert_eq!(r2.gradients.len(), 4);
    assert_eq!(r1.depth.len(), 9);
    assert_eq!(r1.test_samples, 2);
    assert_eq!(r1.gradients[..], r2.gradients[..3]);
    assert_eq!(r1.depth[..], r2.depth[..9]);
    for g in &r1.gradients {
        assert!((g.total - (g.gx + g.gy)).abs() <= 1e-12);
    }
    let table = fs::read_to_string(p.join("e1/metrics.txt")).unwrap();
    assert!(table.contains("lut_rgb/cad-edges"));
}

#[test]
fn plot_writes_inspection_images() {
    let ws = workspace(SMALL, false);
    ok(ws.path(), &["plot", "--config", "config.json", "--out", "out", "--sample", "0"]);
    assert_eq!(fs::read_dir(ws.path().join("out/plot")).unwrap().count(), 8);
}

#[test]
fn error_exit_codes() {
    let ws = workspace(SMALL, true);
    let p = ws.path();

    fs::write(p.join("zero.json"), r#"{"probe": {"n_samples": 0}}"#).unwrap();
    assert_eq!(code(&run(p, &["gen-dataset", "--config", "zero.json", "--out", "z"])), EXIT_CONFIG);

    fs::write(p.join("typo.json"), r#"{"integration": {"band_widht": 3}}"#).unwrap();
    let out = run(p, &["gen-dataset", "--config", "typo.json"]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&out.stderr).contains("band_widht"));

    assert_eq!(code(&run(p, &["train", "--config", "config.json", "--dataset", "nowhere"])), EXIT_IO);
    assert_eq!(code(&run(p, &["gen-dataset", "--config", "missing.json"])), EXIT_IO);

    let bad = p.join("out/broken.bin");
    let mut bytes = fs::read(p.join("out/psnn_rgbnir.bin")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&bad, bytes).unwrap();
    fs::copy(p.join("out/psnn_rgbnir.bin.json"), p.join("out/broken.bin.json")).unwrap();
    let args = ["reconstruct", "--config", "config.json", "--out", "out", "--sample", "1", "--estimator"];
    assert_eq!(code(&run(p, &[&args[..], &["out/broken.bin"]].concat())), EXIT_FORMAT);
    fs::write(p.join("out/garbage.bin"), b"hello").unwrap();
    assert_eq!(code(&run(p, &[&args[..], &["out/garbage.bin"]].concat())), EXIT_FORMAT);

    let mismatch = run(p, &[&args[..], &["out/psnn_rgb.bin", "--channel-mode", "rgbnir"]].concat());
    assert_eq!(code(&mismatch), EXIT_MODE_MISMATCH);

    fs::write(
        p.join("cg.json"),
        SMALL.replacen("\"seed\": 5,", r#""seed": 5, "integration": {"solver": {"method": "conjugate_gradient", "max_iterations": 2}},"#, 1),
    )
    .unwrap();
    let out = run(p, &["reconstruct", "--config", "cg.json", "--out", "out", "--sample", "1", "--estimator", "out/lut_rgb.bin"]);
    assert_eq!(code(&out), EXIT_SOLVER, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::write(p.join("config.json"), SMALL).unwrap();
    ok(p, &["gen-dataset", "--config", "config.json", "--out", "a"]);
    ok(p, &["gen-dataset", "--config", "config.json", "--out", "b", "--seed", "5"]);
    ok(p, &["gen-dataset", "--config", "config.json", "--out", "c", "--seed", "6"]);
    let f = |d: &str| fs::read(p.join(d).join("dataset/sample_000.tras")).unwrap();
    assert_eq!(f("a"), f("b"));
    assert_ne!(f("a"), f("c"));
}
