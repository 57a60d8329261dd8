use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gauss_digits::io;
use gauss_digits::source::{export_procedural, ProceduralDigits};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_gauss-digits");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("GAUSS_DIGITS_SOURCE_DIR")
        .output()
        .expect("run gauss-digits")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path) {
    let out = run(&[
        "generate",
        "--procedural",
        "--out-dir",
        p(dir),
        "--seed",
        "6",
        "--train-per-class",
        "4",
        "--test-per-class",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn hashes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), Sha256::digest(fs::read(&f).unwrap()).to_vec()))
        .collect();
    v.sort();
    v
}

#[test]
fn help_matches_snapshots() {
    let snapshots = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let cases: [(&[&str], &str); 5] = [
        (&["--help"], "help.txt"),
        (&["generate", "--help"], "generate-help.txt"),
        (&["verify", "--help"], "verify-help.txt"),
        (&["preview", "--help"], "preview-help.txt"),
        (&["masks", "--help"], "masks-help.txt"),
    ];
    for (args, file) in cases {
        let out = run(args);
        assert_eq!(code(&out), 0);
        let expected = fs::read_to_string(snapshots.join(file)).unwrap();
        assert_eq!(String::from_utf8_lossy(&out.stdout), expected, "{file} is out of date");
    }
}

#[test]
fn every_option_has_a_default_or_is_required() {
    let text = String::from_utf8(run(&["generate", "--help"]).stdout).unwrap();
    for flag in [
        "--seed", "--train-per-class", "--test-per-class", "--classes", "--variance", "--binarize",
        "--polarity", "--crop", "--edge-mode", "--canny-sigma", "--canny-low", "--canny-high", "--jobs",
    ] {
        let line = text.lines().position(|l| l.trim_start().starts_with(flag)).unwrap_or_else(|| panic!("{flag}"));
        assert!(text.lines().nth(line + 1).unwrap().contains("[default:"), "{flag} lacks a default");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["generate", "--procedural", "--out-dir", "x", "--binarize", "fixed:300"])), 1);
    assert_eq!(code(&run(&["generate", "--procedural", "--out-dir", "x", "--canny-low", "0.5", "--canny-high", "0.2"])), 1);
    assert_eq!(code(&run(&["generate", "--out-dir", "x"])), 1);
    assert_eq!(code(&run(&["generate", "--procedural", "--out-dir", "x", "--classes", "3,12"])), 1);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn generate_from_a_source_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("by_class");
    export_procedural(&ProceduralDigits::new(9, 14), &src, &(0..10).collect::<Vec<_>>()).unwrap();
    let out_dir = tmp.path().join("out");
    let args = [
        "generate", "--source-dir", p(&src), "--out-dir", p(&out_dir), "--seed", "42",
        "--train-per-class", "10", "--test-per-class", "2",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let train = io::read_idx_labels(&out_dir.join(io::TRAIN_LABELS)).unwrap();
    let test = io::read_idx_labels(&out_dir.join(io::TEST_LABELS)).unwrap();
    assert_eq!(train.len() + test.len(), 120);
    assert!((0..10).all(|c| train.iter().filter(|&&l| l == c).count() == 10));

    let first = hashes(&out_dir);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(hashes(&out_dir), first);
}

#[test]
fn source_dir_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("by_class");
    export_procedural(&ProceduralDigits::new(1, 3), &src, &[4]).unwrap();
    let out_dir = tmp.path().join("out");
    let out = Command::new(BIN)
        .args(["generate", "--out-dir", p(&out_dir), "--classes", "4", "--train-per-class", "2", "--test-per-class", "1"])
        .env("GAUSS_DIGITS_SOURCE_DIR", &src)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn missing_source_dir_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-archive");
    let out = run(&["generate", "--source-dir", p(&missing), "--out-dir", p(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no-such-archive"));
}

#[test]
fn too_few_sources_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("by_class");
    export_procedural(&ProceduralDigits::new(1, 2), &src, &[0]).unwrap();
    let out = run(&[
        "generate", "--source-dir", p(&src), "--out-dir", p(&tmp.path().join("o")), "--classes", "0",
        "--train-per-class", "5", "--test-per-class", "0",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_passes_on_a_fresh_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let out = run(&["verify", "--dataset", p(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS  permutation audit"));
    assert!(stdout.contains("SKIP  stationarity"));
    assert!(tmp.path().join("verification.json").exists());
    let csv = fs::read_to_string(tmp.path().join("verification.csv")).unwrap();
    assert!(csv.starts_with("test_name,statistic,critical_value,alpha,pass,sample_size"));
}

#[test]
fn verify_catches_a_flipped_byte() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let path = tmp.path().join(io::TRAIN_IMAGES_FLOAT);
    let mut bytes = fs::read(&path).unwrap();
    bytes[16 + 4096 * 3 + 101] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    let out = run(&["verify", "--dataset", p(tmp.path())]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("permutation audit"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("verification.json")).unwrap()).unwrap();
    assert_eq!(report["audit_mismatches"], serde_json::json!([3]));
}

#[test]
fn alpha_moves_the_critical_values() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let report = |alpha: &str| -> (i32, serde_json::Value) {
        let out = run(&["verify", "--dataset", p(tmp.path()), "--alpha", alpha]);
        let text = fs::read_to_string(tmp.path().join("verification.json")).unwrap();
        (code(&out), serde_json::from_str(&text).unwrap())
    };
    let (strict_code, strict) = report("0.01");
    let (loose_code, loose) = report("0.5");
    let crit = |r: &serde_json::Value| r["pooled_ks"]["critical_value"].as_f64().unwrap();
    assert!(crit(&loose) < crit(&strict));
    let d = strict["pooled_ks"]["statistic"].as_f64().unwrap();
    assert_eq!(strict["pooled_ks"]["pass"], d < crit(&strict));
    assert_eq!(loose["pooled_ks"]["pass"], d < crit(&loose));
    // a statistic between the two critical values flips the verdict
    if crit(&loose) <= d && d < crit(&strict) {
        assert_eq!((strict_code, loose_code), (0, 3));
    }
    let images = |r: &serde_json::Value| r["per_image_ks"]["passed"].as_u64().unwrap();
    assert!(images(&loose) < images(&strict));
    assert_eq!(code(&run(&["verify", "--dataset", p(tmp.path()), "--alpha", "1.5"])), 1);
}

#[test]
fn verify_on_a_broken_directory_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    fs::remove_file(tmp.path().join(io::MANIFEST_FILE)).unwrap();
    assert_eq!(code(&run(&["verify", "--dataset", p(tmp.path())])), 2);
}

#[test]
fn preview_writes_png_and_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let out_dir = tmp.path().join("preview");
    let out = run(&["preview", "--dataset", p(&data), "--indices", "0,7", "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for i in [0, 7] {
        let png = image::open(out_dir.join(format!("image-{i}.png"))).unwrap();
        assert_eq!((png.width(), png.height()), (32, 32));
        let csv = fs::read_to_string(out_dir.join(format!("histogram-{i}.csv"))).unwrap();
        let total: usize = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 1024);
    }
    let out = run(&["preview", "--dataset", p(&data), "--indices", "50", "--out-dir", p(&out_dir)]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("out of range"));
}

#[test]
fn masks_partition_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["masks", "--procedural-class", "8", "--synth-seed", "3", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let regions: Vec<Vec<u8>> = ["outside", "outside-boundary", "inside-boundary", "inside"]
        .iter()
        .map(|n| image::open(tmp.path().join(format!("region-{n}.png"))).unwrap().to_luma8().into_raw())
        .collect();
    for i in 0..1024 {
        let white = regions.iter().filter(|r| r[i] == 255).count();
        assert_eq!(white, 1, "pixel {i} is in {white} regions");
    }
    for f in ["source.png", "binarized.png", "cropped.png", "binary.png", "edges.png", "synthetic.png"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn masks_on_a_blank_source_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let blank = tmp.path().join("blank.png");
    image::GrayImage::from_pixel(128, 128, image::Luma([255])).save(&blank).unwrap();
    let out = run(&["masks", "--source", p(&blank), "--out-dir", p(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("degenerate mask"));
}
