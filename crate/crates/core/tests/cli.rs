//! End-to-end checks of the `ltv` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ltv::tensor::io::{read_ltvt, read_pgm};
use ltv::trainer::eval::TABLE_HEADER;
use ltv::trainer::MetricsTable;

fn ltv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltv")).args(args).env("LTV_THREADS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A simulated dataset and a one-epoch training run shared by several tests.
struct Fixture {
    _root: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

impl Fixture {
    fn checkpoint(&self) -> PathBuf {
        ltv::trainer::best_checkpoint(&self.run).unwrap()
    }

    fn image(&self, kind: &str, i: usize) -> PathBuf {
        self.data.join(kind).join(format!("{i:04}.pgm"))
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let data = root.path().join("data");
        let run = root.path().join("run");
        let o = ltv(&["simulate", "--size", "16", "--n-train", "4", "--n-val", "2", "--angles", "30", "--out", s(&data)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = ltv(&[
            "train", "--data", s(&data), "--epochs", "1", "--batch-size", "2",
            "--set", "depth=2", "--set", "channels=4", "--set", "iterations=5", "--out", s(&run),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture { _root: root, data, run }
    })
}

fn assert_run_dir(dir: &Path) {
    assert!(dir.join("config.txt").is_file(), "{} lacks config.txt", dir.display());
    let v = fs::read_to_string(dir.join("VERSION")).unwrap();
    assert_eq!(v.trim(), format!("ltv {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn no_arguments_prints_usage() {
    let o = ltv(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_named() {
    let o = ltv(&["selftest", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&["selftest", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("selftest.txt")).unwrap();
    assert_eq!(report.lines().count(), 7);
    assert!(report.lines().all(|l| l.starts_with("PASS")));
    assert_run_dir(dir.path());
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_ltv")).args(["--version"]).env("LTV_THREADS", "abc").output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("LTV_THREADS"));
}

#[test]
fn training_run_layout() {
    let f = fixture();
    assert_run_dir(&f.run);
    let log = fs::read_to_string(f.run.join("runlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let echo = fs::read_to_string(f.run.join("config.txt")).unwrap();
    for line in ["epochs=1", "batch_size=2", "depth=2", "channels=4", "iterations=5", "seed=0"] {
        assert!(echo.lines().any(|l| l == line), "config echo lacks {line}:\n{echo}");
    }
    assert!(f.checkpoint().is_dir());
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "# tiny\nepochs=7\ndepth=2\nchannels=4\niterations=3\nbatch_size=4\n").unwrap();
    let out = dir.path().join("run");
    let o = ltv(&["train", "--data", s(&f.data), "--config", s(&cfg), "--set", "batch_size=3", "--epochs", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "epochs=1"));
    assert!(echo.lines().any(|l| l == "batch_size=3"));
    assert!(echo.lines().any(|l| l == "iterations=3"));
}

#[test]
fn config_errors_exit_one() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochz=3\n").unwrap();
    let o = ltv(&["train", "--data", s(&f.data), "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochz"));
    fs::write(&cfg, "seed=4\n").unwrap();
    let o = ltv(&["train", "--data", s(&f.data), "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_dataset_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = ltv(&["eval", "--data", s(&missing), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn checkpoint_denoise_is_repeatable() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let input = f.image("noisy", 4);
    for out in [&a, &b] {
        let o = ltv(&["denoise", "--input", s(&input), "--checkpoint", s(&f.checkpoint()), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_run_dir(out);
    }
    for name in ["denoised.pgm", "lambda.pgm", "lambda_range.txt", "lambda.ltvt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let lam = read_ltvt(&a.join("lambda.ltvt")).unwrap();
    let lo = lam.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lam.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = ltv::cli::read_lambda_range(&a.join("lambda_range.txt")).unwrap();
    assert_eq!(range, (lo, hi));
}

#[test]
fn denoise_with_reference_writes_error_map() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&[
        "denoise", "--input", s(&f.image("noisy", 5)), "--lambda", "0.1", "--reference", s(&f.image("clean", 5)),
        "--error-map", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = MetricsTable::parse_csv(&fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert!(table.row("noisy").is_some() && table.row("tv").is_some());
    assert_eq!(read_pgm(&dir.path().join("error.pgm")).unwrap().shape(), &[16, 16]);
    let plain = dir.path().join("plain");
    let o = ltv(&["denoise", "--input", s(&f.image("noisy", 5)), "--lambda", "0.1", "--reference", s(&f.image("clean", 5)), "--out", s(&plain)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(plain.join("metrics.csv").is_file() && !plain.join("error.pgm").exists());
}

#[test]
fn error_map_needs_reference() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&["denoise", "--input", s(&f.image("noisy", 0)), "--lambda", "0.1", "--error-map", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_lambda_returns_input() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = f.image("noisy", 1);
    let o = ltv(&["classical-tv", "--input", s(&input), "--lambda", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("denoised.pgm")).unwrap(), fs::read(&input).unwrap());
    let o = ltv(&["denoise", "--input", s(&input), "--lambda", "0", "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("d/denoised.pgm")).unwrap(), fs::read(&input).unwrap());
}

#[test]
fn eval_writes_full_table() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&[
        "eval", "--data", s(&f.data), "--checkpoint", s(&f.checkpoint()), "--tv-iterations", "20", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_run_dir(dir.path());
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), TABLE_HEADER);
    // noisy, ten grid points, tv_best, ltv
    assert_eq!(csv.lines().count(), 1 + 13);
    assert_eq!(MetricsTable::parse_csv(&csv).unwrap().to_csv(), csv);
    let best: f64 = fs::read_to_string(dir.path().join("best_lambda.txt")).unwrap().trim().parse().unwrap();
    assert!((0.01..=1.0).contains(&best));
}

#[test]
fn phantom_gen_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&["phantom-gen", "--size", "24", "--count", "3", "--textured", "--seed", "5", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_run_dir(dir.path());
    for i in 0..3 {
        assert_eq!(read_pgm(&dir.path().join(format!("{i:04}.pgm"))).unwrap().shape(), &[24, 24]);
    }
    assert!(!fs::read_to_string(dir.path().join("phantoms.txt")).unwrap().is_empty());
}

#[test]
fn ablate_single_arm() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = ltv(&[
        "ablate", "--data", s(&f.data), "--ent", "--epochs", "1", "--set", "depth=2", "--set", "channels=4",
        "--set", "iterations=5", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3, "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("no_ent,")));
}
