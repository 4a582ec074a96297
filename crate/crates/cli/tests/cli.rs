use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amid::denoiser::{Denoiser, DenoiserConfig};
use amid::imaging::dataset_read;
use amid::tensor::AdamState;
use amid::training::load_checkpoint;

const TINY: &str = r#"
[data]
count = 8
size = 16

[denoiser]
channels = 8
depth = 2
time_embed_dim = 8

[train]
batch_size = 4
steps = 3

[sampler]
count = 4
num_ddim_steps = 5

[ske]
patch_size = 16

[eval]
ssim_pairs = 50
"#;

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("tiny.toml"), TINY).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn amid(&self, args: &[&str]) -> Output {
        let cfg = self.path("tiny.toml");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_amid"));
        cmd.current_dir(&self.root)
            .env("AMID_THREADS", "1")
            .args(args.iter().take(1));
        if args.first() != Some(&"rerun") {
            cmd.arg("--config").arg(&cfg);
        }
        cmd.args(&args[1..]).output().unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.amid(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    /// phantom + measure into `ph` and `meas`.
    fn dataset(&self) {
        self.ok(&["phantom", "-o", "ph"]);
        self.ok(&["measure", "--input", "ph", "-o", "meas"]);
    }
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .last()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn phantom_then_measure_builds_paired_dataset() {
    let w = Work::new();
    w.ok(&["phantom", "-o", "ph", "--set", "data.count=10"]);
    w.ok(&["measure", "--input", "ph", "-o", "meas", "--set", "data.count=10"]);
    let ds = dataset_read(&w.path("meas")).unwrap();
    assert_eq!(ds.samples.len(), 10);
    assert!(ds.has_measurements() && ds.has_truth());
    assert_eq!(ds.sigma, Some(0.1));
    let manifest = fs::read_to_string(w.path("meas/manifest.txt")).unwrap();
    assert!(manifest.contains("planes=y,x0"));
    assert!(w.path("meas/preview.pgm").exists());
    let run = fs::read_to_string(w.path("meas/run.txt")).unwrap();
    assert!(run.starts_with("command=measure\nfingerprint="));
    assert!(run.contains("seed=5000"));
}

#[test]
fn zero_step_training_writes_the_initial_state() {
    let w = Work::new();
    w.dataset();
    w.ok(&[
        "train",
        "--data",
        "meas",
        "-o",
        "t0",
        "--steps",
        "0",
        "--set",
        "seeds.init=5",
    ]);
    let st = load_checkpoint(&w.path("t0/checkpoint.ckpt"), None).unwrap();
    let cfg = DenoiserConfig {
        channels: 8,
        depth: 2,
        time_embed_dim: 8,
    };
    let init = Denoiser::init(cfg, 16, 16, 5).unwrap();
    assert_eq!(st.step, 0);
    assert_eq!(st.adam, AdamState::new(&init.params));
    assert_eq!(st.model, init);
    assert_eq!(
        fs::read_to_string(w.path("t0/train_log.csv")).unwrap(),
        "step,l1,l2,total,wall_time\n"
    );
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let w = Work::new();
    w.dataset();
    w.ok(&["train", "--data", "meas", "-o", "full", "--steps", "6"]);
    w.ok(&["train", "--data", "meas", "-o", "half", "--steps", "3"]);
    w.ok(&[
        "train",
        "--data",
        "meas",
        "-o",
        "rest",
        "--steps",
        "6",
        "--resume",
        "half/checkpoint.ckpt",
    ]);
    assert_eq!(
        fs::read(w.path("full/checkpoint.ckpt")).unwrap(),
        fs::read(w.path("rest/checkpoint.ckpt")).unwrap()
    );
    // a different trajectory is refused
    let out = w.amid(&[
        "train",
        "--data",
        "meas",
        "-o",
        "bad",
        "--steps",
        "6",
        "--resume",
        "half/checkpoint.ckpt",
        "--set",
        "train.lambda=0.5",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr_line(&out));
}

#[test]
fn full_pipeline_produces_metrics() {
    let w = Work::new();
    w.dataset();
    w.ok(&["phantom", "-o", "held", "--set", "seeds.phantom=90000"]);
    w.ok(&["train", "--data", "meas", "-o", "train"]);
    w.ok(&[
        "sample",
        "--checkpoint",
        "train/checkpoint.ckpt",
        "-o",
        "gen",
        "--count",
        "6",
    ]);
    assert_eq!(dataset_read(&w.path("gen")).unwrap().samples.len(), 6);
    w.ok(&[
        "recover",
        "--checkpoint",
        "train/checkpoint.ckpt",
        "--data",
        "meas",
        "-o",
        "rec",
    ]);
    let rec = fs::read_to_string(w.path("rec/metrics.csv")).unwrap();
    assert!(rec.contains("mse_recovered,") && rec.contains("mse_measurement,"));
    w.ok(&[
        "eval",
        "--generated",
        "gen",
        "--truth",
        "held",
        "--measured",
        "meas",
        "-o",
        "ev",
    ]);
    let m = fs::read_to_string(w.path("ev/metrics.csv")).unwrap();
    assert!(m.starts_with("metric,value,fingerprint\n"));
    for key in [
        "auc_generated",
        "auc_truth",
        "ssim_pdf_distance_generated",
        "ssim_pdf_distance_measured",
        "highfreq_energy_generated",
    ] {
        assert!(m.contains(&format!("\n{key},")), "{key} missing from {m}");
    }
    for f in [
        "ssim_pdf_truth.csv",
        "ssim_pdf_generated.csv",
        "ssim_pdf_measured.csv",
        "roc_generated.csv",
        "roc_truth.csv",
    ] {
        assert!(w.path("ev").join(f).exists(), "{f}");
    }
}

#[test]
fn ablation_tabulates_every_lambda() {
    let w = Work::new();
    w.dataset();
    w.ok(&["phantom", "-o", "held", "--set", "seeds.phantom=90000"]);
    w.ok(&[
        "ablate",
        "--data",
        "meas",
        "--truth",
        "held",
        "-o",
        "abl",
        "--set",
        "train.steps=2",
    ]);
    let csv = fs::read_to_string(w.path("abl/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{csv}");
    let lambdas: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(lambdas, ["0.0", "0.2", "0.5", "0.75"]);
    assert!(csv.starts_with("lambda,seed,highfreq_residual_energy,"));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.txt")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn rerun_reproduces_artifacts() {
    let w = Work::new();
    let det = "--deterministic";
    w.ok(&["phantom", "-o", "ph", det]);
    w.ok(&["measure", "--input", "ph", "-o", "meas", det]);
    w.ok(&["train", "--data", "meas", "-o", "train", det]);
    w.ok(&["sample", "--checkpoint", "train/checkpoint.ckpt", "-o", "gen", det]);
    for dir in ["ph", "meas", "train", "gen"] {
        let again = format!("{dir}_again");
        w.ok(&["rerun", &format!("{dir}/run.txt"), "-o", &again]);
        assert_eq!(files(&w.path(dir)), files(&w.path(&again)), "{dir}");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let w = Work::new();
    let out = w.amid(&["measure", "--input", "nowhere", "-o", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error code=2 kind=missing_input"));

    fs::write(w.path("broken.toml"), "[train]\nlambda = = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_amid"))
        .args(["phantom", "-o"])
        .arg(w.path("p"))
        .arg("--config")
        .arg(w.path("broken.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let line = stderr_line(&out);
    assert!(line.starts_with("error code=3 kind=parse line=2 "), "{line}");
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);

    w.dataset();
    let out = w.amid(&[
        "train",
        "--data",
        "meas",
        "-o",
        "t",
        "--set",
        "train.lr=1e30",
        "--steps",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr_line(&out));
    assert!(stderr_line(&out).starts_with("error code=4 kind=non_finite"));

    let out = w.amid(&["phantom", "-o", "p", "--set", "data.sigma=-1"]);
    assert_eq!(out.status.code(), Some(1));
}
