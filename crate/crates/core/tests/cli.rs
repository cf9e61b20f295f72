use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spiral_agcnn::cli::{
    pred_file, BenchReport, EvalOutput, BENCH_FILE, CHECKPOINT_DIR, LOG_FILE, REPORT_JSON,
    REPORT_TXT, RESOLVED_FILE, STATE_FILE, TRAJ_FILE,
};
use spiral_agcnn::datagen::{DatasetManifest, Role, MANIFEST_FILE};
use spiral_agcnn::nn::TrainLog;
use spiral_agcnn::quality::PSNR_CAP_DB;
use spiral_agcnn::tensors::load_tensor;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spiral-agcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("ds");
    let o = bin(&[
        "--seed", "4", "--out", s(&out), "synth", "--groups", "3", "--frames-per-group", "2",
        "--matrix", "16", "--cg-iters", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let o = bin(&["train", "--manifest", s(&ds), "--f1", "4"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&bin(&["frobnicate"])), 2);
    assert_eq!(code(&bin(&["--threads", "0", "traj"])), 2);
}

#[test]
fn method_requirements_exit_7() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let out = dir.path().join("o");
    for method in ["mfi", "ir", "agcnn", "cnn"] {
        let o = bin(&["--out", s(&out), "deblur", "--manifest", s(&ds), "--method", method]);
        assert_eq!(code(&o), 7, "{method}");
    }
}

#[test]
fn missing_paths_exit_4_and_bad_config_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["eval", "--manifest", s(&dir.path().join("nope"))]);
    assert_eq!(code(&o), 4);
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(code(&bin(&["--config", s(&cfg), "traj"])), 3);
    fs::write(&cfg, r#"{"colour": 1}"#).unwrap();
    assert_eq!(code(&bin(&["--config", s(&cfg), "traj"])), 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 9, "traj": {"matrix": 24, "readout_s": 0.004016}}"#).unwrap();
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "traj", "--matrix", "32"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().find(|l| l.starts_with("resolved config: ")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line["resolved config: ".len()..]).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["settings"]["matrix"], 32);
    assert_eq!(v["settings"]["readout_s"], 0.004016);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(RESOLVED_FILE)).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn traj_export_has_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = bin(&["--out", s(&out), "traj", "--matrix", "16", "--interleaves", "5"]);
    assert_eq!(code(&o), 0);
    let t = load_tensor(out.join(TRAJ_FILE)).unwrap();
    let dims = t.dims().to_vec();
    assert_eq!(dims[1], 3);
    assert!(dims[0] > 0 && dims[0].is_multiple_of(5), "{dims:?}");
}

#[test]
fn identity_deblur_and_eval_tables() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let none = dir.path().join("none");
    let o = bin(&["--out", s(&none), "deblur", "--manifest", s(&ds), "--method", "none"]);
    assert_eq!(code(&o), 0);
    let m = DatasetManifest::load(&ds.join(MANIFEST_FILE)).unwrap();
    for e in m.entries_for(Role::Test) {
        assert_eq!(fs::read(ds.join(&e.input)).unwrap(), fs::read(none.join(pred_file(&e.id))).unwrap());
    }
    let ir = dir.path().join("ir");
    let o = bin(&[
        "--out", s(&ir), "deblur", "--manifest", s(&ds), "--method", "ir", "--fieldmaps", s(&ds),
        "--iters", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let ev = dir.path().join("ev");
    let o = bin(&["--out", s(&ev), "eval", "--manifest", s(&ds), "--pred", s(&ir), "--pred", s(&none)]);
    assert_eq!(code(&o), 0);
    let report: EvalOutput = serde_json::from_str(&fs::read_to_string(ev.join(REPORT_JSON)).unwrap()).unwrap();
    let labels: Vec<&str> = report.reports.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(labels, ["Input", "IR", "Input"]);
    let (input, ir_row, copy) = (&report.reports[0], &report.reports[1], &report.reports[2]);
    assert_eq!(input.psnr.mean, copy.psnr.mean);
    assert!(ir_row.psnr.mean > input.psnr.mean);
    let mean = ir_row.frames.iter().map(|f| f.psnr_db).sum::<f64>() / ir_row.frames.len() as f64;
    assert!((mean - ir_row.psnr.mean).abs() < 1e-12);
    let text = fs::read_to_string(ev.join(REPORT_TXT)).unwrap();
    assert!(text.contains(&format!("{:.2}", ir_row.psnr.mean)), "{text}");
    assert_eq!(report.by_readout.len(), 3);

    // The dataset targets scored against themselves.
    let tgt = dir.path().join("tgt");
    fs::create_dir_all(&tgt).unwrap();
    for e in m.entries_for(Role::Test) {
        fs::copy(ds.join(&e.target), tgt.join(pred_file(&e.id))).unwrap();
    }
    let o = bin(&["--out", s(&ev), "eval", "--manifest", s(&ds), "--no-input", "--pred", s(&tgt)]);
    assert_eq!(code(&o), 0);
    let report: EvalOutput = serde_json::from_str(&fs::read_to_string(ev.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(report.reports.len(), 1);
    let r = &report.reports[0];
    assert_eq!(r.method, "tgt");
    assert!(r.frames.iter().all(|f| f.psnr_db == PSNR_CAP_DB && f.ssim == 1.0 && f.hfen == 0.0));
}

fn checkpoint_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn resume_continues_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let common = ["--threads", "1", "--seed", "2"];
    let train = |out: &Path, epochs: &str, resume: Option<&Path>| {
        let mut args: Vec<&str> = common.to_vec();
        args.extend(["--out", s(out), "train", "--manifest", s(&ds), "--epochs", epochs]);
        args.extend(["--batch-size", "2", "--f1", "1", "--f2", "1"]);
        if let Some(r) = resume {
            args.extend(["--resume", s(r)]);
        }
        let o = bin(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let full = dir.path().join("full");
    train(&full, "3", None);
    let part = dir.path().join("part");
    train(&part, "1", None);
    let state = dir.path().join("state1.json");
    fs::copy(part.join(STATE_FILE), &state).unwrap();
    train(&part, "3", Some(&state));

    let log = |d: &Path| -> TrainLog {
        serde_json::from_str(&fs::read_to_string(d.join(LOG_FILE)).unwrap()).unwrap()
    };
    let (a, b) = (log(&full), log(&part));
    assert_eq!(a.epochs.len(), 3);
    assert_eq!(b.epochs.len(), 3);
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
    }
    assert_eq!(checkpoint_files(&full.join(CHECKPOINT_DIR)), checkpoint_files(&part.join(CHECKPOINT_DIR)));
}

#[test]
fn bench_reports_positive_times() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = bin(&[
        "--out", s(&out), "bench", "--matrix", "16", "--iters", "3", "--frames", "2", "--warmup", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: BenchReport = serde_json::from_str(&fs::read_to_string(out.join(BENCH_FILE)).unwrap()).unwrap();
    assert_eq!(r.agcnn_seconds.len(), 2);
    assert!(r.agcnn_seconds.iter().chain(&r.ir_seconds).all(|&t| t > 0.0));
    assert!((r.speedup - r.ir_s_per_frame / r.agcnn_s_per_frame).abs() < 1e-12);
}
