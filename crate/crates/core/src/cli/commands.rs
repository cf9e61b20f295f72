use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{
    ir_deblur_with, map_range, mfi_deblur_with, plan_for_map, plan_mfi, MFI_GRID_STEP_HZ,
};
use crate::datagen::{
    build_dataset, build_sweep, dataset_root, draw_frame, frame_phantom, sweep_dir,
    DatasetManifest, FrameSeeds, ManifestEntry, Role, Simulator, TrajectoryConfig,
    BLUR_CG_ITERS, MANIFEST_FILE,
};
use crate::encoder::{FieldMap, KspaceData};
use crate::nn::{
    deblur, load_checkpoint, save_checkpoint, AgCnnModel, ModelConfig, Sample, TrainConfig,
    Trainer, TrainerState,
};
use crate::quality::{evaluate_frame, render_table, QualityReport};
use crate::spiral::{interleaves_for, make_spiral, DEFAULT_PATH_OVERSAMPLING};
use crate::tensors::{derive_seed, load_tensor, save_tensor, ComplexImage, Rng};

use super::config::{
    BenchSettings, Common, DeblurSettings, EvalSettings, ResolvedConfig, Settings,
    SynthSettings, TrainSettings, TrajSettings,
};
use super::{CliError, Method};

pub const RESOLVED_FILE: &str = "resolved_config.json";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "train_log.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const DEBLUR_FILE: &str = "deblur.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const BENCH_FILE: &str = "bench.json";
pub const TRAJ_FILE: &str = "trajectory.spdb";

pub fn execute(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let c = &cfg.common;
    fs::create_dir_all(&c.out)?;
    fs::write(c.out.join(RESOLVED_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    match &cfg.settings {
        Settings::Synth(s) => synth(c, s),
        Settings::Train(s) => train(c, s),
        Settings::Deblur(s) => deblur_frames(c, s),
        Settings::Eval(s) => eval(c, s),
        Settings::Bench(s) => bench(c, s),
        Settings::Traj(s) => traj(c, s),
    }
}

fn open_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf), CliError> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !file.exists() {
        return Err(CliError::MissingPath(file));
    }
    Ok((DatasetManifest::load(&file)?, dataset_root(&file)))
}

fn manifest_of(p: &Option<PathBuf>) -> Result<(DatasetManifest, PathBuf), CliError> {
    open_manifest(p.as_deref().expect("validated"))
}

fn selected(manifest: &DatasetManifest, role: Role, max: Option<usize>) -> Vec<&ManifestEntry> {
    manifest.entries_for(role).take(max.unwrap_or(usize::MAX)).collect()
}

fn load_image(path: &Path) -> Result<ComplexImage, CliError> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    Ok(ComplexImage::from_tensor(load_tensor(path)?.into_complex()?)?)
}

fn synth(c: &Common, s: &SynthSettings) -> Result<(), CliError> {
    let manifest = build_dataset(&s.dataset_config(), c.seed, &c.out)?;
    for role in Role::ALL {
        println!("{:<5} {} frames", role.as_str(), manifest.entries_for(role).count());
    }
    println!("manifest: {}", c.out.join(MANIFEST_FILE).display());
    if s.sweep {
        for &r in &s.readouts_s {
            let dir = c.out.join(sweep_dir(r));
            let sweep = build_sweep(&manifest, Role::Test, r, &dir)?;
            println!(
                "sweep {:.3} ms: {} test frames in {}",
                r * 1e3,
                sweep.entries.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn load_samples(
    manifest: &DatasetManifest,
    root: &Path,
    role: Role,
    max: Option<usize>,
) -> Result<Vec<Sample>, CliError> {
    selected(manifest, role, max)
        .par_iter()
        .map(|e| {
            let input = load_image(&root.join(&e.input))?;
            let target = load_image(&root.join(&e.target))?;
            Ok(Sample::from_pair(&input, &target))
        })
        .collect()
}

fn train(c: &Common, s: &TrainSettings) -> Result<(), CliError> {
    let (manifest, root) = manifest_of(&s.manifest)?;
    let train_set = load_samples(&manifest, &root, Role::Train, s.max_frames)?;
    let val_set = load_samples(&manifest, &root, Role::Val, s.max_val_frames)?;
    println!("train {} frames, val {} frames", train_set.len(), val_set.len());
    let model_config = s.model_config();
    let mut trainer = match &s.resume {
        Some(path) => {
            let mut state: TrainerState = serde_json::from_str(&fs::read_to_string(path)?)?;
            if state.model_config != model_config {
                return Err(CliError::Config(format!(
                    "{} holds a {} model, settings ask for {}",
                    path.display(),
                    state.model_config.label(),
                    model_config.label()
                )));
            }
            state.train_config.epochs = s.epochs;
            let t = Trainer::from_state(state)?;
            println!("resuming after epoch {}", t.epochs_done());
            t
        }
        None => {
            let cfg = TrainConfig {
                epochs: s.epochs,
                batch_size: s.batch_size,
                lr: s.lr,
                seed: c.seed,
            };
            Trainer::new(model_config, cfg, Rng::new(derive_seed(c.seed, "train")))?
        }
    };
    println!("{} ({} parameters)", trainer.model().config.label(), trainer.model().param_count());
    while !trainer.is_finished() {
        let r = trainer.run_epoch(&train_set, &val_set)?;
        println!(
            "epoch {:>4}  train {:.6}  val {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.seconds
        );
        fs::write(c.out.join(STATE_FILE), serde_json::to_string(&trainer.state())?)?;
    }
    let (model, log) = trainer.finish();
    save_checkpoint(&c.out.join(CHECKPOINT_DIR), &model, c.seed)?;
    fs::write(c.out.join(LOG_FILE), serde_json::to_string_pretty(&log)? + "\n")?;
    if let Some(best) = log.best_epoch {
        println!("best epoch {best}; checkpoint in {}", c.out.join(CHECKPOINT_DIR).display());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub id: String,
    pub readout_s: f64,
    pub seconds: f64,
}

/// Sidecar written next to the predictions of one `deblur` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurRecord {
    pub method: Method,
    pub role: Role,
    pub filters: Option<(usize, usize)>,
    pub params: Option<usize>,
    pub frames: Vec<FrameTiming>,
    pub seconds_per_frame: f64,
}

pub fn pred_file(id: &str) -> String {
    format!("{id}.pred.spdb")
}

fn load_network(dir: &Path, method: Method) -> Result<AgCnnModel, CliError> {
    let (model, _) = load_checkpoint(dir)?;
    let gated = model.config.f1.is_some() || model.config.f2.is_some();
    if gated != (method == Method::Agcnn) {
        return Err(CliError::Method(format!(
            "checkpoint {} is a {} model, not usable as {}",
            dir.display(),
            model.config.label(),
            method.as_str()
        )));
    }
    Ok(model)
}

fn deblur_frames(c: &Common, s: &DeblurSettings) -> Result<(), CliError> {
    let (manifest, root) = manifest_of(&s.manifest)?;
    let entries = selected(&manifest, s.role, s.max_frames);
    if entries.is_empty() {
        return Err(CliError::Config(format!("no {} frames in manifest", s.role.as_str())));
    }
    let model = match (s.method, &s.checkpoint) {
        (Method::Agcnn | Method::Cnn, Some(dir)) => Some(load_network(dir, s.method)?),
        _ => None,
    };
    let sim = Simulator::for_dataset(&manifest.config);
    let mut frames = Vec::with_capacity(entries.len());
    for e in entries {
        let input = load_image(&root.join(&e.input))?;
        let classical = match s.method {
            Method::Mfi | Method::Ir => {
                let dir = s.fieldmaps.as_ref().expect("validated");
                let fpath = dir.join(&e.fieldmap);
                if !fpath.exists() {
                    return Err(CliError::MissingPath(fpath));
                }
                let field = FieldMap::from_tensor(&load_tensor(&fpath)?.into_real()?)?;
                let kpath = root.join(&e.kspace);
                if !kpath.exists() {
                    return Err(CliError::MissingPath(kpath));
                }
                let samples = load_tensor(&kpath)?.into_complex()?.into_data();
                let enc = sim.encoder(e.readout_s)?;
                Some((field, KspaceData::new(samples, enc.trajectory().clone())?, enc))
            }
            _ => None,
        };
        let start = Instant::now();
        let pred = match (s.method, classical) {
            (Method::None, _) => input,
            (Method::Agcnn | Method::Cnn, _) => deblur(model.as_ref().expect("loaded"), &input)?,
            (Method::Mfi, Some((field, k, enc))) => {
                let plan = match s.mfi_l {
                    Some(l) => {
                        let (lo, hi) = map_range(&field);
                        plan_mfi(enc.trajectory(), lo, hi, l, MFI_GRID_STEP_HZ)?
                    }
                    None => plan_for_map(enc.trajectory(), &field)?,
                };
                mfi_deblur_with(&enc, &k, &field, &plan)?
            }
            (Method::Ir, Some((field, k, enc))) => {
                ir_deblur_with(&enc, &k, &field, s.iters, s.tol)?.image
            }
            _ => unreachable!("classical inputs loaded above"),
        };
        let seconds = start.elapsed().as_secs_f64();
        save_tensor(c.out.join(pred_file(&e.id)), &pred.to_tensor().into())?;
        frames.push(FrameTiming {
            id: e.id.clone(),
            readout_s: e.readout_s,
            seconds,
        });
    }
    let seconds_per_frame = frames.iter().map(|f| f.seconds).sum::<f64>() / frames.len() as f64;
    let record = DeblurRecord {
        method: s.method,
        role: s.role,
        filters: model
            .as_ref()
            .and_then(|m| m.config.f1.zip(m.config.f2)),
        params: model.as_ref().map(AgCnnModel::param_count),
        seconds_per_frame,
        frames,
    };
    fs::write(c.out.join(DEBLUR_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    println!(
        "{}: {} frames, {:.4} s/frame -> {}",
        s.method.as_str(),
        record.frames.len(),
        seconds_per_frame,
        c.out.display()
    );
    Ok(())
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::Agcnn => "AG-CNN",
        Method::Cnn => "CNN",
        Method::Mfi => "MFI",
        Method::Ir => "IR",
        Method::None => "Input",
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub role: Role,
    pub reports: Vec<QualityReport>,
    /// Per readout, one report per row of `reports` in the same order.
    pub by_readout: Vec<Vec<QualityReport>>,
}

fn score(
    entries: &[&ManifestEntry],
    root: &Path,
    pred: impl Fn(&ManifestEntry) -> PathBuf + Sync,
) -> Result<Vec<crate::quality::FrameQuality>, CliError> {
    entries
        .par_iter()
        .map(|e| {
            let target = load_image(&root.join(&e.target))?;
            let test = load_image(&pred(e))?;
            Ok(evaluate_frame(e.id.clone(), e.readout_s, &target, &test)?)
        })
        .collect()
}

fn eval(c: &Common, s: &EvalSettings) -> Result<(), CliError> {
    let (manifest, root) = manifest_of(&s.manifest)?;
    let entries = selected(&manifest, s.role, s.max_frames);
    if entries.is_empty() {
        return Err(CliError::Config(format!("no {} frames in manifest", s.role.as_str())));
    }
    let mut reports = Vec::new();
    if !s.no_input {
        let frames = score(&entries, &root, |e| root.join(&e.input))?;
        reports.push(QualityReport::new("Input", frames));
    }
    for dir in &s.preds {
        let sidecar = dir.join(DEBLUR_FILE);
        let record: Option<DeblurRecord> = if sidecar.exists() {
            Some(serde_json::from_str(&fs::read_to_string(&sidecar)?)?)
        } else {
            None
        };
        let label = match &record {
            Some(r) => method_label(r.method).to_string(),
            None => dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
        };
        let frames = score(&entries, &root, |e| dir.join(pred_file(&e.id)))?;
        let mut report = QualityReport::new(label, frames);
        if let Some(r) = record {
            report.filters = r.filters;
            report.params = r.params;
            report.seconds_per_frame = Some(r.seconds_per_frame);
        }
        reports.push(report);
    }
    let by_readout: Vec<Vec<QualityReport>> = reports.iter().map(|r| r.by_readout()).collect();
    let mut text = render_table(&reports);
    if let Some(first) = by_readout.first() {
        for (i, ro) in first.iter().enumerate() {
            let rows: Vec<QualityReport> = by_readout.iter().map(|b| b[i].clone()).collect();
            text.push_str(&format!(
                "\nreadout {:.3} ms ({} frames)\n",
                ro.readout_s.unwrap_or(0.0) * 1e3,
                ro.frames.len()
            ));
            text.push_str(&render_table(&rows));
        }
    }
    let output = EvalOutput {
        role: s.role,
        reports,
        by_readout,
    };
    fs::write(c.out.join(REPORT_JSON), serde_json::to_string_pretty(&output)? + "\n")?;
    fs::write(c.out.join(REPORT_TXT), &text)?;
    print!("{text}");
    Ok(())
}

/// Contents of `bench.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub matrix: usize,
    pub readout_s: f64,
    pub ir_iters: usize,
    pub warmup: usize,
    pub agcnn_seconds: Vec<f64>,
    pub ir_seconds: Vec<f64>,
    pub agcnn_s_per_frame: f64,
    pub ir_s_per_frame: f64,
    pub speedup: f64,
}

fn bench(c: &Common, s: &BenchSettings) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| -> Result<BenchReport, CliError> {
        let model = match &s.checkpoint {
            Some(dir) => load_checkpoint(dir)?.0,
            None => AgCnnModel::init(
                ModelConfig::agcnn(3, 3),
                &mut Rng::new(derive_seed(c.seed, "bench/model")),
            )?,
        };
        let traj = TrajectoryConfig {
            matrix: s.matrix,
            fov_cm: s.fov_cm,
            dt_s: s.dt_s,
        };
        let sim = Simulator::new(traj, BLUR_CG_ITERS, 0.0);
        let enc = sim.encoder(s.readout_s)?;
        let mut agcnn_seconds = Vec::new();
        let mut ir_seconds = Vec::new();
        for i in 0..s.warmup + s.frames {
            let phantom = frame_phantom(c.seed, s.matrix, 0, i);
            let seeds = FrameSeeds::new(c.seed, 0, i);
            let draw = draw_frame(seeds.draw, &[s.readout_s], &phantom.fieldmap)?;
            let frame = sim.synth(&phantom, s.readout_s, draw.aug, &mut Rng::new(seeds.noise))?;
            let t = Instant::now();
            deblur(&model, &frame.blurred)?;
            let t_cnn = t.elapsed().as_secs_f64();
            let t = Instant::now();
            ir_deblur_with(&enc, &frame.kspace, &frame.field, s.iters, 0.0)?;
            let t_ir = t.elapsed().as_secs_f64();
            if i >= s.warmup {
                agcnn_seconds.push(t_cnn);
                ir_seconds.push(t_ir);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let a = mean(&agcnn_seconds);
        let r = mean(&ir_seconds);
        Ok(BenchReport {
            matrix: s.matrix,
            readout_s: s.readout_s,
            ir_iters: s.iters,
            warmup: s.warmup,
            agcnn_s_per_frame: a,
            ir_s_per_frame: r,
            speedup: r / a,
            agcnn_seconds,
            ir_seconds,
        })
    })?;
    fs::write(c.out.join(BENCH_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "{}x{} frame, readout {:.3} ms, {} timed frames (+{} warmup), 1 thread",
        s.matrix,
        s.matrix,
        s.readout_s * 1e3,
        s.frames,
        s.warmup
    );
    println!("{:<18} {:>10}", "method", "s/frame");
    println!("{:<18} {:>10.4}", "AG-CNN", report.agcnn_s_per_frame);
    println!("{:<18} {:>10.4}", format!("IR ({} iters)", s.iters), report.ir_s_per_frame);
    println!("speedup {:.1}x", report.speedup);
    Ok(())
}

fn traj(c: &Common, s: &TrajSettings) -> Result<(), CliError> {
    let n = match s.interleaves {
        Some(n) => n,
        None => interleaves_for(s.matrix, s.fov_cm, s.readout_s, s.dt_s, DEFAULT_PATH_OVERSAMPLING)?,
    };
    let t = make_spiral(s.matrix, s.fov_cm, s.readout_s, n, s.dt_s)?;
    let path = c.out.join(TRAJ_FILE);
    save_tensor(&path, &t.to_tensor().into())?;
    println!(
        "{} interleaves x {} samples = {} points, k_max {:.4} cycles/cm -> {}",
        t.n_interleaves(),
        t.samples_per_interleaf(),
        t.len(),
        t.k_max(),
        path.display()
    );
    Ok(())
}
