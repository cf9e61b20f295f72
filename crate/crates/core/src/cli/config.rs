//! Settings resolution: defaults, then the JSON file, then flags.
//!
//! The config file holds the common keys (`seed`, `threads`, `out`) at top
//! level and one optional object per command, e.g.
//! `{"seed": 7, "train": {"epochs": 20, "f1": 5}}`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datagen::{DatasetConfig, Role, TrajectoryConfig};
use crate::nn::{ModelConfig, GATE_FILTERS};
use crate::spiral::{DEFAULT_DT_S, READOUTS_S};

use super::{Cli, CliError, Command, Method};

const COMMON_KEYS: [&str; 3] = ["seed", "threads", "out"];
const SECTIONS: [&str; 6] = ["synth", "train", "deblur", "eval", "bench", "traj"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Common {
    pub seed: u64,
    pub threads: Option<u64>,
    pub out: PathBuf,
}

impl Default for Common {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Agcnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub groups: usize,
    pub frames_per_group: usize,
    pub matrix: usize,
    pub fov_cm: f64,
    pub dt_s: f64,
    pub readouts_s: Vec<f64>,
    pub cg_iters: usize,
    pub noise_std: f64,
    pub sweep: bool,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            groups: d.groups,
            frames_per_group: d.frames_per_group,
            matrix: d.trajectory.matrix,
            fov_cm: d.trajectory.fov_cm,
            dt_s: d.trajectory.dt_s,
            readouts_s: d.readouts_s,
            cg_iters: d.cg_iters,
            noise_std: d.noise_std,
            sweep: false,
        }
    }
}

impl SynthSettings {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            groups: self.groups,
            frames_per_group: self.frames_per_group,
            trajectory: TrajectoryConfig {
                matrix: self.matrix,
                fov_cm: self.fov_cm,
                dt_s: self.dt_s,
            },
            readouts_s: self.readouts_s.clone(),
            cg_iters: self.cg_iters,
            noise_std: self.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub model: ModelKind,
    pub f1: usize,
    pub f2: usize,
    pub reduction: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_frames: Option<usize>,
    pub max_val_frames: Option<usize>,
    pub resume: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = crate::nn::TrainConfig::default();
        Self {
            manifest: None,
            model: ModelKind::Agcnn,
            f1: 3,
            f2: 3,
            reduction: ModelConfig::agcnn(3, 3).reduction,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            max_frames: None,
            max_val_frames: None,
            resume: None,
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelKind::Cnn => ModelConfig::cnn(),
            ModelKind::Agcnn => ModelConfig {
                reduction: self.reduction,
                ..ModelConfig::agcnn(self.f1, self.f2)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurSettings {
    pub manifest: Option<PathBuf>,
    pub role: Role,
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    pub fieldmaps: Option<PathBuf>,
    pub iters: usize,
    pub tol: f64,
    pub mfi_l: Option<usize>,
    pub max_frames: Option<usize>,
}

impl Default for DeblurSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            role: Role::Test,
            method: Method::Agcnn,
            checkpoint: None,
            fieldmaps: None,
            iters: 30,
            tol: 1e-10,
            mfi_l: None,
            max_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub manifest: Option<PathBuf>,
    pub role: Role,
    pub preds: Vec<PathBuf>,
    pub no_input: bool,
    pub max_frames: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            role: Role::Test,
            preds: Vec::new(),
            no_input: false,
            max_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub matrix: usize,
    pub fov_cm: f64,
    pub dt_s: f64,
    pub readout_s: f64,
    pub iters: usize,
    pub frames: usize,
    pub warmup: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            matrix: 64,
            fov_cm: 20.0,
            dt_s: DEFAULT_DT_S,
            readout_s: READOUTS_S[3],
            iters: 15,
            frames: 5,
            warmup: 1,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajSettings {
    pub matrix: usize,
    pub fov_cm: f64,
    pub readout_s: f64,
    pub dt_s: f64,
    pub interleaves: Option<usize>,
}

impl Default for TrajSettings {
    fn default() -> Self {
        Self {
            matrix: 64,
            fov_cm: 20.0,
            readout_s: READOUTS_S[3],
            dt_s: DEFAULT_DT_S,
            interleaves: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", content = "settings", rename_all = "lowercase")]
pub enum Settings {
    Synth(SynthSettings),
    Train(TrainSettings),
    Deblur(DeblurSettings),
    Eval(EvalSettings),
    Bench(BenchSettings),
    Traj(TrajSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    #[serde(flatten)]
    pub common: Common,
    #[serde(flatten)]
    pub settings: Settings,
}

impl ResolvedConfig {
    pub fn common(&self) -> &Common {
        &self.common
    }
}

fn overlay(base: &mut Map<String, Value>, top: &Map<String, Value>) {
    for (k, v) in top {
        base.insert(k.clone(), v.clone());
    }
}

fn as_object(v: Value, what: &str) -> Result<Map<String, Value>, CliError> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Config(format!("{what} must be a JSON object"))),
    }
}

fn layered<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Map<String, Value>>,
    flags: &impl Serialize,
    what: &str,
) -> Result<T, CliError> {
    let mut merged = as_object(serde_json::to_value(T::default())?, what)?;
    if let Some(f) = file {
        overlay(&mut merged, f);
    }
    overlay(&mut merged, &as_object(serde_json::to_value(flags)?, what)?);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn read_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let map = as_object(value, "config file")?;
    if let Some(k) = map
        .keys()
        .find(|k| !COMMON_KEYS.contains(&k.as_str()) && !SECTIONS.contains(&k.as_str()))
    {
        return Err(CliError::Config(format!("unknown config key {k:?}")));
    }
    Ok(map)
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))?;
    exists(&p)?;
    Ok(p)
}

fn exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(p.to_path_buf()))
    }
}

fn check_filter(name: &str, f: usize) -> Result<(), CliError> {
    if GATE_FILTERS.contains(&f) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} must be one of 1, 3, 5 (got {f})")))
    }
}

pub fn resolve(cli: &Cli) -> Result<ResolvedConfig, CliError> {
    let file = cli.config.as_deref().map(read_file).transpose()?;
    let section = |name: &str| -> Result<Option<Map<String, Value>>, CliError> {
        match file.as_ref().and_then(|f| f.get(name)) {
            Some(v) => Ok(Some(as_object(v.clone(), name)?)),
            None => Ok(None),
        }
    };
    let common_file: Option<Map<String, Value>> = file.as_ref().map(|f| {
        f.iter()
            .filter(|(k, _)| COMMON_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    });
    #[derive(Serialize)]
    struct CommonFlags<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        threads: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        out: Option<&'a PathBuf>,
    }
    let flags = CommonFlags {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.as_ref(),
    };
    let common: Common = layered(common_file.as_ref(), &flags, "config")?;
    // One file serves every command, so every section is checked.
    let none = Map::new();
    layered::<SynthSettings>(section("synth")?.as_ref(), &none, "synth")?;
    layered::<TrainSettings>(section("train")?.as_ref(), &none, "train")?;
    layered::<DeblurSettings>(section("deblur")?.as_ref(), &none, "deblur")?;
    layered::<EvalSettings>(section("eval")?.as_ref(), &none, "eval")?;
    layered::<BenchSettings>(section("bench")?.as_ref(), &none, "bench")?;
    layered::<TrajSettings>(section("traj")?.as_ref(), &none, "traj")?;
    if common.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }

    let settings = match &cli.command {
        Command::Synth(a) => {
            let s: SynthSettings = layered(section("synth")?.as_ref(), a, "synth")?;
            s.dataset_config().validate()?;
            Settings::Synth(s)
        }
        Command::Train(a) => {
            let s: TrainSettings = layered(section("train")?.as_ref(), a, "train")?;
            require(&s.manifest, "manifest")?;
            if let Some(r) = &s.resume {
                exists(r)?;
            }
            if s.model == ModelKind::Agcnn {
                check_filter("f1", s.f1)?;
                check_filter("f2", s.f2)?;
            }
            if s.epochs == 0 || s.batch_size == 0 || !(s.lr > 0.0) {
                return Err(CliError::Config("epochs, batch_size and lr must be positive".into()));
            }
            s.model_config().validate()?;
            Settings::Train(s)
        }
        Command::Deblur(a) => {
            let s: DeblurSettings = layered(section("deblur")?.as_ref(), a, "deblur")?;
            require(&s.manifest, "manifest")?;
            match s.method {
                Method::Mfi | Method::Ir => {
                    let Some(dir) = &s.fieldmaps else {
                        return Err(CliError::Method(format!(
                            "method {} needs the true field maps: pass --fieldmaps <DIR>",
                            s.method.as_str()
                        )));
                    };
                    exists(dir)?;
                }
                Method::Agcnn | Method::Cnn => {
                    let Some(dir) = &s.checkpoint else {
                        return Err(CliError::Method(format!(
                            "method {} needs --checkpoint <DIR>",
                            s.method.as_str()
                        )));
                    };
                    exists(dir)?;
                }
                Method::None => {}
            }
            if s.iters == 0 {
                return Err(CliError::Config("iters must be at least 1".into()));
            }
            Settings::Deblur(s)
        }
        Command::Eval(a) => {
            let s: EvalSettings = layered(section("eval")?.as_ref(), a, "eval")?;
            require(&s.manifest, "manifest")?;
            for p in &s.preds {
                exists(p)?;
            }
            if s.preds.is_empty() && s.no_input {
                return Err(CliError::Config("nothing to evaluate".into()));
            }
            Settings::Eval(s)
        }
        Command::Bench(a) => {
            let s: BenchSettings = layered(section("bench")?.as_ref(), a, "bench")?;
            if let Some(c) = &s.checkpoint {
                exists(c)?;
            }
            if s.frames == 0 || s.iters == 0 {
                return Err(CliError::Config("frames and iters must be at least 1".into()));
            }
            Settings::Bench(s)
        }
        Command::Traj(a) => Settings::Traj(layered(section("traj")?.as_ref(), a, "traj")?),
    };
    Ok(ResolvedConfig { common, settings })
}
