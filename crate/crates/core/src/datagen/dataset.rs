//! Blurred/ground-truth pair synthesis and on-disk datasets.
//!
//! Every frame is a pure function of `(root seed, group, frame, readout)`:
//! the group's anatomy, the per-frame jitter and field map, and the
//! `(α, β, readout)` draw each come from their own derived seed, so frames
//! can be synthesised in any order, in parallel, or regenerated later at a
//! different readout.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    augment_field_map, AugmentationParams, Encoder, EncoderError, FieldMap, KspaceData,
    OffResonance, ALPHA_RANGE, BETA_RANGE_HZ,
};
use crate::spiral::{make_default_spiral, SpiralError, SpiralTrajectory, DEFAULT_DT_S, READOUTS_S};
use crate::tensors::{
    derive_seed, load_tensor, save_tensor, ComplexImage, FormatError, Rng, ShapeError,
};

use super::phantom::{make_variant, random_spec, Phantom};

/// CG iterations used to form the blurred input.
pub const BLUR_CG_ITERS: usize = 30;
const BLUR_CG_TOL: f64 = 1e-10;
const MAX_AUG_DRAWS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("{0} subject groups cannot be split into train/val/test")]
    TooFewGroups(usize),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Spiral(#[from] SpiralError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Val, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            _ => Err(format!("unknown role {s:?} (train, val, test)")),
        }
    }
}

/// Trajectory settings shared by all frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub matrix: usize,
    pub fov_cm: f64,
    pub dt_s: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            matrix: 64,
            fov_cm: 20.0,
            dt_s: DEFAULT_DT_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub groups: usize,
    pub frames_per_group: usize,
    pub trajectory: TrajectoryConfig,
    pub readouts_s: Vec<f64>,
    pub cg_iters: usize,
    /// Std of complex Gaussian noise added per k-space sample (0 disables).
    pub noise_std: f64,
}

impl Default for DatasetConfig {
    /// Desk scale: 12 groups of 50 frames at 64×64.
    fn default() -> Self {
        Self {
            groups: 12,
            frames_per_group: 50,
            trajectory: TrajectoryConfig::default(),
            readouts_s: READOUTS_S.to_vec(),
            cg_iters: BLUR_CG_ITERS,
            noise_std: 0.0,
        }
    }
}

impl DatasetConfig {
    /// Full-size layout: 33 groups of 50 frames.
    pub fn full_size() -> Self {
        Self {
            groups: 33,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.groups < 3 {
            return Err(DatagenError::TooFewGroups(self.groups));
        }
        if self.frames_per_group == 0 || self.readouts_s.is_empty() || self.cg_iters == 0 {
            return Err(DatagenError::Config(
                "frames_per_group, readouts and cg_iters must be nonempty/positive".into(),
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(DatagenError::Config(format!("noise_std {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Group counts `(train, val, test)` for a 70/15/15 split.
pub fn split_counts(groups: usize) -> Result<(usize, usize, usize), DatagenError> {
    if groups < 3 {
        return Err(DatagenError::TooFewGroups(groups));
    }
    let part = ((0.15 * groups as f64).round() as usize).max(1);
    let train = groups - 2 * part;
    if train == 0 {
        return Err(DatagenError::TooFewGroups(groups));
    }
    Ok((train, part, part))
}

pub fn role_of_group(group: usize, counts: (usize, usize, usize)) -> Role {
    if group < counts.0 {
        Role::Train
    } else if group < counts.0 + counts.1 {
        Role::Val
    } else {
        Role::Test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub group: usize,
    pub frame: usize,
    pub readout_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub input: String,
    pub target: String,
    pub fieldmap: String,
    pub kspace: String,
    pub trajectory: String,
}

impl ManifestEntry {
    pub fn aug(&self) -> AugmentationParams {
        AugmentationParams {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_for(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String, DatagenError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// A synthesised frame.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub blurred: ComplexImage,
    pub truth: ComplexImage,
    /// Augmented field map used for the simulation.
    pub field: FieldMap,
    pub kspace: KspaceData,
}

/// Encoders cached per readout for one trajectory configuration.
pub struct Simulator {
    traj: TrajectoryConfig,
    cg_iters: usize,
    noise_std: f64,
    cache: Mutex<HashMap<u64, Arc<Encoder>>>,
}

impl Simulator {
    pub fn new(traj: TrajectoryConfig, cg_iters: usize, noise_std: f64) -> Self {
        Self {
            traj,
            cg_iters,
            noise_std,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn for_dataset(cfg: &DatasetConfig) -> Self {
        Self::new(cfg.trajectory.clone(), cfg.cg_iters, cfg.noise_std)
    }

    pub fn trajectory_config(&self) -> &TrajectoryConfig {
        &self.traj
    }

    pub fn encoder(&self, readout_s: f64) -> Result<Arc<Encoder>, DatagenError> {
        let key = readout_s.to_bits();
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(e.clone());
        }
        let t = &self.traj;
        let traj = Arc::new(make_default_spiral(t.matrix, t.fov_cm, readout_s, t.dt_s)?);
        let enc = Arc::new(Encoder::new(traj, t.matrix, t.matrix));
        Ok(self
            .cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(enc)
            .clone())
    }

    pub fn trajectory(&self, readout_s: f64) -> Result<Arc<SpiralTrajectory>, DatagenError> {
        Ok(self.encoder(readout_s)?.trajectory().clone())
    }

    /// Simulates `phantom` under its augmented field map and reconstructs
    /// ignoring off-resonance. `noise_rng` is only drawn from when noise is on.
    pub fn synth(
        &self,
        phantom: &Phantom,
        readout_s: f64,
        aug: AugmentationParams,
        noise_rng: &mut Rng,
    ) -> Result<SynthFrame, DatagenError> {
        let enc = self.encoder(readout_s)?;
        let field = augment_field_map(&phantom.fieldmap, aug)?;
        let clean = enc.forward(&phantom.image, OffResonance::Map(&field))?;
        let kspace = if self.noise_std > 0.0 {
            let noisy = clean
                .samples()
                .iter()
                .map(|z| {
                    let n = Complex64::new(noise_rng.normal(), noise_rng.normal());
                    z + n * self.noise_std
                })
                .collect();
            KspaceData::new(noisy, clean.trajectory().clone())?
        } else {
            clean
        };
        let blurred = enc.cg_recon(&kspace, None, self.cg_iters, BLUR_CG_TOL)?.image;
        Ok(SynthFrame {
            blurred,
            truth: phantom.image.clone(),
            field,
            kspace,
        })
    }
}

/// `(blurred input, ground truth)` for one phantom.
pub fn synth_pair(
    phantom: &Phantom,
    readout_s: f64,
    aug: AugmentationParams,
    traj: &TrajectoryConfig,
) -> Result<(ComplexImage, ComplexImage), DatagenError> {
    let sim = Simulator::new(traj.clone(), BLUR_CG_ITERS, 0.0);
    let f = sim.synth(phantom, readout_s, aug, &mut Rng::new(0))?;
    Ok((f.blurred, f.truth))
}

/// Per-frame random draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDraw {
    pub readout_s: f64,
    pub aug: AugmentationParams,
}

/// Seeded generators for one frame.
pub struct FrameSeeds {
    pub group: u64,
    pub frame: u64,
    pub draw: u64,
    pub noise: u64,
}

impl FrameSeeds {
    pub fn new(root: u64, group: usize, frame: usize) -> Self {
        Self {
            group: derive_seed(root, &format!("group/{group}")),
            frame: derive_seed(root, &format!("frame/{group}/{frame}")),
            draw: derive_seed(root, &format!("draw/{group}/{frame}")),
            noise: derive_seed(root, &format!("noise/{group}/{frame}")),
        }
    }
}

/// Group anatomy cache so every frame of a group shares one base shape.
struct Anatomies {
    size: usize,
    specs: Mutex<HashMap<u64, Arc<super::phantom::PhantomSpec>>>,
}

impl Anatomies {
    fn new(size: usize) -> Self {
        Self {
            size,
            specs: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, group_seed: u64) -> Arc<super::phantom::PhantomSpec> {
        if let Some(s) = self.specs.lock().expect("lock").get(&group_seed) {
            return s.clone();
        }
        let spec = Arc::new(random_spec(self.size, self.size, &mut Rng::new(group_seed)));
        self.specs
            .lock()
            .expect("lock")
            .entry(group_seed)
            .or_insert(spec)
            .clone()
    }
}

/// Phantom for `(group, frame)`; independent of the frame's readout and
/// augmentation draws.
pub fn frame_phantom(root: u64, size: usize, group: usize, frame: usize) -> Phantom {
    phantom_from(&Anatomies::new(size), &FrameSeeds::new(root, group, frame))
}

fn phantom_from(anat: &Anatomies, seeds: &FrameSeeds) -> Phantom {
    let spec = anat.get(seeds.group);
    make_variant(&spec, anat.size, anat.size, &mut Rng::new(seeds.frame))
}

/// Readout choice and `(α, β)` for a frame. Draws whose augmented map would
/// leave the ±1000 Hz field bound are redrawn from the same stream.
pub fn draw_frame(
    seed: u64,
    readouts_s: &[f64],
    field: &FieldMap,
) -> Result<FrameDraw, DatagenError> {
    let mut rng = Rng::new(seed);
    let readout_s = readouts_s[rng.below(readouts_s.len())];
    for _ in 0..MAX_AUG_DRAWS {
        let aug = AugmentationParams {
            alpha: rng.range(ALPHA_RANGE.0, ALPHA_RANGE.1),
            beta: rng.range(BETA_RANGE_HZ.0, BETA_RANGE_HZ.1),
        };
        if augment_field_map(field, aug).is_ok() {
            return Ok(FrameDraw { readout_s, aug });
        }
    }
    Err(DatagenError::Config(format!(
        "no admissible (α, β) after {MAX_AUG_DRAWS} draws"
    )))
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn trajectory_file(readout_s: f64) -> String {
    format!("trajectories/readout_{:.0}us.spdb", readout_s * 1e6)
}

/// Regenerates one frame, optionally at a different readout than recorded.
pub fn regenerate(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    readout_s: Option<f64>,
    sim: &Simulator,
) -> Result<SynthFrame, DatagenError> {
    let seeds = FrameSeeds::new(manifest.seed, entry.group, entry.frame);
    let phantom = phantom_from(&Anatomies::new(manifest.config.trajectory.matrix), &seeds);
    sim.synth(
        &phantom,
        readout_s.unwrap_or(entry.readout_s),
        entry.aug(),
        &mut Rng::new(seeds.noise),
    )
}

/// Synthesises every frame, writes SPDB arrays under `out/dataset/…`, the
/// trajectories, and `out/manifest.json`.
pub fn build_dataset(
    config: &DatasetConfig,
    seed: u64,
    out: &Path,
) -> Result<DatasetManifest, DatagenError> {
    config.validate()?;
    let counts = split_counts(config.groups)?;
    let sim = Simulator::for_dataset(config);
    let anat = Anatomies::new(config.trajectory.matrix);
    fs::create_dir_all(out.join("trajectories"))?;
    for &r in &config.readouts_s {
        let traj = sim.trajectory(r)?;
        save_tensor(out.join(trajectory_file(r)), &traj.to_tensor().into())?;
    }
    let jobs: Vec<(usize, usize)> = (0..config.groups)
        .flat_map(|g| (0..config.frames_per_group).map(move |f| (g, f)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(group, frame)| {
            let seeds = FrameSeeds::new(seed, group, frame);
            let phantom = phantom_from(&anat, &seeds);
            let draw = draw_frame(seeds.draw, &config.readouts_s, &phantom.fieldmap)?;
            let synth = sim.synth(
                &phantom,
                draw.readout_s,
                draw.aug,
                &mut Rng::new(seeds.noise),
            )?;
            let role = role_of_group(group, counts);
            let stem = format!("dataset/{}/g{group:03}/f{frame:04}", role.as_str());
            let path = |kind: &str| format!("{stem}.{kind}.spdb");
            fs::create_dir_all(out.join(&stem).parent().expect("has parent"))?;
            save_tensor(out.join(path("input")), &synth.blurred.to_tensor().into())?;
            save_tensor(out.join(path("target")), &synth.truth.to_tensor().into())?;
            save_tensor(out.join(path("fmap")), &synth.field.to_tensor().into())?;
            save_tensor(out.join(path("kspace")), &synth.kspace.to_tensor().into())?;
            Ok(ManifestEntry {
                id: format!("g{group:03}-f{frame:04}"),
                role,
                group,
                frame,
                readout_s: draw.readout_s,
                alpha: draw.aug.alpha,
                beta: draw.aug.beta,
                input: path("input"),
                target: path("target"),
                fieldmap: path("fmap"),
                kspace: path("kspace"),
                trajectory: trajectory_file(draw.readout_s),
            })
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    let manifest = DatasetManifest {
        seed,
        config: config.clone(),
        entries,
    };
    fs::write(out.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

/// Directory (relative to a dataset root) of the fixed-readout copy of a role.
pub fn sweep_dir(readout_s: f64) -> String {
    format!("sweep/readout_{:.0}us", readout_s * 1e6)
}

/// Re-synthesises every `role` entry of `manifest` at `readout_s` and writes
/// a self-contained dataset (arrays, trajectory, manifest) under `out`.
pub fn build_sweep(
    manifest: &DatasetManifest,
    role: Role,
    readout_s: f64,
    out: &Path,
) -> Result<DatasetManifest, DatagenError> {
    let sim = Simulator::for_dataset(&manifest.config);
    fs::create_dir_all(out.join("trajectories"))?;
    let traj = sim.trajectory(readout_s)?;
    save_tensor(out.join(trajectory_file(readout_s)), &traj.to_tensor().into())?;
    let chosen: Vec<&ManifestEntry> = manifest.entries_for(role).collect();
    let entries = chosen
        .par_iter()
        .map(|e| {
            let synth = regenerate(manifest, e, Some(readout_s), &sim)?;
            let stem = format!("dataset/{}/g{:03}/f{:04}", role.as_str(), e.group, e.frame);
            let path = |kind: &str| format!("{stem}.{kind}.spdb");
            fs::create_dir_all(out.join(&stem).parent().expect("has parent"))?;
            save_tensor(out.join(path("input")), &synth.blurred.to_tensor().into())?;
            save_tensor(out.join(path("target")), &synth.truth.to_tensor().into())?;
            save_tensor(out.join(path("fmap")), &synth.field.to_tensor().into())?;
            save_tensor(out.join(path("kspace")), &synth.kspace.to_tensor().into())?;
            Ok(ManifestEntry {
                readout_s,
                input: path("input"),
                target: path("target"),
                fieldmap: path("fmap"),
                kspace: path("kspace"),
                trajectory: trajectory_file(readout_s),
                ..(*e).clone()
            })
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    let sweep = DatasetManifest {
        seed: manifest.seed,
        config: DatasetConfig {
            readouts_s: vec![readout_s],
            ..manifest.config.clone()
        },
        entries,
    };
    fs::write(out.join(MANIFEST_FILE), sweep.to_json()?)?;
    Ok(sweep)
}

/// Arrays of one entry as stored on disk.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub input: ComplexImage,
    pub target: ComplexImage,
    pub field: FieldMap,
    pub kspace: Vec<Complex64>,
}

pub fn load_frame(root: &Path, entry: &ManifestEntry) -> Result<LoadedFrame, DatagenError> {
    let img = |p: &str| -> Result<ComplexImage, DatagenError> {
        Ok(ComplexImage::from_tensor(load_tensor(root.join(p))?.into_complex()?)?)
    };
    let field = FieldMap::from_tensor(&load_tensor(root.join(&entry.fieldmap))?.into_real()?)?;
    let kspace = load_tensor(root.join(&entry.kspace))?.into_complex()?.into_data();
    Ok(LoadedFrame {
        input: img(&entry.input)?,
        target: img(&entry.target)?,
        field,
        kspace,
    })
}

/// Directory holding the manifest, given either the directory or the file.
pub fn dataset_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
