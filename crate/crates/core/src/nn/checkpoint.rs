//! Model checkpoints: one SPDB file per parameter tensor plus `model.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensors::{load_tensor, save_tensor, RealTensor, Rng};

use super::model::{AgCnnModel, ModelConfig};
use super::train::NORM_PERCENTILE;
use super::NnError;

pub const SIDECAR: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub norm_percentile: f64,
    pub seed: u64,
    pub param_count: usize,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &AgCnnModel, seed: u64) -> Result<(), NnError> {
    fs::create_dir_all(dir)?;
    let dims = model.parameter_dims();
    let mut params = Vec::new();
    for ((name, values), dims) in model.parameters().into_iter().zip(dims) {
        let file = format!("{name}.spdb");
        let t = RealTensor::from_vec(&dims, values.clone()).expect("finite weights");
        save_tensor(dir.join(&file), &t.into())?;
        params.push(ParamEntry { name, dims, file });
    }
    let meta = CheckpointMeta {
        config: model.config.clone(),
        norm_percentile: NORM_PERCENTILE,
        seed,
        param_count: model.param_count(),
        params,
    };
    fs::write(dir.join(SIDECAR), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(AgCnnModel, CheckpointMeta), NnError> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR))?)?;
    let mut model = AgCnnModel::init(meta.config.clone(), &mut Rng::new(0))?;
    let expected = model.parameter_dims();
    if expected.len() != meta.params.len() {
        return Err(NnError::Config(format!(
            "checkpoint lists {} tensors, architecture has {}",
            meta.params.len(),
            expected.len()
        )));
    }
    for ((p, entry), dims) in model.parameters_mut().into_iter().zip(&meta.params).zip(expected) {
        let t = load_tensor(dir.join(&entry.file))?.into_real()?;
        if t.dims() != dims.as_slice() {
            return Err(NnError::Shape {
                expected: format!("{dims:?} for {}", entry.name),
                got: t.dims().to_vec(),
            });
        }
        p.copy_from_slice(t.data());
    }
    Ok((model, meta))
}
