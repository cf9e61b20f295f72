//! Mini-batch training with deterministic gradient reduction and resumable state.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensors::{channels_to_complex, complex_to_channels, ComplexImage, RealTensor, Rng};

use super::adam::AdamState;
use super::loss::loss;
use super::model::{AgCnnModel, Gradients, ModelConfig};
use super::NnError;

/// Quantile of the input magnitude used as the per-frame intensity scale.
pub const NORM_PERCENTILE: f64 = 0.99;

/// Nearest-rank quantile of `|img|`; falls back to 1 for an all-zero image.
pub fn percentile_scale(img: &ComplexImage, q: f64) -> f64 {
    let mut mags = img.magnitude();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((q * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    let s = mags[rank - 1];
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// One normalised input/target pair in channel form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: RealTensor,
    pub target: RealTensor,
}

impl Sample {
    /// Scales both images by the input's intensity scale.
    pub fn from_pair(input: &ComplexImage, target: &ComplexImage) -> Self {
        let s = percentile_scale(input, NORM_PERCENTILE);
        Self {
            input: complex_to_channels(&input.scaled(1.0 / s)),
            target: complex_to_channels(&target.scaled(1.0 / s)),
        }
    }
}

/// Normalises, runs the network, and undoes the scaling.
pub fn deblur(model: &AgCnnModel, img: &ComplexImage) -> Result<ComplexImage, NnError> {
    let s = percentile_scale(img, NORM_PERCENTILE);
    let out = model.forward(&complex_to_channels(&img.scaled(1.0 / s)))?;
    Ok(channels_to_complex(&out).expect("two channels").scaled(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub weights: Vec<Vec<f64>>,
    pub best_weights: Option<Vec<Vec<f64>>>,
    pub best_val: f64,
    pub adam: AdamState,
    pub rng: Rng,
    pub log: TrainLog,
}

pub struct Trainer {
    model: AgCnnModel,
    best: Option<AgCnnModel>,
    best_val: f64,
    adam: AdamState,
    rng: Rng,
    config: TrainConfig,
    log: TrainLog,
}

fn per_sample(model: &AgCnnModel, s: &Sample) -> Result<(f64, Gradients), NnError> {
    let cache = model.forward_train(&s.input)?;
    let l = loss(&cache.output, &s.target)?;
    let g = model.backward(&cache, &l.grad)?;
    Ok((l.total, g))
}

/// Mean loss over `data`, summed in index order.
pub fn mean_loss(model: &AgCnnModel, data: &[Sample]) -> Result<f64, NnError> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|s| Ok(loss(&model.forward(&s.input)?, &s.target)?.total))
        .collect::<Result<_, NnError>>()?;
    Ok(losses.iter().sum::<f64>() / data.len().max(1) as f64)
}

fn load_weights(model: &mut AgCnnModel, weights: &[Vec<f64>]) -> Result<(), NnError> {
    let mut params = model.parameters_mut();
    if params.len() != weights.len() || params.iter().zip(weights).any(|(p, w)| p.len() != w.len())
    {
        return Err(NnError::Config("stored weights do not fit the architecture".into()));
    }
    for (p, w) in params.iter_mut().zip(weights) {
        p.copy_from_slice(w);
    }
    Ok(())
}

fn weights_of(model: &AgCnnModel) -> Vec<Vec<f64>> {
    model.parameters().into_iter().map(|(_, p)| p.clone()).collect()
}

impl Trainer {
    /// Initialises weights and then the shuffling stream from `rng`.
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        mut rng: Rng,
    ) -> Result<Self, NnError> {
        if config.batch_size == 0 || config.epochs == 0 {
            return Err(NnError::Config("epochs and batch size must be positive".into()));
        }
        let model = AgCnnModel::init(model_config, &mut rng)?;
        let adam = AdamState::for_model(&model, config.lr);
        Ok(Self {
            model,
            best: None,
            best_val: f64::INFINITY,
            adam,
            rng,
            config,
            log: TrainLog::default(),
        })
    }

    pub fn from_state(state: TrainerState) -> Result<Self, NnError> {
        let mut model = AgCnnModel::init(state.model_config.clone(), &mut Rng::new(0))?;
        load_weights(&mut model, &state.weights)?;
        let best = match &state.best_weights {
            Some(w) => {
                let mut b = model.clone();
                load_weights(&mut b, w)?;
                Some(b)
            }
            None => None,
        };
        Ok(Self {
            model,
            best,
            best_val: state.best_val,
            adam: state.adam,
            rng: state.rng,
            config: state.train_config,
            log: state.log,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            weights: weights_of(&self.model),
            best_weights: self.best.as_ref().map(weights_of),
            best_val: self.best_val,
            adam: self.adam.clone(),
            rng: self.rng.clone(),
            log: self.log.clone(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.log.epochs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.config.epochs
    }

    pub fn model(&self) -> &AgCnnModel {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// One pass over `train` in a freshly shuffled order, then validation.
    /// Without validation data the training loss selects the best weights.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord, NnError> {
        if train.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| per_sample(&self.model, &train[i]))
                .collect::<Result<_, NnError>>()?;
            let mut grads = Gradients::zeros_like(&self.model);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_assign(g);
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: b });
            }
            total += batch_loss * batch.len() as f64;
            self.adam.step_model(&mut self.model, &grads);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            mean_loss(&self.model, train)?
        } else {
            mean_loss(&self.model, val)?
        };
        if !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch, batch: 0 });
        }
        if val_loss < self.best_val {
            self.best_val = val_loss;
            self.best = Some(self.model.clone());
            self.log.best_epoch = Some(epoch);
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.log.epochs.push(record.clone());
        Ok(record)
    }

    /// Best-validation weights (current weights if no epoch ran).
    pub fn finish(self) -> (AgCnnModel, TrainLog) {
        (self.best.unwrap_or(self.model), self.log)
    }
}

/// Trains for `config.epochs` epochs and returns the best-validation weights.
pub fn train(
    train: &[Sample],
    val: &[Sample],
    model_config: ModelConfig,
    config: TrainConfig,
    rng: Rng,
) -> Result<(AgCnnModel, TrainLog), NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut t = Trainer::new(model_config, config, rng)?;
    while !t.is_finished() {
        t.run_epoch(train, val)?;
    }
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            kernels: [3, 3, 1],
            channels: [4, 2],
            ..ModelConfig::agcnn(3, 1)
        }
    }

    fn sample(seed: u64) -> Sample {
        let mut rng = Rng::new(seed);
        let mut t = |_| RealTensor::from_vec(&[6, 6, 2], (0..72).map(|_| rng.normal()).collect());
        Sample {
            input: t(0).unwrap(),
            target: t(1).unwrap(),
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = train(&[], &[], tiny(), TrainConfig::default(), Rng::new(0)).unwrap_err();
        assert!(matches!(err, NnError::EmptyDataset));
    }

    #[test]
    fn percentile_nearest_rank() {
        let data = (1..=100).map(|v| num_complex::Complex64::new(v as f64, 0.0)).collect();
        let img = ComplexImage::from_vec(10, 10, data).unwrap();
        assert_eq!(percentile_scale(&img, 0.99), 99.0);
        assert_eq!(percentile_scale(&ComplexImage::zeros(4, 4), 0.99), 1.0);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data: Vec<Sample> = (0..5).map(sample).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            lr: 1e-3,
            seed: 1,
        };
        let mut a = Trainer::new(tiny(), cfg.clone(), Rng::new(7)).unwrap();
        for _ in 0..3 {
            a.run_epoch(&data, &[]).unwrap();
        }
        let mut b = Trainer::new(tiny(), cfg, Rng::new(7)).unwrap();
        b.run_epoch(&data, &[]).unwrap();
        let json = serde_json::to_string(&b.state()).unwrap();
        let mut c = Trainer::from_state(serde_json::from_str(&json).unwrap()).unwrap();
        for _ in 0..2 {
            c.run_epoch(&data, &[]).unwrap();
        }
        assert_eq!(a.model(), c.model());
        let la: Vec<f64> = a.log().epochs.iter().map(|e| e.train_loss).collect();
        let lc: Vec<f64> = c.log().epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(la, lc);
    }
}
