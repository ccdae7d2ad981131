use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_layout, UNetDenoiser};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Optimisation settings. Batch size is always one example per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Frames denoised per training example.
    pub k_latent: usize,
    /// Conditioning frames per training example.
    pub k_obs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-4,
            k_latent: 10,
            k_obs: 10,
        }
    }
}

pub struct TrainOutcome {
    pub model: UNetDenoiser,
    /// One loss value per iteration.
    pub losses: Vec<f64>,
}

/// Adam (betas 0.9 / 0.999, no weight decay) on the epsilon-prediction MSE.
///
/// Each iteration draws a video, a random layout of `k_latent` noisy and
/// `k_obs` observed frames, a step `t` uniform in `1..=T` and fresh noise,
/// then takes one gradient step. Fully determined by `seed`.
pub fn train(
    model: UNetDenoiser,
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with_progress(model, dataset, schedule, config, seed, |_, _| {})
}

/// [`train`] with a callback invoked after every iteration with
/// `(iteration, loss)`.
pub fn train_with_progress(
    mut model: UNetDenoiser,
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let mcfg = model.config();
    if config.k_latent == 0 || config.k_latent > mcfg.k_latent || config.k_obs > mcfg.k_obs {
        return Err(Error::Config(format!(
            "training layout {}+{} does not fit model slots {}+{}",
            config.k_latent, config.k_obs, mcfg.k_latent, mcfg.k_obs
        )));
    }
    if !(config.learning_rate >= 0.0) {
        return Err(Error::Config("learning rate must be non-negative".into()));
    }
    let need = config.k_latent + config.k_obs;
    if let Some(v) = dataset.videos().iter().find(|v| v.len() < need) {
        return Err(Error::Layout(format!(
            "video {} has {} frames, training layouts need {need}",
            v.source_id(),
            v.len()
        )));
    }
    let (h, w, c) = dataset.frame_shape();
    model.set_schedule(schedule);
    let mut opt = AdamW::new(
        model.vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let video = &dataset.videos()[rng.random_range(0..dataset.len())];
        let layout = sample_layout(&mut rng, video.len(), config.k_latent, config.k_obs)?;
        let t = rng.random_range(1..=schedule.steps());
        let noise = Array4::from_shape_simple_fn((config.k_latent, h, w, c), || {
            rng.sample::<f32, _>(StandardNormal)
        });
        let loss = model.loss_tensor(video, &layout, t, &noise, schedule)?;
        let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NumericalDegeneracy(format!(
                "training loss became {value} at iteration {it}"
            )));
        }
        opt.backward_step(&loss)?;
        losses.push(value);
        progress(it, value);
    }
    Ok(TrainOutcome { model, losses })
}
