//! Conditional noise prediction.
//!
//! A [`NoisePredictor`] sees the noisy frames being generated (the `X`
//! block), the diffusion step, the clean conditioning frames (the `Y` block)
//! and the frame indices of both, and estimates the noise that was mixed into
//! the `X` block. [`UNetDenoiser`] is the trainable reference network;
//! anything else implementing the trait (analytic oracles in tests, external
//! models) plugs into the sampler the same way.

mod checkpoint;
mod train;
mod unet;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Video;
use crate::error::{Error, Result};
use crate::frames::FrameIndexSet;
use crate::schedule::NoiseSchedule;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use train::{train, train_with_progress, TrainConfig, TrainOutcome};
pub use unet::{OutputKind, UNetConfig, UNetDenoiser};

/// Which frames are denoised (`x`) and which are given (`y`), in the order
/// their frame blocks are supplied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningLayout {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

impl ConditioningLayout {
    pub fn new(x: Vec<usize>, y: Vec<usize>) -> Result<Self> {
        let layout = Self { x, y };
        layout.check_structure()?;
        Ok(layout)
    }

    pub fn from_sets(x: &FrameIndexSet, y: &FrameIndexSet) -> Result<Self> {
        Self::new(x.as_slice().to_vec(), y.as_slice().to_vec())
    }

    fn check_structure(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::Layout("layout has no frames to denoise".into()));
        }
        let mut all: Vec<usize> = self.x.iter().chain(&self.y).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Layout(
                "layout repeats a frame or overlaps x and y".into(),
            ));
        }
        Ok(())
    }

    /// Structural checks plus every index inside a video of `len` frames.
    pub fn validate(&self, len: usize) -> Result<()> {
        self.check_structure()?;
        if let Some(i) = self.x.iter().chain(&self.y).find(|&&i| i >= len) {
            return Err(Error::Layout(format!(
                "frame {i} outside a video of {len} frames"
            )));
        }
        Ok(())
    }
}

/// Conditional noise estimator `eps(x_t, t | y, layout)`.
pub trait NoisePredictor: Sync {
    /// `x_t` holds `layout.x.len()` frames and `y` holds `layout.y.len()`
    /// frames, both `(frames, height, width, channels)`. Returns a block
    /// shaped like `x_t`.
    fn predict_noise(
        &self,
        x_t: &Array4<f32>,
        t: usize,
        y: &Array4<f32>,
        layout: &ConditioningLayout,
    ) -> Result<Array4<f32>>;
}

/// Check the frame blocks against a layout; shared by implementors.
pub fn check_blocks(x_t: &Array4<f32>, y: &Array4<f32>, layout: &ConditioningLayout) -> Result<()> {
    layout.check_structure()?;
    let (nx, h, w, c) = x_t.dim();
    let (ny, yh, yw, yc) = y.dim();
    if nx != layout.x.len() || ny != layout.y.len() {
        return Err(Error::Contract(format!(
            "blocks carry {nx} noisy and {ny} observed frames, layout names {} and {}",
            layout.x.len(),
            layout.y.len()
        )));
    }
    if ny > 0 && (yh, yw, yc) != (h, w, c) {
        return Err(Error::Contract(format!(
            "observed frames are {yh}x{yw}x{yc}, noisy frames are {h}x{w}x{c}"
        )));
    }
    Ok(())
}

/// Draw a training layout: `k_latent` frames to denoise and `k_obs` of the
/// remaining frames to condition on, uniformly without replacement.
pub fn sample_layout<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    k_latent: usize,
    k_obs: usize,
) -> Result<ConditioningLayout> {
    if k_latent == 0 {
        return Err(Error::Layout("k_latent must be at least 1".into()));
    }
    if len < k_latent + k_obs {
        return Err(Error::Layout(format!(
            "video of {len} frames is shorter than k_latent + k_obs = {}",
            k_latent + k_obs
        )));
    }
    let mut picked = rand::seq::index::sample(rng, len, k_latent + k_obs).into_vec();
    picked.shuffle(rng);
    let mut x = picked[..k_latent].to_vec();
    let mut y = picked[k_latent..].to_vec();
    x.sort_unstable();
    y.sort_unstable();
    ConditioningLayout::new(x, y)
}

/// Mean squared error between `noise` and the model's estimate of it after
/// corrupting the `x` frames of `video` to step `t`.
///
/// Frames outside `layout.x` and `layout.y` are never read.
pub fn training_loss(
    model: &dyn NoisePredictor,
    video: &Video,
    layout: &ConditioningLayout,
    t: usize,
    noise: &Array4<f32>,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    layout.validate(video.len())?;
    let x0 = video.select(&layout.x);
    let x_t = schedule.marginal(&x0, t, noise)?;
    let y = video.select(&layout.y);
    let eps = model.predict_noise(&x_t, t, &y, layout)?;
    if eps.dim() != noise.dim() {
        return Err(Error::Contract(
            "prediction shape differs from noise".into(),
        ));
    }
    let sum: f64 = eps
        .iter()
        .zip(noise)
        .map(|(a, b)| {
            let d = (*a as f64) - (*b as f64);
            d * d
        })
        .sum();
    Ok(sum / noise.len() as f64)
}
