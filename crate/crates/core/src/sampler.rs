//! Ancestral sampling for one stage and the multi-stage completion driver.
//!
//! One reverse step computes
//!
//! ```text
//! mu      = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//! x_{t-1} = mu + sqrt(beta_t) * noise          (noise = 0 at t = 1)
//! ```
//!
//! A stage draws its `X` block from a unit Gaussian, runs the reverse chain
//! from `T` down to 1 conditioned on the already known `Y` frames, and clamps
//! the result to `[-1, 1]`. The driver runs stages in order, each one
//! reading `v[Y_s]` and writing `v[X_s]`.

use std::time::Instant;

use ndarray::{Array4, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Video;
use crate::denoiser::{ConditioningLayout, NoisePredictor};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::frames::FrameIndexSet;
use crate::schedule::NoiseSchedule;
use crate::schemes::validate_scheme;

/// Frames to generate (`x`) conditioned on already known frames (`y`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingStage {
    pub x: FrameIndexSet,
    pub y: FrameIndexSet,
}

impl SamplingStage {
    pub fn new(x: impl Into<FrameIndexSet>, y: impl Into<FrameIndexSet>) -> Result<Self> {
        let stage = Self {
            x: x.into(),
            y: y.into(),
        };
        if stage.x.is_empty() {
            return Err(Error::Scheme("stage has no frames to sample".into()));
        }
        if !stage.x.is_disjoint(&stage.y) {
            return Err(Error::Scheme(format!(
                "stage samples and conditions on the same frames {}",
                stage.x.intersection(&stage.y)
            )));
        }
        Ok(stage)
    }

    pub fn layout(&self) -> Result<ConditioningLayout> {
        ConditioningLayout::from_sets(&self.x, &self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub stages: Vec<SamplingStage>,
    pub video_length: usize,
    /// Frames given before sampling starts.
    pub observed: FrameIndexSet,
}

impl SamplingScheme {
    pub fn new(stages: Vec<SamplingStage>, video_length: usize, observed: FrameIndexSet) -> Self {
        Self {
            stages,
            video_length,
            observed,
        }
    }

    /// Coverage, disjointness and causality, as a single error.
    pub fn check(&self) -> Result<()> {
        let violations = validate_scheme(self);
        if violations.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::Scheme(msg.join("; ")))
        }
    }
}

/// One reverse step from `t` to `t - 1`.
///
/// `noise` must be all zeros at `t = 1`.
pub fn reverse_step(
    model: &dyn NoisePredictor,
    x_t: &Array4<f32>,
    t: usize,
    y: &Array4<f32>,
    layout: &ConditioningLayout,
    schedule: &NoiseSchedule,
    noise: &Array4<f32>,
) -> Result<Array4<f32>> {
    let alpha = schedule.alpha(t)?;
    let alpha_bar = schedule.alpha_bar(t)?;
    if noise.dim() != x_t.dim() {
        return Err(Error::Contract(format!(
            "noise {:?} does not match x_t {:?}",
            noise.dim(),
            x_t.dim()
        )));
    }
    if t == 1 && noise.iter().any(|&n| n != 0.0) {
        return Err(Error::Contract("the final step takes no noise".into()));
    }
    let eps = model.predict_noise(x_t, t, y, layout)?;
    if eps.dim() != x_t.dim() {
        return Err(Error::Contract("noise estimate has the wrong shape".into()));
    }
    // a noise-free step leaves nothing to remove
    let coef = if alpha == 1.0 {
        0.0
    } else {
        (1.0 - alpha) / (1.0 - alpha_bar).sqrt()
    };
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = (1.0 - alpha).sqrt();
    Ok(Zip::from(x_t)
        .and(&eps)
        .and(noise)
        .map_collect(|&x, &e, &n| {
            let mu = (x as f64 - coef * e as f64) * inv_sqrt_alpha;
            (mu + sigma * n as f64) as f32
        }))
}

/// How a stage injects noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Fresh Gaussian noise at every step above 1.
    #[default]
    Ancestral,
    /// No injected noise; only `x_T` is random.
    Deterministic,
}

/// Run the reverse chain from `x_T` (step `T`) down to step 0, unclamped.
pub fn reverse_chain(
    model: &dyn NoisePredictor,
    x_start: Array4<f32>,
    y: &Array4<f32>,
    layout: &ConditioningLayout,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
    mode: NoiseMode,
) -> Result<Array4<f32>> {
    let mut x = x_start;
    let zeros = Array4::zeros(x.dim());
    for t in (1..=schedule.steps()).rev() {
        let noise = if t > 1 && mode == NoiseMode::Ancestral {
            gaussian(rng, x.dim())
        } else {
            zeros.clone()
        };
        x = reverse_step(model, &x, t, y, layout, schedule, &noise)?;
    }
    Ok(x)
}

fn gaussian(rng: &mut impl Rng, dim: (usize, usize, usize, usize)) -> Array4<f32> {
    Array4::from_shape_simple_fn(dim, || rng.sample::<f32, _>(StandardNormal))
}

/// Sample the `X` block of one stage; `y` holds the frames of `stage.y` in
/// ascending index order. Bit-identical for a fixed seed.
pub fn sample_stage(
    model: &dyn NoisePredictor,
    y: &Array4<f32>,
    stage: &SamplingStage,
    frame_shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Array4<f32>> {
    sample_stage_with(
        model,
        y,
        stage,
        frame_shape,
        schedule,
        seed,
        NoiseMode::Ancestral,
    )
}

pub fn sample_stage_with(
    model: &dyn NoisePredictor,
    y: &Array4<f32>,
    stage: &SamplingStage,
    frame_shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    seed: u64,
    mode: NoiseMode,
) -> Result<Array4<f32>> {
    let layout = stage.layout()?;
    let (h, w, c) = frame_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_start = gaussian(&mut rng, (stage.x.len(), h, w, c));
    let mut x = reverse_chain(model, x_start, y, &layout, schedule, &mut rng, mode)?;
    x.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(x)
}

/// Hands out stages during sampling; adaptive planners look at the frames
/// generated so far.
pub trait StageSource {
    fn video_length(&self) -> usize;
    fn observed(&self) -> &FrameIndexSet;
    /// The next stage, given which frames are known and the video buffer
    /// (`(video_length, h, w, c)`, valid at `known`). `None` when done.
    fn next_stage(
        &mut self,
        known: &FrameIndexSet,
        video: &Array4<f32>,
    ) -> Result<Option<SamplingStage>>;
}

/// A precomputed scheme as a [`StageSource`].
pub struct FixedPlan<'a> {
    scheme: &'a SamplingScheme,
    next: usize,
}

impl<'a> FixedPlan<'a> {
    pub fn new(scheme: &'a SamplingScheme) -> Self {
        Self { scheme, next: 0 }
    }
}

impl StageSource for FixedPlan<'_> {
    fn video_length(&self) -> usize {
        self.scheme.video_length
    }

    fn observed(&self) -> &FrameIndexSet {
        &self.scheme.observed
    }

    fn next_stage(&mut self, _: &FrameIndexSet, _: &Array4<f32>) -> Result<Option<SamplingStage>> {
        let stage = self.scheme.stages.get(self.next).cloned();
        self.next += 1;
        Ok(stage)
    }
}

/// What happened in one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// 1-based.
    pub stage: usize,
    pub x: FrameIndexSet,
    pub y: FrameIndexSet,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    /// `(video_length, h, w, c)`.
    pub frames: Array4<f32>,
    pub trace: Vec<StageTrace>,
    /// Writes per frame index made by the stages; observed frames stay 0.
    pub write_counts: Vec<u32>,
}

impl Completion {
    pub fn scheme(&self, observed: FrameIndexSet) -> SamplingScheme {
        let stages = self
            .trace
            .iter()
            .map(|s| SamplingStage {
                x: s.x.clone(),
                y: s.y.clone(),
            })
            .collect();
        SamplingScheme::new(stages, self.frames.len_of(Axis(0)), observed)
    }

    pub fn into_video(self, frame_rate: f32, source_id: impl Into<String>) -> Result<Video> {
        Video::new(self.frames, frame_rate, source_id)
    }
}

/// Complete a video from a fixed scheme. `observed_frames` holds the frames
/// of `scheme.observed` in ascending index order. The scheme is checked
/// before any sampling.
pub fn sample_video(
    model: &dyn NoisePredictor,
    scheme: &SamplingScheme,
    observed_frames: &Array4<f32>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Completion> {
    scheme.check()?;
    drive(
        model,
        &mut FixedPlan::new(scheme),
        observed_frames,
        schedule,
        seed,
    )
}

/// Complete a video from any stage source. Each stage is checked against
/// what is known at the time it is issued, and coverage at the end.
///
/// Stage `s` (1-based) is seeded with a value derived from `(seed, s)`.
pub fn drive(
    model: &dyn NoisePredictor,
    source: &mut dyn StageSource,
    observed_frames: &Array4<f32>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Completion> {
    let n = source.video_length();
    let observed = source.observed().clone();
    let (count, h, w, c) = observed_frames.dim();
    if count != observed.len() {
        return Err(Error::Contract(format!(
            "{count} observed frames supplied for {} observed indices",
            observed.len()
        )));
    }
    if observed.last().is_some_and(|i| i >= n) {
        return Err(Error::Scheme(format!(
            "observed frames {observed} exceed a video of {n} frames"
        )));
    }
    let mut video = Array4::<f32>::zeros((n, h, w, c));
    for (slot, &i) in observed.iter().enumerate() {
        video
            .index_axis_mut(Axis(0), i)
            .assign(&observed_frames.index_axis(Axis(0), slot));
    }
    let mut known = observed.clone();
    let mut writes = vec![0u32; n];
    let mut trace = Vec::new();
    while let Some(stage) = source.next_stage(&known, &video)? {
        let number = trace.len() + 1;
        if stage.x.is_empty() || !stage.x.is_disjoint(&stage.y) {
            return Err(Error::Scheme(format!("stage {number} is malformed")));
        }
        if stage.x.last().is_some_and(|i| i >= n) {
            return Err(Error::Scheme(format!(
                "stage {number} samples beyond frame {}",
                n - 1
            )));
        }
        if !stage.y.is_subset(&known) {
            return Err(Error::Scheme(format!(
                "stage {number} conditions on unknown frames {}",
                stage.y.difference(&known)
            )));
        }
        if !stage.x.is_disjoint(&known) {
            return Err(Error::Scheme(format!(
                "stage {number} resamples known frames {}",
                stage.x.intersection(&known)
            )));
        }
        let stage_seed = derive_seed(seed, number as u64);
        let y = video.select(Axis(0), stage.y.as_slice());
        let started = Instant::now();
        let x = sample_stage(model, &y, &stage, (h, w, c), schedule, stage_seed)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        for (slot, &i) in stage.x.iter().enumerate() {
            video
                .index_axis_mut(Axis(0), i)
                .assign(&x.index_axis(Axis(0), slot));
            writes[i] += 1;
            known.insert(i);
        }
        trace.push(StageTrace {
            stage: number,
            x: stage.x,
            y: stage.y,
            seed: stage_seed,
            wall_seconds,
        });
    }
    if known.len() != n {
        return Err(Error::Scheme(format!(
            "frames {} were never sampled",
            FrameIndexSet::range(0, n).difference(&known)
        )));
    }
    Ok(Completion {
        frames: video,
        trace,
        write_counts: writes,
    })
}
