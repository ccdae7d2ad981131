#![allow(dead_code)]

pub mod checks;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use framefill::cli::{cmd_gen_data, cmd_train, ExperimentConfig, TrainArgs};
use framefill::corpus::{load_dataset, Dataset, Video};
use framefill::denoiser::{Checkpoint, ConditioningLayout, NoisePredictor};
use framefill::{NoiseSchedule, Result};
use ndarray::{Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Knows the clean frames and returns the exact noise that produced `x_t`.
pub struct OracleDenoiser {
    pub x0: Array4<f32>,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn predict_noise(
        &self,
        x_t: &Array4<f32>,
        t: usize,
        _y: &Array4<f32>,
        layout: &ConditioningLayout,
    ) -> Result<Array4<f32>> {
        let ab = self.schedule.alpha_bar(t)?;
        let clean = self.x0.select(Axis(0), &layout.x);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(ndarray::Zip::from(x_t)
            .and(&clean)
            .map_collect(|&x, &c| ((x as f64 - a * c as f64) / b) as f32))
    }
}

/// A reduced configuration that keeps every command quick.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig::parse(
        r#"
[data]
test_count = 10

[corpus]
count = 8
frames = 16
height = 8
width = 8

[schedule]
steps = 10

[model]
height = 8
width = 8
k_latent = 5
k_obs = 5
base_width = 8
mid_width = 8
index_embed_dim = 4
time_embed_dim = 8
cond_dim = 8
norm_groups = 2
max_frames = 32

[train]
iterations = 6
k_latent = 5
k_obs = 5

[scheme]
observed = 6
stride = 5
group_size = 3
max_cond = 5
distance_size = 8
"#,
    )
    .expect("small config parses")
}

pub fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    path
}

pub fn gaussian_video(rng: &mut ChaCha8Rng, like: &Video, id: &str) -> Video {
    let frames = Array4::from_shape_simple_fn(like.frames().dim(), || {
        let z: f32 = StandardNormal.sample(rng);
        z.clamp(-1.0, 1.0)
    });
    Video::new(frames, like.frame_rate(), id).unwrap()
}

pub fn noise_dataset(like: &Dataset, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let videos = like
        .videos()
        .iter()
        .enumerate()
        .map(|(i, v)| gaussian_video(&mut rng, v, &format!("noise-{i:04}")))
        .collect();
    Dataset::new(videos, like.split()).unwrap()
}

static REFERENCE: Mutex<()> = Mutex::new(());

pub fn reference_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("reference-run")
}

/// Corpus and 2,000-iteration checkpoint of the default configuration,
/// trained once and kept under the cargo target directory.
pub fn reference_run() -> (ExperimentConfig, Dataset, Dataset, Checkpoint) {
    let _guard = REFERENCE.lock().unwrap_or_else(|e| e.into_inner());
    let config = ExperimentConfig::default();
    let dir = reference_dir();
    let tag = dir.join(format!("{}.ckpt", &config.digest()[..16]));
    if !tag.exists() {
        cmd_gen_data(&config, &dir).unwrap();
        let tmp = dir.join("training.ckpt");
        cmd_train(
            &config,
            &TrainArgs {
                data: dir.join("train"),
                out: tmp.clone(),
                init_from: None,
            },
        )
        .unwrap();
        std::fs::rename(&tmp, &tag).unwrap();
    }
    let train = load_dataset(&dir.join("train")).unwrap();
    let test = load_dataset(&dir.join("test")).unwrap();
    (config, train, test, Checkpoint::load(&tag).unwrap())
}
