//! Videos, datasets, the synthetic driving corpus and the on-disk frame layout.
//!
//! Frame values live in `[-1, 1]`. On disk each frame is an 8-bit PNG and a
//! stored byte `b` maps to `b / 127.5 - 1`. The synthetic renderer only emits
//! values on that 8-bit grid, so saving and reloading it is exact.
//!
//! Layout of a dataset root:
//!
//! ```text
//! <root>/manifest.json
//! <root>/videos/<id>/frame_00000.png
//! <root>/videos/<id>/frame_00001.png
//! ...
//! ```

use std::fs;
use std::path::Path;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{derive_seed, Fingerprint};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "framefill-dataset/1";

/// Map a stored byte to the model value range.
pub fn byte_to_value(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Nearest stored byte for a model value; out-of-range values saturate.
pub fn value_to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Snap a value onto the 8-bit storage grid.
pub fn quantize(v: f32) -> f32 {
    byte_to_value(value_to_byte(v))
}

/// A finite frame sequence, `(frames, height, width, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Array4<f32>,
    frame_rate: f32,
    source_id: String,
}

impl Video {
    pub fn new(frames: Array4<f32>, frame_rate: f32, source_id: impl Into<String>) -> Result<Self> {
        let (t, h, w, c) = frames.dim();
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Contract(format!(
                "video shape ({t}, {h}, {w}, {c}) has an empty axis"
            )));
        }
        if let Some(v) = frames.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Contract(format!(
                "video value {v} outside the finite range [-1, 1]"
            )));
        }
        Ok(Self {
            frames,
            frame_rate,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &Array4<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array4<f32> {
        self.frames
    }

    pub fn frame(&self, index: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(Axis(0), index)
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width, channels)`.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.frames.dim();
        (h, w, c)
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Gather the given frames, in the given order, into a new block.
    pub fn select(&self, indices: &[usize]) -> Array4<f32> {
        self.frames.select(Axis(0), indices)
    }

    /// Content hash over shape, frame rate, id and values.
    pub fn digest(&self) -> String {
        let mut fp = Fingerprint::new();
        self.feed(&mut fp);
        fp.finish()
    }

    /// Hash of the pixel values and shape only.
    pub fn content_digest(&self) -> String {
        let mut fp = Fingerprint::new();
        let (t, h, w, c) = self.frames.dim();
        for d in [t, h, w, c] {
            fp.u64(d as u64);
        }
        fp.f32s(self.frames.iter().copied());
        fp.finish()
    }

    fn feed(&self, fp: &mut Fingerprint) {
        fp.str(&self.source_id).f64(self.frame_rate as f64);
        let (t, h, w, c) = self.frames.dim();
        for d in [t, h, w, c] {
            fp.u64(d as u64);
        }
        fp.f32s(self.frames.iter().copied());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// An ordered, nonempty list of same-shaped videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    videos: Vec<Video>,
    split: Split,
    manifest_digest: String,
}

impl Dataset {
    pub fn new(videos: Vec<Video>, split: Split) -> Result<Self> {
        let first = videos
            .first()
            .ok_or_else(|| Error::Contract("dataset has no videos".into()))?;
        let shape = first.frame_shape();
        if let Some(v) = videos.iter().find(|v| v.frame_shape() != shape) {
            return Err(Error::Integrity(format!(
                "video {} has frame shape {:?}, dataset uses {:?}",
                v.source_id(),
                v.frame_shape(),
                shape
            )));
        }
        let mut fp = Fingerprint::new();
        fp.u64(videos.len() as u64);
        for v in &videos {
            v.feed(&mut fp);
        }
        let manifest_digest = fp.finish();
        Ok(Self {
            videos,
            split,
            manifest_digest,
        })
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn into_videos(self) -> Vec<Video> {
        self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn manifest_digest(&self) -> &str {
        &self.manifest_digest
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.videos[0].frame_shape()
    }
}

/// Parameters of the procedural driving scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Moving rectangles per scene.
    pub objects: usize,
    /// Horizon position as a fraction of the frame height.
    pub horizon: f64,
    /// Horizontal speed range of each object, pixels per frame.
    pub speed_min: usize,
    pub speed_max: usize,
    /// Side-length range of each object, pixels.
    pub object_min: usize,
    pub object_max: usize,
    pub night_probability: f64,
    pub frame_rate: f32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 36,
            frames: 30,
            height: 16,
            width: 16,
            channels: 3,
            objects: 2,
            horizon: 0.4,
            speed_min: 1,
            speed_max: 2,
            object_min: 3,
            object_max: 5,
            night_probability: 0.3,
            frame_rate: 10.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("count", self.count),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("object_min", self.object_min),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("corpus {name} must be at least 1")));
        }
        if self.object_min > self.object_max {
            return Err(Error::Config("corpus object_min exceeds object_max".into()));
        }
        if self.speed_min > self.speed_max {
            return Err(Error::Config("corpus speed_min exceeds speed_max".into()));
        }
        if !(0.0..=1.0).contains(&self.horizon) {
            return Err(Error::Config("corpus horizon must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.night_probability) {
            return Err(Error::Config(
                "corpus night_probability must lie in [0, 1]".into(),
            ));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("corpus frame_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeOfDay {
    Day,
    Night,
}

/// One rectangle and its per-frame top-left positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingObject {
    pub width: usize,
    pub height: usize,
    pub color: [f32; 3],
    /// Signed horizontal velocity in pixels per frame.
    pub velocity: i64,
    /// Top-left corner `(row, col)` for every frame.
    pub track: Vec<(usize, usize)>,
}

/// Everything needed to render one synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub horizon_row: usize,
    pub time_of_day: TimeOfDay,
    pub sky_top: [f32; 3],
    pub sky_horizon: [f32; 3],
    pub road_near: [f32; 3],
    pub road_far: [f32; 3],
    pub objects: Vec<MovingObject>,
}

/// Draw the scene parameters for video `index` of a corpus.
pub fn plan_scene(config: &CorpusConfig, seed: u64, index: usize) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    let (t_len, h, w) = (config.frames, config.height, config.width);
    let horizon_row = ((config.horizon * h as f64).round() as usize).min(h);
    let time_of_day = if rng.random_bool(config.night_probability) {
        TimeOfDay::Night
    } else {
        TimeOfDay::Day
    };
    let light = match time_of_day {
        TimeOfDay::Day => 1.0,
        TimeOfDay::Night => 0.3,
    };
    let tint: f32 = rng.random_range(-0.1..0.1);
    let scale = |c: [f32; 3]| c.map(|v| (v * light + tint).clamp(0.0, 1.0));
    let sky_top = scale([0.25, 0.45, 0.85]);
    let sky_horizon = scale([0.7, 0.8, 0.95]);
    let road_far = scale([0.45, 0.45, 0.45]);
    let road_near = scale([0.25, 0.25, 0.27]);

    let mut objects = Vec::with_capacity(config.objects);
    for _ in 0..config.objects {
        let ow = rng
            .random_range(config.object_min..=config.object_max)
            .min(w);
        let oh = rng
            .random_range(config.object_min..=config.object_max)
            .min(h);
        let color = [
            rng.random_range(0.55..1.0f32),
            rng.random_range(0.0..0.5f32),
            rng.random_range(0.0..0.4f32),
        ];
        let color = color.map(|c| c * if light < 1.0 { 0.8 } else { 1.0 });
        let speed = rng.random_range(config.speed_min..=config.speed_max) as i64;
        let velocity = if rng.random_bool(0.5) { speed } else { -speed };
        // Objects ride on the road when it is tall enough.
        let row = if h - horizon_row >= oh {
            rng.random_range(horizon_row..=h - oh)
        } else {
            rng.random_range(0..=h - oh)
        };
        let track = plan_track(&mut rng, w, ow, velocity, t_len)
            .into_iter()
            .map(|col| (row, col))
            .collect();
        objects.push(MovingObject {
            width: ow,
            height: oh,
            color,
            velocity,
            track,
        });
    }
    Ok(Scene {
        frames: t_len,
        height: h,
        width: w,
        channels: config.channels,
        horizon_row,
        time_of_day,
        sky_top,
        sky_horizon,
        road_near,
        road_far,
        objects,
    })
}

/// Column positions for one object. When the whole path fits inside the
/// frame the start is chosen so that it never touches an edge; otherwise the
/// object bounces off the borders.
fn plan_track(
    rng: &mut ChaCha8Rng,
    width: usize,
    obj: usize,
    velocity: i64,
    frames: usize,
) -> Vec<usize> {
    let span = (width - obj) as i64;
    let travel = velocity.abs() * (frames as i64 - 1);
    if travel <= span {
        let slack = span - travel;
        let offset = rng.random_range(0..=slack);
        let start = if velocity >= 0 { offset } else { span - offset };
        return (0..frames as i64)
            .map(|t| (start + velocity * t) as usize)
            .collect();
    }
    let mut x = rng.random_range(0..=span);
    let mut v = velocity;
    let mut track = Vec::with_capacity(frames);
    for _ in 0..frames {
        track.push(x as usize);
        let mut next = x + v;
        if next < 0 || next > span {
            v = -v;
            next = (x + v).clamp(0, span);
        }
        x = next;
    }
    track
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

impl Scene {
    fn channel_value(&self, rgb: [f32; 3], channel: usize) -> f32 {
        let unit = if self.channels == 1 {
            (rgb[0] + rgb[1] + rgb[2]) / 3.0
        } else {
            rgb[channel % 3]
        };
        quantize(unit * 2.0 - 1.0)
    }

    /// Static road and sky, no objects.
    pub fn render_background(&self) -> Array3<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = Array3::zeros((h, w, c));
        for r in 0..h {
            let rgb = if r < self.horizon_row {
                let t = r as f32 / self.horizon_row.max(1) as f32;
                lerp(self.sky_top, self.sky_horizon, t)
            } else {
                let t = (r - self.horizon_row) as f32 / (h - self.horizon_row).max(1) as f32;
                lerp(self.road_far, self.road_near, t)
            };
            for col in 0..w {
                // Lane marking down the middle of the road.
                let rgb = if r >= self.horizon_row && col == w / 2 && (r % 3) != 2 {
                    lerp(rgb, [0.9, 0.9, 0.8], 0.6)
                } else {
                    rgb
                };
                for ch in 0..c {
                    out[[r, col, ch]] = self.channel_value(rgb, ch);
                }
            }
        }
        out
    }

    pub fn render_frame(&self, t: usize) -> Array3<f32> {
        let mut frame = self.render_background();
        for obj in &self.objects {
            let (row, col) = obj.track[t];
            for r in row..(row + obj.height).min(self.height) {
                for cc in col..(col + obj.width).min(self.width) {
                    for ch in 0..self.channels {
                        frame[[r, cc, ch]] = self.channel_value(obj.color, ch);
                    }
                }
            }
        }
        frame
    }

    pub fn render(&self) -> Array4<f32> {
        let mut out = Array4::zeros((self.frames, self.height, self.width, self.channels));
        for t in 0..self.frames {
            out.index_axis_mut(Axis(0), t).assign(&self.render_frame(t));
        }
        out
    }

    /// Short caption in the style used for in-context narration examples.
    pub fn describe(&self) -> String {
        let when = match self.time_of_day {
            TimeOfDay::Day => "during the day",
            TimeOfDay::Night => "at night",
        };
        format!(
            "the vehicle is driving on a road {when} with the camera positioned at the front, {} vehicles ahead",
            self.objects.len()
        )
    }
}

pub fn synthetic_source_id(seed: u64, index: usize) -> String {
    format!("synth-{seed:016x}-{index:04}")
}

/// Render `config.count` videos. Pure in `(config, seed)`; the split is
/// [`Split::Train`] until changed with [`Dataset::with_split`].
pub fn generate_synthetic(config: &CorpusConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let videos = (0..config.count)
        .map(|i| {
            let scene = plan_scene(config, seed, i)?;
            Video::new(
                scene.render(),
                config.frame_rate,
                synthetic_source_id(seed, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(videos, Split::Train)
}

/// Captions for every synthetic video, keyed by source id.
pub fn synthetic_annotations(
    config: &CorpusConfig,
    seed: u64,
) -> Result<std::collections::BTreeMap<String, String>> {
    (0..config.count)
        .map(|i| {
            Ok((
                synthetic_source_id(seed, i),
                plan_scene(config, seed, i)?.describe(),
            ))
        })
        .collect()
}

/// Truncate to `max_frames` (keeping the leading frames), area-average down
/// to `target_hw` and clamp to `[-1, 1]`.
pub fn preprocess(video: &Video, target_hw: (usize, usize), max_frames: usize) -> Result<Video> {
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 || max_frames == 0 {
        return Err(Error::Config(
            "preprocess target size and frame limit must be at least 1".into(),
        ));
    }
    let (t, h, w, c) = video.frames().dim();
    let keep = t.min(max_frames);
    let truncated = video.frames().slice(s![..keep, .., .., ..]);
    let frames = if (h, w) == (th, tw) {
        truncated.to_owned()
    } else {
        let rows = area_weights(h, th);
        let cols = area_weights(w, tw);
        let mut out = Array4::zeros((keep, th, tw, c));
        for f in 0..keep {
            for (oi, rw) in rows.iter().enumerate() {
                for (oj, cw) in cols.iter().enumerate() {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for &(i, wi) in rw {
                            for &(j, wj) in cw {
                                acc += wi * wj * truncated[[f, i, j, ch]] as f64;
                            }
                        }
                        out[[f, oi, oj, ch]] = acc as f32;
                    }
                }
            }
        }
        out
    };
    let frames = frames.mapv(|v| v.clamp(-1.0, 1.0));
    Video::new(frames, video.frame_rate(), video.source_id())
}

/// Box-filter weights mapping `n` input samples onto `m` outputs. Each output
/// cell covers `n / m` inputs; weights are the fractional overlaps, summing
/// to one.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            let mut cells: Vec<(usize, f64)> = (first..last)
                .map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (i, overlap)
                })
                .filter(|(_, wgt)| *wgt > 0.0)
                .collect();
            let total: f64 = cells.iter().map(|(_, w)| w).sum();
            for cell in &mut cells {
                cell.1 /= total;
            }
            cells
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub split: Split,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_rate: f32,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "video id {id:?} is not a safe directory name"
        )))
    }
}

/// Encode one frame (`(h, w, c)` view, `c` in 1, 3 or 4) as PNG bytes.
pub fn encode_png(frame: ArrayView3<'_, f32>) -> Result<Vec<u8>> {
    let (h, w, c) = frame.dim();
    let bytes: Vec<u8> = frame.iter().map(|&v| value_to_byte(v)).collect();
    let color = match c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        4 => image::ExtendedColorType::Rgba8,
        _ => {
            return Err(Error::Format(format!(
                "cannot store {c}-channel frames as PNG"
            )))
        }
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &bytes,
        w as u32,
        h as u32,
        color,
    )
    .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
    Ok(out)
}

/// Decode PNG bytes into an `(h, w, c)` frame, checking the expected shape.
pub fn decode_png(bytes: &[u8], expect: (usize, usize, usize)) -> Result<Array3<f32>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decoding failed: {e}")))?;
    let (h, w, c) = expect;
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(Error::Integrity(format!(
            "frame is {}x{}, expected {h}x{w}",
            img.height(),
            img.width()
        )));
    }
    let channels = img.color().channel_count() as usize;
    if channels != c || img.color().bytes_per_pixel() as usize != c {
        return Err(Error::Integrity(format!(
            "frame has {channels} 8-bit channels, expected {c}"
        )));
    }
    let raw = img.into_bytes();
    let values: Vec<f32> = raw.into_iter().map(byte_to_value).collect();
    Array3::from_shape_vec((h, w, c), values)
        .map_err(|e| Error::Integrity(format!("frame buffer: {e}")))
}

/// Write `dataset` under `root` in the standard layout. The dataset is
/// quantised to 8 bits on the way out; the manifest digest is that of the
/// quantised values, which is what [`load_dataset`] will reproduce.
pub fn save_dataset(dataset: &Dataset, root: &Path, config_digest: Option<&str>) -> Result<String> {
    let quantized = Dataset::new(
        dataset
            .videos()
            .iter()
            .map(|v| Video::new(v.frames().mapv(quantize), v.frame_rate(), v.source_id()))
            .collect::<Result<Vec<_>>>()?,
        dataset.split(),
    )?;
    let videos_dir = root.join("videos");
    fs::create_dir_all(&videos_dir).map_err(|e| Error::io(&videos_dir, e))?;
    let mut entries = Vec::with_capacity(quantized.len());
    for video in quantized.videos() {
        check_id(video.source_id())?;
        let dir = videos_dir.join(video.source_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in 0..video.len() {
            let path = dir.join(frame_file_name(t));
            let png = encode_png(video.frame(t))?;
            fs::write(&path, png).map_err(|e| Error::io(&path, e))?;
        }
        let (h, w, c) = video.frame_shape();
        entries.push(ManifestEntry {
            id: video.source_id().to_string(),
            frames: video.len(),
            height: h,
            width: w,
            channels: c,
            frame_rate: video.frame_rate(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        split: quantized.split(),
        digest: quantized.manifest_digest().to_string(),
        config_digest: config_digest.map(str::to_string),
        videos: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest.digest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("malformed {}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Format(format!(
            "unsupported dataset format {:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Read a dataset written by [`save_dataset`] or any tool emitting the same
/// layout.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        check_id(&entry.id)?;
        let dir = root.join("videos").join(&entry.id);
        let shape = (entry.height, entry.width, entry.channels);
        let mut frames = Array4::zeros((entry.frames, entry.height, entry.width, entry.channels));
        for t in 0..entry.frames {
            let path = dir.join(frame_file_name(t));
            let bytes = fs::read(&path)
                .map_err(|e| Error::Integrity(format!("video {} frame {t}: {e}", entry.id)))?;
            let frame = decode_png(&bytes, shape).map_err(|e| match e {
                Error::Integrity(msg) => {
                    Error::Integrity(format!("video {} frame {t}: {msg}", entry.id))
                }
                other => other,
            })?;
            frames.index_axis_mut(Axis(0), t).assign(&frame);
        }
        videos.push(Video::new(frames, entry.frame_rate, entry.id.clone())?);
    }
    let dataset = Dataset::new(videos, manifest.split)?;
    if dataset.manifest_digest() != manifest.digest {
        return Err(Error::Integrity(format!(
            "dataset digest {} does not match manifest {}",
            dataset.manifest_digest(),
            manifest.digest
        )));
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            count: 1,
            frames: 8,
            height: 16,
            width: 16,
            channels: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&small(), 7).unwrap();
        let b = generate_synthetic(&small(), 7).unwrap();
        assert_eq!(a.videos()[0].frames().dim(), (8, 16, 16, 3));
        assert_eq!(a, b);
        assert_eq!(a.manifest_digest(), b.manifest_digest());
    }

    #[test]
    fn videos_get_distinct_sub_seeds() {
        let cfg = CorpusConfig {
            count: 2,
            ..small()
        };
        let ds = generate_synthetic(&cfg, 7).unwrap();
        assert_ne!(ds.videos()[0].frames(), ds.videos()[1].frames());
    }

    #[test]
    fn centroid_moves_one_pixel_per_frame() {
        let cfg = CorpusConfig {
            objects: 1,
            speed_min: 1,
            speed_max: 1,
            ..small()
        };
        let scene = plan_scene(&cfg, 7, 0).unwrap();
        let background = scene.render_background();
        let video = generate_synthetic(&cfg, 7).unwrap();
        let frames = video.videos()[0].frames();
        // Centroid of every pixel that differs from the static background.
        let centroids: Vec<(f64, f64)> = (0..cfg.frames)
            .map(|t| {
                let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
                for r in 0..cfg.height {
                    for c in 0..cfg.width {
                        let differs = (0..cfg.channels)
                            .any(|ch| frames[[t, r, c, ch]] != background[[r, c, ch]]);
                        if differs {
                            sr += r as f64;
                            sc += c as f64;
                            n += 1.0;
                        }
                    }
                }
                assert!(n > 0.0, "object invisible in frame {t}");
                (sr / n, sc / n)
            })
            .collect();
        for pair in centroids.windows(2) {
            let d = ((pair[1].0 - pair[0].0).powi(2) + (pair[1].1 - pair[0].1).powi(2)).sqrt();
            assert!((d - 1.0).abs() < 1e-12, "displacement {d}");
        }
    }

    #[test]
    fn invalid_dimensions_rejected() {
        for cfg in [
            CorpusConfig {
                count: 0,
                ..small()
            },
            CorpusConfig {
                frames: 0,
                ..small()
            },
            CorpusConfig {
                width: 0,
                ..small()
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg, 1), Err(Error::Config(_))));
        }
    }

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(byte_to_value(0), -1.0);
        assert_eq!(byte_to_value(255), 1.0);
        assert!((byte_to_value(127) - (127.0 / 127.5 - 1.0)).abs() < 1e-7);
        assert!((byte_to_value(127) + 0.00392).abs() < 1e-5);
        for b in 0..=255u8 {
            assert_eq!(value_to_byte(byte_to_value(b)), b);
        }
    }

    #[test]
    fn preprocess_truncates_from_the_end() {
        let frames = Array4::from_shape_fn((199, 2, 2, 1), |(t, _, _, _)| t as f32 / 199.0);
        let v = Video::new(frames, 10.0, "long").unwrap();
        let out = preprocess(&v, (2, 2), 175).unwrap();
        assert_eq!(out.len(), 175);
        assert_eq!(out.frames()[[174, 0, 0, 0]], 174.0 / 199.0);
    }

    #[test]
    fn preprocess_identity_is_bit_exact() {
        let ds = generate_synthetic(&small(), 3).unwrap();
        let v = &ds.videos()[0];
        let out = preprocess(v, (16, 16), 8).unwrap();
        assert_eq!(&out, v);
    }

    #[test]
    fn preprocess_constant_downscale() {
        let v = Video::new(Array4::from_elem((1, 4, 4, 3), 0.25), 1.0, "c").unwrap();
        let out = preprocess(&v, (2, 2), 10).unwrap();
        assert_eq!(out.frames().dim(), (1, 2, 2, 3));
        assert!(out.frames().iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }

    #[test]
    fn preprocess_averages_blocks() {
        let frames = Array4::from_shape_fn((1, 4, 4, 1), |(_, r, c, _)| (r * 4 + c) as f32 / 16.0);
        let v = Video::new(frames, 1.0, "ramp").unwrap();
        let out = preprocess(&v, (2, 2), 1).unwrap();
        // Top-left block holds 0, 1, 4, 5.
        assert!((out.frames()[[0, 0, 0, 0]] - 10.0 / 64.0).abs() < 1e-7);
    }

    #[test]
    fn non_integer_area_weights_sum_to_one() {
        for (n, m) in [(5, 3), (7, 2), (3, 5)] {
            for cells in area_weights(n, m) {
                let s: f64 = cells.iter().map(|c| c.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(
            &CorpusConfig {
                count: 2,
                ..small()
            },
            11,
        )
        .unwrap();
        let digest = save_dataset(&ds, dir.path(), None).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest_digest(), digest);
        // The synthetic palette sits on the 8-bit grid, so the trip is exact.
        assert_eq!(back.videos()[0].frames(), ds.videos()[0].frames());
    }

    #[test]
    fn round_trip_within_one_quantisation_step() {
        let dir = tempfile::tempdir().unwrap();
        let frames = Array4::from_shape_fn((3, 4, 5, 3), |(t, r, c, ch)| {
            ((t * 31 + r * 7 + c * 3 + ch) as f32 * 0.137).sin()
        });
        let ds = Dataset::new(vec![Video::new(frames, 5.0, "wave").unwrap()], Split::Test).unwrap();
        save_dataset(&ds, dir.path(), Some("cfg")).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.split(), Split::Test);
        for (a, b) in ds.videos()[0]
            .frames()
            .iter()
            .zip(back.videos()[0].frames())
        {
            assert!((a - b).abs() <= 1.0 / 127.5);
        }
    }

    #[test]
    fn four_png_frames_load_as_four() {
        let dir = tempfile::tempdir().unwrap();
        let frames = Array4::from_elem((4, 3, 3, 1), 0.0);
        let ds = Dataset::new(vec![Video::new(frames, 1.0, "v").unwrap()], Split::Train).unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap().videos()[0].len(), 4);
    }

    #[test]
    fn missing_manifest_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn frame_shape_mismatch_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small(), 5).unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        let id = ds.videos()[0].source_id();
        let odd = encode_png(Array3::<f32>::zeros((8, 8, 3)).view()).unwrap();
        fs::write(
            dir.path().join("videos").join(id).join(frame_file_name(3)),
            odd,
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn video_rejects_out_of_range_values() {
        let frames = Array4::from_elem((1, 1, 1, 1), 1.5);
        assert!(Video::new(frames, 1.0, "bad").is_err());
        let frames = Array4::from_elem((1, 1, 1, 1), f32::NAN);
        assert!(Video::new(frames, 1.0, "bad").is_err());
    }

    #[test]
    fn dataset_requires_shared_shape() {
        let a = Video::new(Array4::zeros((1, 2, 2, 1)), 1.0, "a").unwrap();
        let b = Video::new(Array4::zeros((1, 3, 2, 1)), 1.0, "b").unwrap();
        assert!(Dataset::new(vec![a, b], Split::Train).is_err());
        assert!(Dataset::new(vec![], Split::Train).is_err());
    }
}
