//! Client side of an in-context video narration service.
//!
//! A request interleaves example clips with their narrations and ends with
//! the clip to narrate:
//!
//! ```text
//! video, text, video, text, ..., video (query)
//! ```
//!
//! On the wire this is one JSON object, POSTed to the endpoint:
//!
//! ```json
//! {
//!   "segments": [
//!     {"type": "video", "frame_rate": 10.0, "height": 16, "width": 16, "channels": 3,
//!      "frames": ["<base64 PNG>", "..."]},
//!     {"type": "text", "text": "the vehicle is driving on a road during the day ..."},
//!     {"type": "video", "...": "..."}
//!   ],
//!   "max_tokens": 64,
//!   "temperature": 0.0
//! }
//! ```
//!
//! The service answers `{"narration": "...", "model_id": "..."}`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{decode_png, encode_png, Dataset, Video};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub const DEFAULT_FRAME_BUDGET: usize = 16;

#[derive(Debug, Clone)]
pub struct ContextExample {
    pub video: Video,
    pub narration: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 64,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NarrationRequest {
    /// Order is kept exactly as given.
    pub context: Vec<ContextExample>,
    pub query_video: Video,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationResult {
    pub text: String,
    pub model_id: String,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Segment {
    Video {
        frame_rate: f32,
        height: usize,
        width: usize,
        channels: usize,
        frames: Vec<String>,
    },
    Text {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub segments: Vec<Segment>,
    pub max_tokens: usize,
    pub temperature: f64,
}

impl WireRequest {
    /// SHA-256 of the JSON body.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("request serialises"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub narration: String,
    pub model_id: String,
}

fn video_segment(video: &Video) -> Result<Segment> {
    let (_, height, width, channels) = video.frames().dim();
    let frames = video
        .frames()
        .axis_iter(Axis(0))
        .map(|f| encode_png(f).map(|png| STANDARD.encode(png)))
        .collect::<Result<_>>()?;
    Ok(Segment::Video {
        frame_rate: video.frame_rate(),
        height,
        width,
        channels,
        frames,
    })
}

fn segment_video(segment: &Segment, id: &str) -> Result<Video> {
    let Segment::Video {
        frame_rate,
        height,
        width,
        channels,
        frames,
    } = segment
    else {
        return Err(Error::Protocol("expected a video segment".into()));
    };
    let mut out = Array4::zeros((frames.len(), *height, *width, *channels));
    for (i, f) in frames.iter().enumerate() {
        let png = STANDARD
            .decode(f)
            .map_err(|e| Error::Protocol(format!("frame {i}: bad base64: {e}")))?;
        let frame = decode_png(&png, (*height, *width, *channels))
            .map_err(|e| Error::Protocol(format!("frame {i}: {e}")))?;
        out.index_axis_mut(Axis(0), i).assign(&frame);
    }
    Video::new(out, *frame_rate, id).map_err(|e| Error::Protocol(e.to_string()))
}

/// Digest of a clip as it appears on the wire (its PNG frames).
pub fn video_key(video: &Video) -> Result<String> {
    let segment = video_segment(video)?;
    Ok(sha256_hex(
        &serde_json::to_vec(&segment).expect("segment serialises"),
    ))
}

impl NarrationRequest {
    pub fn new(context: Vec<ContextExample>, query_video: Video) -> Self {
        Self {
            context,
            query_video,
            params: GenerationParams::default(),
        }
    }

    /// Clip lengths within `frame_budget` and nonempty narrations. Nothing is
    /// ever cut to fit.
    pub fn validate(&self, frame_budget: usize) -> Result<()> {
        for (i, ex) in self.context.iter().enumerate() {
            if ex.narration.trim().is_empty() {
                return Err(Error::RequestValidation(format!(
                    "context example {i} has an empty narration"
                )));
            }
            if ex.video.len() > frame_budget {
                return Err(Error::RequestValidation(format!(
                    "context clip {i} has {} frames, the endpoint takes at most {frame_budget}",
                    ex.video.len()
                )));
            }
        }
        if self.query_video.len() > frame_budget {
            return Err(Error::RequestValidation(format!(
                "query clip has {} frames, the endpoint takes at most {frame_budget}",
                self.query_video.len()
            )));
        }
        Ok(())
    }

    pub fn to_wire(&self) -> Result<WireRequest> {
        let mut segments = Vec::with_capacity(2 * self.context.len() + 1);
        for ex in &self.context {
            segments.push(video_segment(&ex.video)?);
            segments.push(Segment::Text {
                text: ex.narration.clone(),
            });
        }
        segments.push(video_segment(&self.query_video)?);
        Ok(WireRequest {
            segments,
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
        })
    }

    /// Frames come back quantised to 8 bits; clip ids are positional.
    pub fn from_wire(wire: &WireRequest) -> Result<Self> {
        let Some((query, pairs)) = wire.segments.split_last() else {
            return Err(Error::Protocol("request has no segments".into()));
        };
        if pairs.len() % 2 != 0 {
            return Err(Error::Protocol(
                "context segments must come in (video, text) pairs".into(),
            ));
        }
        let mut context = Vec::with_capacity(pairs.len() / 2);
        for (i, pair) in pairs.chunks_exact(2).enumerate() {
            let Segment::Text { text } = &pair[1] else {
                return Err(Error::Protocol(format!(
                    "context example {i} lacks its text"
                )));
            };
            context.push(ContextExample {
                video: segment_video(&pair[0], &format!("context-{i}"))?,
                narration: text.clone(),
            });
        }
        Ok(Self {
            context,
            query_video: segment_video(query, "query")?,
            params: GenerationParams {
                max_tokens: wire.max_tokens,
                temperature: wire.temperature,
            },
        })
    }
}

pub trait NarrationClient: Sync {
    fn send(&self, request: &WireRequest) -> Result<WireResponse>;
}

/// Validate, send, and check the answer.
pub fn narrate(
    client: &dyn NarrationClient,
    request: &NarrationRequest,
    frame_budget: usize,
) -> Result<NarrationResult> {
    request.validate(frame_budget)?;
    let wire = request.to_wire()?;
    let started = Instant::now();
    let response = client.send(&wire)?;
    if response.narration.trim().is_empty() {
        return Err(Error::Protocol(
            "endpoint returned an empty narration".into(),
        ));
    }
    Ok(NarrationResult {
        text: response.narration,
        model_id: response.model_id,
        latency_seconds: started.elapsed().as_secs_f64(),
    })
}

/// In-process stand-in: looks the query clip up in a rule table keyed by
/// [`video_key`], falling back to a fixed narration.
#[derive(Debug, Clone)]
pub struct MockClient {
    pub rules: BTreeMap<String, String>,
    pub default_narration: String,
}

impl MockClient {
    pub const MODEL_ID: &'static str = "framefill-mock/1";

    pub fn new(rules: BTreeMap<String, String>) -> Self {
        Self {
            rules,
            default_narration:
                "the vehicle is driving on a road with the camera positioned at the front".into(),
        }
    }
}

impl NarrationClient for MockClient {
    fn send(&self, request: &WireRequest) -> Result<WireResponse> {
        let query = request
            .segments
            .last()
            .filter(|s| matches!(s, Segment::Video { .. }))
            .ok_or_else(|| Error::Protocol("request does not end with a video".into()))?;
        let key = sha256_hex(&serde_json::to_vec(query).expect("segment serialises"));
        Ok(WireResponse {
            narration: self
                .rules
                .get(&key)
                .unwrap_or(&self.default_narration)
                .clone(),
            model_id: Self::MODEL_ID.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: Option<String>,
    /// Sent as a bearer token. Falls back to `FRAMEFILL_NARRATION_TOKEN`.
    pub token: Option<String>,
    pub timeout_seconds: f64,
    pub attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_millis: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: None,
            token: None,
            timeout_seconds: 30.0,
            attempts: 3,
            backoff_millis: 200,
        }
    }
}

pub const TOKEN_ENV: &str = "FRAMEFILL_NARRATION_TOKEN";
pub const URL_ENV: &str = "FRAMEFILL_NARRATION_URL";

pub struct HttpClient {
    url: String,
    token: Option<String>,
    attempts: usize,
    backoff: Duration,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    /// URL from the config or `FRAMEFILL_NARRATION_URL`.
    pub fn new(config: &EndpointConfig) -> Result<Self> {
        let url = config
            .url
            .clone()
            .or_else(|| std::env::var(URL_ENV).ok())
            .ok_or_else(|| Error::Config("no narration endpoint configured".into()))?;
        if config.attempts == 0 || !(config.timeout_seconds > 0.0) {
            return Err(Error::Config(
                "narration attempts and timeout must be positive".into(),
            ));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_seconds))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            url,
            token: config
                .token
                .clone()
                .or_else(|| std::env::var(TOKEN_ENV).ok()),
            attempts: config.attempts,
            backoff: Duration::from_millis(config.backoff_millis),
            http,
        })
    }

    fn attempt(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut call = self.http.post(&self.url).json(request);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = call
            .send()
            .map_err(|e| Error::Transport(format!("{}: {e}", self.url)))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Transport(format!("{}: HTTP {status}", self.url)));
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!("{}: HTTP {status}", self.url)));
        }
        let body = response
            .bytes()
            .map_err(|e| Error::Transport(format!("{}: {e}", self.url)))?;
        serde_json::from_slice(&body)
            .map_err(|e| Error::Protocol(format!("bad response body: {e}")))
    }
}

impl NarrationClient for HttpClient {
    /// Up to `attempts` tries; only transport errors are retried.
    fn send(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut delay = self.backoff;
        let mut last = None;
        for i in 0..self.attempts {
            if i > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(request) {
                Err(e @ Error::Transport(_)) => last = Some(e),
                other => return other,
            }
        }
        let e = last.expect("at least one attempt");
        Err(Error::Transport(format!(
            "{} attempts failed; last: {e}",
            self.attempts
        )))
    }
}

/// Frame indices `0, s, 2s, ...` with `s = max(1, floor(len / budget))`,
/// at most `budget` of them.
pub fn subsample_indices(len: usize, budget: usize) -> Vec<usize> {
    if budget == 0 {
        return Vec::new();
    }
    let stride = (len / budget).max(1);
    (0..len).step_by(stride).take(budget).collect()
}

pub fn subsample(video: &Video, budget: usize) -> Result<Video> {
    let idx = subsample_indices(video.len(), budget);
    Video::new(video.select(&idx), video.frame_rate(), video.source_id())
}

/// `k` annotated clips chosen by `seed`, each cut down to `frame_budget`
/// frames by uniform striding.
pub fn build_context(
    dataset: &Dataset,
    annotations: &BTreeMap<String, String>,
    k: usize,
    seed: u64,
    frame_budget: usize,
) -> Result<Vec<ContextExample>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let annotated: Vec<&Video> = dataset
        .videos()
        .iter()
        .filter(|v| {
            annotations
                .get(v.source_id())
                .is_some_and(|t| !t.trim().is_empty())
        })
        .collect();
    if annotated.is_empty() {
        return Err(Error::Config(
            "no video in the context dataset is annotated".into(),
        ));
    }
    if k > annotated.len() {
        return Err(Error::Config(format!(
            "asked for {k} context examples, only {} annotated videos",
            annotated.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, annotated.len(), k)
        .into_iter()
        .map(|i| {
            let v = annotated[i];
            Ok(ContextExample {
                video: subsample(v, frame_budget)?,
                narration: annotations[v.source_id()].clone(),
            })
        })
        .collect()
}
