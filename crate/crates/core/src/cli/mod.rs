//! The `framefill` commands as library functions.
//!
//! Every command reads an [`ExperimentConfig`] and stamps its outputs with
//! the config digest. The binary in `main.rs` is a thin clap wrapper over
//! [`run`].

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    ClipPolicy, DataSection, DistanceChoice, EvalSection, ExperimentConfig, ExtractorChoice,
    NarrationSection, SchemeSection, TrainSection,
};

use crate::corpus::{
    generate_synthetic, load_dataset, preprocess, save_dataset, synthetic_annotations, Dataset,
    Split, Video,
};
use crate::denoiser::{train_with_progress, Checkpoint, NoisePredictor, UNetDenoiser};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::frames::FrameIndexSet;
use crate::fvd::{compute_fvd, FeatureExtractor, FvdSummary, SeededProjection};
use crate::narrate::{
    build_context, narrate, subsample, HttpClient, MockClient, NarrationClient, NarrationRequest,
};
use crate::sampler::{drive, sample_video, Completion, SamplingScheme};
use crate::schedule::NoiseSchedule;
use crate::schemes::{
    format_trace, parse_plan, plan_autoreg, plan_hierarchy2, AdaptiveHierarchy2, DownscaledGrayMse,
    FrameDistance, SchemeKind, SchemePlanConfig,
};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug, Parser)]
#[command(
    name = "framefill",
    version,
    about = "Frame-conditioned video diffusion toolkit"
)]
pub struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus into OUT/train and OUT/test.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser and write a checkpoint plus OUT.losses.json.
    Train(TrainArgs),
    /// Complete every video of a dataset from its observed prefix.
    Sample(SampleArgs),
    /// Score a generated dataset against a real one.
    EvalFvd(EvalArgs),
    /// FVD table over several schemes' outputs.
    Report(ReportArgs),
    /// Narrate generated videos through the narration service.
    Narrate(NarrateArgs),
    /// Print the resolved configuration.
    ShowConfig,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset root (a directory with manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint's weights.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// autoreg, hierarchy2 or adaptive-hierarchy2.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Replay a plan: one file for every video, or a directory holding
    /// `<video id>.plan` (such as a previous run's traces/).
    #[arg(long)]
    pub scheme_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides scheme.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Videos sampled in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub generated: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Score all frames, including the observed prefix.
    #[arg(long)]
    pub all_frames: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub real: PathBuf,
    /// SCHEME=DIR, repeatable.
    #[arg(long = "generated", value_name = "SCHEME=DIR", required = true)]
    pub generated: Vec<String>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub all_frames: bool,
}

#[derive(Debug, Clone, Args)]
pub struct NarrateArgs {
    #[arg(long)]
    pub generated: PathBuf,
    /// Annotated dataset the context clips come from.
    #[arg(long)]
    pub context: PathBuf,
    /// JSON map from video id to narration.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Results file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Use the in-process mock instead of the HTTP endpoint.
    #[arg(long)]
    pub mock: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::GenData { out } => {
            let digests = cmd_gen_data(&config, &out)?;
            println!("train {}", digests.train);
            println!("test {}", digests.test);
        }
        Command::Train(args) => {
            let losses = cmd_train(&config, &args)?;
            if let Some(last) = losses.last() {
                println!("trained {} iterations, final loss {last:.6}", losses.len());
            }
        }
        Command::Sample(args) => {
            let digest = cmd_sample(&config, &args)?;
            println!("generated {digest}");
        }
        Command::EvalFvd(args) => {
            let report = cmd_eval_fvd(&config, &args)?;
            println!("fvd {:.6}", report.fvd.score);
        }
        Command::Report(args) => {
            let report = cmd_report(&config, &args)?;
            print!("{}", report.render());
        }
        Command::Narrate(args) => {
            let results = cmd_narrate(&config, &args)?;
            println!("narrated {} videos", results.results.len());
        }
        Command::ShowConfig => print!("{}", config.to_toml()),
    }
    Ok(())
}

pub struct CorpusDigests {
    pub train: String,
    pub test: String,
}

/// OUT/train, OUT/test and OUT/annotations.json.
pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> Result<CorpusDigests> {
    config.validate()?;
    let digest = config.digest();
    let train_seed = config.data.seed;
    let test_seed = derive_seed(config.data.seed, 1);
    let test_config = crate::corpus::CorpusConfig {
        count: config.data.test_count,
        ..config.corpus.clone()
    };
    let train = generate_synthetic(&config.corpus, train_seed)?;
    let test = generate_synthetic(&test_config, test_seed)?.with_split(Split::Test);
    let mut notes = synthetic_annotations(&config.corpus, train_seed)?;
    notes.extend(synthetic_annotations(&test_config, test_seed)?);
    let digests = CorpusDigests {
        train: save_dataset(&train, &out.join("train"), Some(&digest))?,
        test: save_dataset(&test, &out.join("test"), Some(&digest))?,
    };
    write_json(&out.join(ANNOTATIONS_FILE), &notes)?;
    Ok(digests)
}

/// Load and, when the stored frames differ from the model's, resize.
fn load_for_model(path: &Path, config: &ExperimentConfig) -> Result<Dataset> {
    let data = load_dataset(path)?;
    let m = &config.model;
    if data.frame_shape() == (m.height, m.width, m.channels)
        && data.videos().iter().all(|v| v.len() <= m.max_frames)
    {
        return Ok(data);
    }
    if data.frame_shape().2 != m.channels {
        return Err(Error::Contract(format!(
            "dataset has {} channels, model expects {}",
            data.frame_shape().2,
            m.channels
        )));
    }
    let split = data.split();
    let videos = data
        .videos()
        .iter()
        .map(|v| preprocess(v, (m.height, m.width), m.max_frames))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(videos, split)
}

pub fn loss_history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".losses.json");
    PathBuf::from(name)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LossHistory {
    pub config_digest: String,
    pub warm_start: Option<String>,
    pub losses: Vec<f64>,
}

/// Returns the loss history.
pub fn cmd_train(config: &ExperimentConfig, args: &TrainArgs) -> Result<Vec<f64>> {
    config.validate()?;
    let data = load_for_model(&args.data, config)?;
    let schedule = config.schedule.build()?;
    let model = match &args.init_from {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(&config.model, &schedule)?;
            ck.model
        }
        None => UNetDenoiser::new(config.model.clone(), DType::F32, config.train.init_seed)?,
    };
    let total = config.train.iterations;
    let outcome = train_with_progress(
        model,
        &data,
        &schedule,
        &config.train.train_config(),
        config.train.seed,
        |i, loss| {
            if (i + 1) % 100 == 0 || i + 1 == total {
                eprintln!("iteration {}/{total} loss {loss:.6}", i + 1);
            }
        },
    )?;
    let digest = config.digest();
    Checkpoint {
        model: outcome.model,
        schedule,
        seed: config.train.seed,
        config_digest: Some(digest.clone()),
    }
    .save(&args.out)?;
    write_json(
        &loss_history_path(&args.out),
        &LossHistory {
            config_digest: digest,
            warm_start: args.init_from.as_ref().map(|p| p.display().to_string()),
            losses: outcome.losses.clone(),
        },
    )?;
    Ok(outcome.losses)
}

enum Plan {
    Scheme(SchemeKind),
    File(PathBuf),
    Dir(PathBuf),
}

pub fn scheme_config(config: &ExperimentConfig, video_length: usize) -> SchemePlanConfig {
    let s = &config.scheme;
    SchemePlanConfig {
        video_length,
        observed: FrameIndexSet::range(0, s.observed.min(video_length)),
        stride: s.stride,
        group_size: s.group_size,
        max_cond: s.max_cond,
    }
}

pub fn distance(config: &ExperimentConfig) -> Box<dyn FrameDistance> {
    match config.scheme.distance {
        DistanceChoice::GrayMse => Box::new(DownscaledGrayMse {
            size: config.scheme.distance_size,
        }),
    }
}

/// Complete one video under a scheme kind. `seed` is the per-video seed.
pub fn complete_video(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    config: &ExperimentConfig,
    kind: SchemeKind,
    video: &Video,
    seed: u64,
) -> Result<Completion> {
    let plan = scheme_config(config, video.len());
    let observed = video.select(plan.observed.as_slice());
    match kind {
        SchemeKind::Autoreg => {
            sample_video(model, &plan_autoreg(&plan)?, &observed, schedule, seed)
        }
        SchemeKind::Hierarchy2 => {
            sample_video(model, &plan_hierarchy2(&plan)?, &observed, schedule, seed)
        }
        SchemeKind::AdaptiveHierarchy2 => {
            let d = distance(config);
            let mut source = AdaptiveHierarchy2::new(plan, d.as_ref())?;
            drive(model, &mut source, &observed, schedule, seed)
        }
    }
}

pub fn replay_video(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    scheme: &SamplingScheme,
    video: &Video,
    seed: u64,
) -> Result<Completion> {
    if scheme.video_length != video.len() {
        return Err(Error::Scheme(format!(
            "plan covers {} frames, video {} has {}",
            scheme.video_length,
            video.source_id(),
            video.len()
        )));
    }
    let observed = video.select(scheme.observed.as_slice());
    sample_video(model, scheme, &observed, schedule, seed)
}

fn read_plan(path: &Path) -> Result<SamplingScheme> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_plan(&text)
}

/// Seed of the `index`-th video of a sampling run.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 0x5eed_0000 + index as u64)
}

/// Writes OUT (dataset layout) and OUT/traces/<id>.plan; returns the
/// generated dataset digest.
pub fn cmd_sample(config: &ExperimentConfig, args: &SampleArgs) -> Result<String> {
    config.validate()?;
    let plan = match (&args.scheme, &args.scheme_file) {
        (_, Some(path)) if path.is_dir() => Plan::Dir(path.clone()),
        (_, Some(path)) => Plan::File(path.clone()),
        (Some(name), None) => Plan::Scheme(name.parse()?),
        (None, None) => {
            return Err(Error::Usage("give --scheme or --scheme-file".into()));
        }
    };
    let ck = Checkpoint::load(&args.checkpoint)?;
    let data = load_for_model(&args.data, config)?;
    let seed = args.seed.unwrap_or(config.scheme.seed);
    let digest = config.digest();
    let shared_plan = match &plan {
        Plan::File(path) => Some(read_plan(path)?),
        _ => None,
    };
    let work = |(i, video): (usize, &Video)| -> Result<(Video, String)> {
        let vseed = video_seed(seed, i);
        let (completion, observed, label) = match &plan {
            Plan::Scheme(kind) => (
                complete_video(&ck.model, &ck.schedule, config, *kind, video, vseed)?,
                scheme_config(config, video.len()).observed,
                kind.name().to_string(),
            ),
            Plan::File(path) => {
                let scheme = shared_plan.as_ref().expect("plan read");
                (
                    replay_video(&ck.model, &ck.schedule, scheme, video, vseed)?,
                    scheme.observed.clone(),
                    format!("replay {}", path.display()),
                )
            }
            Plan::Dir(dir) => {
                let path = dir.join(format!("{}.plan", video.source_id()));
                let scheme = read_plan(&path)?;
                (
                    replay_video(&ck.model, &ck.schedule, &scheme, video, vseed)?,
                    scheme.observed,
                    format!("replay {}", path.display()),
                )
            }
        };
        let scheme = completion.scheme(observed);
        let trace = format!(
            "# scheme {label}\n# video {}\n# seed {vseed}\n# config_digest {digest}\n{}",
            video.source_id(),
            format_trace(&scheme, &completion.trace)
        );
        Ok((
            completion.into_video(video.frame_rate(), video.source_id())?,
            trace,
        ))
    };
    let indexed: Vec<(usize, &Video)> = data.videos().iter().enumerate().collect();
    let outputs: Vec<(Video, String)> = match args.jobs {
        Some(jobs) if jobs > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| indexed.par_iter().map(|&p| work(p)).collect::<Result<_>>())?,
        _ => indexed.iter().map(|&p| work(p)).collect::<Result<_>>()?,
    };
    let trace_dir = args.out.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let mut videos = Vec::with_capacity(outputs.len());
    for (video, trace) in outputs {
        let path = trace_dir.join(format!("{}.plan", video.source_id()));
        fs::write(&path, trace).map_err(|e| Error::io(&path, e))?;
        videos.push(video);
    }
    save_dataset(
        &Dataset::new(videos, Split::Test)?,
        &args.out,
        Some(&digest),
    )
}

pub fn extractor(config: &ExperimentConfig) -> Box<dyn FeatureExtractor> {
    match config.eval.extractor {
        ExtractorChoice::SeededProjection => Box::new(SeededProjection::new(
            config.eval.extractor_seed,
            config.model.channels,
            config.eval.feature_dim,
        )),
    }
}

/// Frames after the observed prefix, or everything.
pub fn scoring_view(
    dataset: &Dataset,
    config: &ExperimentConfig,
    all_frames: bool,
) -> Result<Dataset> {
    if all_frames || config.eval.clip == ClipPolicy::All {
        return Ok(dataset.clone());
    }
    let p = config.scheme.observed;
    let videos = dataset
        .videos()
        .iter()
        .map(|v| {
            if v.len() <= p {
                return Err(Error::InsufficientData(format!(
                    "video {} has no frames after the {p}-frame observed prefix",
                    v.source_id()
                )));
            }
            let idx: Vec<usize> = (p..v.len()).collect();
            Video::new(v.select(&idx), v.frame_rate(), v.source_id())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(videos, dataset.split())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub fvd: FvdSummary,
    pub all_frames: bool,
    pub config_digest: String,
}

pub fn cmd_eval_fvd(config: &ExperimentConfig, args: &EvalArgs) -> Result<EvalReport> {
    config.validate()?;
    let real = scoring_view(&load_dataset(&args.real)?, config, args.all_frames)?;
    let generated = scoring_view(&load_dataset(&args.generated)?, config, args.all_frames)?;
    let report = EvalReport {
        fvd: compute_fvd(&real, &generated, extractor(config).as_ref())?.summary(),
        all_frames: args.all_frames || config.eval.clip == ClipPolicy::All,
        config_digest: config.digest(),
    };
    write_json(&args.out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: String,
    pub fvd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub rows: Vec<ReportRow>,
    /// Real set against itself.
    pub self_score: f64,
    /// Row labels from lowest to highest score.
    pub observed_ordering: Vec<String>,
    pub extractor_id: String,
    pub real_count: usize,
    pub all_frames: bool,
    pub config_digest: String,
}

impl SchemeReport {
    pub fn render(&self) -> String {
        let header = "Sampling Scheme";
        let width = self
            .rows
            .iter()
            .map(|r| r.scheme.len())
            .chain([header.len(), "real (self)".len()])
            .max()
            .unwrap_or(0);
        let mut out = format!(
            "{header:<width$} | FVD Score\n{:-<width$} | ---------\n",
            ""
        );
        for r in &self.rows {
            out.push_str(&format!("{:<width$} | {:.3}\n", r.scheme, r.fvd));
        }
        out.push_str(&format!(
            "\n{:<width$} | {:.3}\n",
            "real (self)", self.self_score
        ));
        out.push_str(&format!(
            "observed ordering: {}\n",
            self.observed_ordering.join(" < ")
        ));
        out
    }
}

/// Writes OUT/report.json and OUT/report.txt.
pub fn cmd_report(config: &ExperimentConfig, args: &ReportArgs) -> Result<SchemeReport> {
    config.validate()?;
    let mut dirs: BTreeMap<usize, (SchemeKind, PathBuf)> = BTreeMap::new();
    for spec in &args.generated {
        let (name, dir) = spec
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected SCHEME=DIR, got `{spec}`")))?;
        let kind: SchemeKind = name.parse()?;
        let pos = SchemeKind::ALL
            .iter()
            .position(|k| *k == kind)
            .expect("listed");
        if dirs.insert(pos, (kind, PathBuf::from(dir))).is_some() {
            return Err(Error::Usage(format!("scheme `{name}` given twice")));
        }
    }
    let real = scoring_view(&load_dataset(&args.real)?, config, args.all_frames)?;
    let ex = extractor(config);
    let mut rows = Vec::with_capacity(dirs.len());
    for (kind, dir) in dirs.values() {
        let generated = scoring_view(&load_dataset(dir)?, config, args.all_frames)?;
        rows.push(ReportRow {
            scheme: kind.label().to_string(),
            fvd: compute_fvd(&real, &generated, ex.as_ref())?.score,
        });
    }
    let self_score = compute_fvd(&real, &real, ex.as_ref())?.score;
    let mut order: Vec<&ReportRow> = rows.iter().collect();
    order.sort_by(|a, b| a.fvd.total_cmp(&b.fvd));
    let report = SchemeReport {
        observed_ordering: order.iter().map(|r| r.scheme.clone()).collect(),
        rows,
        self_score,
        extractor_id: ex.id(),
        real_count: real.len(),
        all_frames: args.all_frames || config.eval.clip == ClipPolicy::All,
        config_digest: config.digest(),
    };
    write_json(&args.out.join("report.json"), &report)?;
    let txt = args.out.join("report.txt");
    fs::write(&txt, report.render()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NarrationStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationEntry {
    pub video_id: String,
    pub status: NarrationStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub narration: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationFile {
    pub config_digest: String,
    pub mode: String,
    pub context_ids: Vec<String>,
    pub results: Vec<NarrationEntry>,
}

/// One entry per generated video, written after every call so a failure
/// part way keeps what was already narrated. Failed calls are marked and
/// the first failure is returned once all videos were tried.
pub fn cmd_narrate(config: &ExperimentConfig, args: &NarrateArgs) -> Result<NarrationFile> {
    config.validate()?;
    let n = &config.narration;
    let generated = load_dataset(&args.generated)?;
    let context_data = load_dataset(&args.context)?;
    let text =
        fs::read_to_string(&args.annotations).map_err(|e| Error::io(&args.annotations, e))?;
    let notes: BTreeMap<String, String> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", args.annotations.display())))?;
    let context = build_context(
        &context_data,
        &notes,
        n.context_examples,
        n.context_seed,
        n.frame_budget,
    )?;
    let client: Box<dyn NarrationClient> = if args.mock {
        Box::new(MockClient::new(BTreeMap::new()))
    } else {
        Box::new(HttpClient::new(&n.endpoint)?)
    };
    let mut file = NarrationFile {
        config_digest: config.digest(),
        mode: if args.mock { "mock" } else { "endpoint" }.into(),
        context_ids: context
            .iter()
            .map(|c| c.video.source_id().to_string())
            .collect(),
        results: Vec::with_capacity(generated.len()),
    };
    let mut first_failure = None;
    for video in generated.videos() {
        let mut request = NarrationRequest::new(context.clone(), subsample(video, n.frame_budget)?);
        request.params = n.generation;
        let entry = match narrate(client.as_ref(), &request, n.frame_budget) {
            Ok(r) => NarrationEntry {
                video_id: video.source_id().into(),
                status: NarrationStatus::Ok,
                narration: Some(r.text),
                model_id: Some(r.model_id),
                error: None,
            },
            Err(e) => {
                let entry = NarrationEntry {
                    video_id: video.source_id().into(),
                    status: NarrationStatus::Failed,
                    narration: None,
                    model_id: None,
                    error: Some(e.to_string()),
                };
                first_failure.get_or_insert(e);
                entry
            }
        };
        file.results.push(entry);
        write_json(&args.out, &file)?;
    }
    if generated.is_empty() {
        write_json(&args.out, &file)?;
    }
    match first_failure {
        Some(e) => Err(e),
        None => Ok(file),
    }
}

/// Pretty JSON, written to a sibling temp file and renamed into place.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
