//! Frame-conditioned video diffusion at desk scale.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`corpus`] renders a deterministic synthetic driving corpus and reads and
//!   writes the on-disk frame layout.
//! * [`schedule`] holds the noise schedule and the forward corruption process.
//! * [`denoiser`] is the conditional noise predictor, its reference U-Net and
//!   the training loop.
//! * [`schemes`] plans which frames are generated conditioned on which.
//! * [`sampler`] runs ancestral sampling for one stage and drives a whole
//!   scheme over a video.
//! * [`fvd`] scores generated videos against real ones.
//! * [`narrate`] talks to an in-context vision-language narration service.
//! * [`cli`] ties the pieces together behind the `framefill` binary.
//!
//! The guide under `book/` walks through each piece with runnable snippets;
//! those snippets are compiled and run as doc-tests of this crate.

pub mod cli;
pub mod corpus;
pub mod denoiser;
pub mod error;
pub mod frames;
pub mod fvd;
pub mod narrate;
pub mod sampler;
pub mod schedule;
pub mod schemes;

mod digest;

pub use corpus::{CorpusConfig, Dataset, Split, Video};
pub use denoiser::{ConditioningLayout, NoisePredictor, TrainConfig, UNetConfig, UNetDenoiser};
pub use error::{Error, Result};
pub use frames::FrameIndexSet;
pub use fvd::{FeatureExtractor, FvdReport, GaussianStats};
pub use sampler::{SamplingScheme, SamplingStage};
pub use schedule::NoiseSchedule;
pub use schemes::SchemePlanConfig;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/forward_process.md")]
    mod forward_process {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/sampling_schemes.md")]
    mod sampling_schemes {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/fvd.md")]
    mod fvd {}
    #[doc = include_str!("../../../book/src/narration.md")]
    mod narration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../docs/config.md")]
    mod config {}
}
