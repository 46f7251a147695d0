//! Speech dereverberation and denoising with fan-chirp time-frequency
//! analysis.

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod audio;
pub mod error;
pub mod gain;
pub mod glogs;
pub mod metrics;
pub mod pipeline;
pub mod reverb;
pub mod spatial;
pub mod tf;

pub use audio::{read_wav, write_wav, write_wav_with, MultichannelSignal, SampleEncoding};
pub use error::{Error, Result};
pub use gain::{GainConfig, GainEngine, VadStatistic};
pub use glogs::{GlogsConfig, GlogsEstimator};
pub use metrics::{score_utterance, MetricReport, UtteranceScores};
pub use pipeline::{enhance_utterance, iterate_enhance, ChannelPath, Enhanced, PipelineConfig, TfMode};
pub use reverb::{ReverbModel, ReverbParams};
pub use spatial::{ArrayGeometry, MvdrConfig, PeakConvention};
pub use tf::{ChirpRates, FanChirpTransform, FrameConfig, TFFrame, TFSeries};
