//! Run manifest written next to enhanced audio.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fanchirp_core::{ChannelPath, PipelineConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fanchirp_cli: String,
    pub fanchirp_core: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self { fanchirp_cli: env!("CARGO_PKG_VERSION").into(), fanchirp_core: fanchirp_core::VERSION.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// Outcome of one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub status: Status,
    pub error: Option<String>,
    pub n_channels: Option<usize>,
    pub sample_rate: Option<u32>,
    pub duration_s: f64,
    pub processing_s: f64,
    /// Processing time over audio duration.
    pub rtf: Option<f64>,
    pub channel_path: Option<ChannelPath>,
    pub voiced_frames: Option<usize>,
    pub clipped_samples: usize,
}

impl UtteranceRecord {
    pub fn failed(input: &Path, error: String, processing_s: f64) -> Self {
        Self {
            input: input.to_path_buf(),
            output: None,
            status: Status::Failed,
            error: Some(error),
            n_channels: None,
            sample_rate: None,
            duration_s: 0.0,
            processing_s,
            rtf: None,
            channel_path: None,
            voiced_frames: None,
            clipped_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub versions: Versions,
    pub mode: String,
    pub jobs: usize,
    pub config: PipelineConfig,
    pub inputs: Vec<PathBuf>,
    pub utterances: Vec<UtteranceRecord>,
    pub total_audio_s: f64,
    pub total_processing_s: f64,
    pub wall_clock_s: f64,
    /// Total processing time over total audio duration.
    pub rtf: Option<f64>,
    pub failures: usize,
}

impl RunManifest {
    pub fn new(
        config: &PipelineConfig,
        jobs: usize,
        inputs: &[PathBuf],
        utterances: Vec<UtteranceRecord>,
        wall_clock_s: f64,
    ) -> Self {
        let total_audio_s: f64 = utterances.iter().map(|u| u.duration_s).sum();
        let total_processing_s: f64 = utterances.iter().map(|u| u.processing_s).sum();
        let failures = utterances.iter().filter(|u| u.status == Status::Failed).count();
        Self {
            versions: Versions::default(),
            mode: config.mode.label().into(),
            jobs,
            config: config.clone(),
            inputs: inputs.to_vec(),
            utterances,
            total_audio_s,
            total_processing_s,
            wall_clock_s,
            rtf: (total_audio_s > 0.0).then(|| total_processing_s / total_audio_s),
            failures,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }
}
