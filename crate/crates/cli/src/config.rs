//! Pipeline configuration: defaults, then a JSON file, then flags.

use std::path::Path;

use clap::ValueEnum;
use fanchirp_core::{PipelineConfig, SampleEncoding, TfMode};

use crate::error::{usage, CliResult};

/// Reads a JSON configuration file. Missing fields keep their defaults.
pub fn load(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let Some(path) = path else { return Ok(PipelineConfig::default()) };
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

pub fn parse_mode(s: &str) -> Result<TfMode, String> {
    s.parse().map_err(|_| format!("unknown mode '{s}' (expected stft32, stft128, stfcht or stfcht-iter)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    Pcm16,
    Float32,
}

impl From<Encoding> for SampleEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Pcm16 => SampleEncoding::Pcm16,
            Encoding::Float32 => SampleEncoding::Float32,
        }
    }
}
