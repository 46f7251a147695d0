//! Utterance-level enhancement: channel reduction, time-frequency analysis
//! (optionally with per-frame chirp rates), spectral gains and resynthesis,
//! with an optional second pass mixed into the output.

use log::{debug, info};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelSignal;
use crate::error::{Error, Result};
use crate::gain::{GainConfig, GainEngine};
use crate::glogs::{GlogsConfig, GlogsEstimator};
use crate::reverb::ReverbParams;
use crate::spatial::{
    dsb_beamform, estimate_delays, mvdr_beamform, solve_doa, ArrayGeometry, DoaEstimate, MvdrConfig, PeakConvention,
};
use crate::tf::{ChirpRates, FanChirpTransform, FrameConfig};

/// Lag bound used for delay estimation when no geometry is known.
pub const DEFAULT_MAX_DELAY_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TfMode {
    /// 32 ms STFT.
    #[serde(alias = "stft32")]
    StftShort,
    /// 128 ms STFT.
    #[serde(alias = "stft128")]
    StftLong,
    /// 128 ms fan-chirp transform.
    #[default]
    Stfcht,
    /// 96 ms fan-chirp transform with a second enhancement pass.
    #[serde(alias = "stfcht-iter")]
    StfchtIter,
}

impl TfMode {
    pub fn frame_config(self, sample_rate: u32) -> FrameConfig {
        match self {
            TfMode::StftShort => FrameConfig::stft_short(sample_rate),
            TfMode::StftLong | TfMode::Stfcht => FrameConfig::stft_long(sample_rate),
            TfMode::StfchtIter => FrameConfig::long_window(96.0, sample_rate),
        }
    }

    pub fn uses_chirp(self) -> bool {
        matches!(self, TfMode::Stfcht | TfMode::StfchtIter)
    }

    pub fn is_iterative(self) -> bool {
        self == TfMode::StfchtIter
    }

    pub fn label(self) -> &'static str {
        match self {
            TfMode::StftShort => "stft32",
            TfMode::StftLong => "stft128",
            TfMode::Stfcht => "stfcht",
            TfMode::StfchtIter => "stfcht-iter",
        }
    }
}

impl std::str::FromStr for TfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stft32" | "stft_short" => Ok(TfMode::StftShort),
            "stft128" | "stft_long" => Ok(TfMode::StftLong),
            "stfcht" => Ok(TfMode::Stfcht),
            "stfcht-iter" | "stfcht_iter" => Ok(TfMode::StfchtIter),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: TfMode,
    /// Reverberation time in seconds. Required.
    pub t60: Option<f64>,
    /// Initial reverberant-to-direct energy ratio.
    pub drr_inverse: f64,
    /// Adapt the reverberant-to-direct ratio while processing.
    pub adapt_drr: bool,
    /// Weight of the first pass in the iterative mode; the second pass gets
    /// the rest.
    pub iteration_weight: f64,
    /// Estimate chirp rates again on the first-pass output.
    pub recompute_chirp: bool,
    /// Analyse with zero chirp rate even in the fan-chirp modes.
    pub force_zero_chirp: bool,
    pub gain: GainConfig,
    pub glogs: GlogsConfig,
    pub mvdr: MvdrConfig,
    pub geometry: Option<ArrayGeometry>,
    /// Radius of the circular array assumed for 8-channel input without a
    /// geometry.
    pub default_array_radius: f64,
    /// Oversampling of the delay search.
    pub delay_oversample: usize,
    pub peak_convention: PeakConvention,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: TfMode::Stfcht,
            t60: None,
            drr_inverse: 1.0,
            adapt_drr: true,
            iteration_weight: 0.7,
            recompute_chirp: false,
            force_zero_chirp: false,
            gain: GainConfig::default(),
            glogs: GlogsConfig::default(),
            mvdr: MvdrConfig::default(),
            geometry: None,
            default_array_radius: 0.1,
            delay_oversample: 4,
            peak_convention: PeakConvention::Signed,
        }
    }
}

impl PipelineConfig {
    pub fn with_t60(mode: TfMode, t60: f64) -> Self {
        Self { mode, t60: Some(t60), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.t60 {
            None => return Err(Error::Config("T60 is required".into())),
            Some(t) if !(t > 0.0) || !t.is_finite() => {
                return Err(Error::Config(format!("T60 must be positive, got {t}")))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.iteration_weight) {
            return Err(Error::Config(format!("iteration weight {} must lie in [0, 1]", self.iteration_weight)));
        }
        if !(self.drr_inverse >= 0.0) {
            return Err(Error::Config("drr_inverse must be non-negative".into()));
        }
        if self.delay_oversample == 0 {
            return Err(Error::Config("delay_oversample must be >= 1".into()));
        }
        self.gain.validate()?;
        self.glogs.validate()?;
        self.mvdr.validate()
    }

    fn t60(&self) -> Result<f64> {
        self.t60.ok_or_else(|| Error::Config("T60 is required".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPath {
    Direct,
    DelayAndSum,
    Mvdr,
}

/// One run of the single-channel chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    pub samples: Vec<f64>,
    /// Chirp rate used for each frame.
    pub chirp_rates: Vec<f64>,
    pub voiced_frames: usize,
    /// Reverberant-to-direct ratio after the last frame.
    pub drr_inverse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub path: ChannelPath,
    pub doa: Option<DoaEstimate>,
    pub delays: Vec<f64>,
    pub passes: Vec<PassOutput>,
}

/// Enhances an utterance to a single channel of the same length.
pub fn enhance_utterance(signal: &MultichannelSignal, config: &PipelineConfig) -> Result<Enhanced> {
    config.validate()?;
    let fs = signal.sample_rate();
    let (mono, path, doa, delays) = reduce_channels(signal, config)?;
    let passes = if config.mode.is_iterative() {
        iterate_passes(&mono, fs, config)?
    } else {
        vec![run_pass(&mono, fs, config, None, config.drr_inverse)?]
    };
    let samples = if passes.len() == 2 {
        mix(&passes[0].samples, &passes[1].samples, config.iteration_weight)
    } else {
        passes[0].samples.clone()
    };
    Ok(Enhanced { samples, sample_rate: fs, path, doa, delays, passes })
}

/// Two-pass enhancement of one channel mixed as
/// `a * first + (1 - a) * second`.
pub fn iterate_enhance(signal: &[f64], sample_rate: u32, config: &PipelineConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let passes = iterate_passes(signal, sample_rate, config)?;
    Ok(mix(&passes[0].samples, &passes[1].samples, config.iteration_weight))
}

/// Both passes. The second runs on the first's output, starting from its
/// final reverberant-to-direct ratio and (unless `recompute_chirp`) its
/// chirp rates.
pub fn iterate_passes(signal: &[f64], sample_rate: u32, config: &PipelineConfig) -> Result<Vec<PassOutput>> {
    let first = run_pass(signal, sample_rate, config, None, config.drr_inverse)?;
    let rates = if config.recompute_chirp { None } else { Some(first.chirp_rates.clone()) };
    let second = run_pass(&first.samples, sample_rate, config, rates, first.drr_inverse)?;
    Ok(vec![first, second])
}

/// Per-sample `a * x + (1 - a) * y`.
pub fn mix(x: &[f64], y: &[f64], a: f64) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + (1.0 - a) * q).collect()
}

/// Single-channel signal, the path taken, the direction and the delays.
type Reduced = (Vec<f64>, ChannelPath, Option<DoaEstimate>, Vec<f64>);

fn reduce_channels(signal: &MultichannelSignal, config: &PipelineConfig) -> Result<Reduced> {
    let m = signal.n_channels();
    if m == 1 {
        return Ok((signal.channel(0).to_vec(), ChannelPath::Direct, None, vec![0.0]));
    }
    let geometry = match &config.geometry {
        Some(g) => {
            if g.n_channels() != m {
                return Err(Error::Config(format!(
                    "geometry has {} elements but the signal has {m} channels",
                    g.n_channels()
                )));
            }
            Some(g.clone())
        }
        None if m == 8 => Some(ArrayGeometry::uniform_circular(8, config.default_array_radius)?),
        None => None,
    };
    let max_delay = geometry.as_ref().map_or(DEFAULT_MAX_DELAY_S, |g| g.max_delay_s());
    let est = estimate_delays(signal, max_delay, config.delay_oversample, config.peak_convention)?;
    let doa = match &geometry {
        Some(g) => Some(solve_doa(&est.delays, g)?),
        None => None,
    };
    debug!("channel delays {:?}", est.delays);
    if m == 2 {
        Ok((dsb_beamform(signal, &est.delays)?, ChannelPath::DelayAndSum, doa, est.delays))
    } else {
        let out = mvdr_beamform(signal, &est.delays, &config.mvdr)?;
        if out.fallbacks > 0 {
            info!("{} MVDR solves used delay-and-sum weights", out.fallbacks);
        }
        Ok((out.samples, ChannelPath::Mvdr, doa, est.delays))
    }
}

/// Initial noise estimate: mean power over the first frames that lie
/// entirely inside the signal.
fn initial_noise_estimate(series: &[Vec<Complex64>], cfg: &FrameConfig, n_samples: usize, count: usize) -> Vec<f64> {
    let inside: Vec<usize> = (0..series.len())
        .filter(|&d| cfg.frame_start(d) >= 0 && cfg.frame_start(d) as usize + cfg.frame_len <= n_samples)
        .take(count)
        .collect();
    let chosen: Vec<usize> = if inside.is_empty() { (0..series.len().min(count)).collect() } else { inside };
    let mut acc = vec![0.0; cfg.n_bins()];
    for &d in &chosen {
        for (a, c) in acc.iter_mut().zip(&series[d]) {
            *a += c.norm_sqr();
        }
    }
    let n = chosen.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

/// One pass of the single-channel chain.
pub fn run_pass(
    signal: &[f64],
    sample_rate: u32,
    config: &PipelineConfig,
    chirp_rates: Option<Vec<f64>>,
    drr_inverse: f64,
) -> Result<PassOutput> {
    let fc = config.mode.frame_config(sample_rate);
    let transform = FanChirpTransform::new(fc)?;
    let n_frames = fc.n_frames(signal.len());

    let (rates, voiced) = match chirp_rates {
        Some(r) => {
            if r.len() != n_frames {
                return Err(Error::InvalidArgument(format!("{} chirp rates for {n_frames} frames", r.len())));
            }
            let voiced = r.iter().filter(|&&a| a != 0.0).count();
            (ChirpRates::PerFrame(r), voiced)
        }
        None if config.mode.uses_chirp() && !config.force_zero_chirp => {
            let est = GlogsEstimator::new(config.glogs.clone(), fc)?.estimate_utterance(signal)?;
            let voiced = est.estimates.iter().filter(|e| e.voiced).count();
            (ChirpRates::PerFrame(est.analysis_rates()), voiced)
        }
        None => (ChirpRates::AutoZero, 0),
    };

    let mut series = transform.analyze(signal, &rates)?;
    let spectra: Vec<Vec<Complex64>> = series.frames.iter().map(|f| f.spectrum.clone()).collect();
    let lambda_v = initial_noise_estimate(&spectra, &fc, signal.len(), config.gain.noise_init_frames);

    let mut reverb = ReverbParams::new(config.t60()?, sample_rate, fc.hop)?;
    reverb.drr_inverse = config.drr_inverse;
    let mut engine = GainEngine::new(config.gain, reverb, fc.hop, fc.n_bins())?;
    if !config.adapt_drr {
        engine = engine.with_fixed_drr();
    }
    let mut state = engine.initial_state(lambda_v);
    state.drr_inverse = drr_inverse;
    for frame in &mut series.frames {
        engine.enhance_frame(&mut frame.spectrum, &mut state)?;
    }
    let samples = transform.synthesize(&series)?;
    Ok(PassOutput { samples, chirp_rates: series.chirp_rates(), voiced_frames: voiced, drr_inverse: state.drr_inverse })
}
