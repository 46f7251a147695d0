//! Short-time Fourier and fan-chirp analysis/synthesis.
//!
//! A fan-chirp frame is computed by resampling the frame on a warped time
//! axis, `tau = phi(t) = t + alpha t^2 / 2`, so that harmonics whose
//! frequency changes linearly at the normalized rate `alpha` become
//! stationary, and then applying the analysis window and an FFT. The inverse
//! undoes each step: inverse FFT, division by the window, and resampling back
//! onto the original time axis. With `alpha = 0` the transform is an ordinary
//! STFT frame.
//!
//! Frame time is measured from the frame center. Utterances are padded with
//! `frame_len - hop` zeros at each end and resynthesized by weighted
//! overlap-add with squared-Hamming weights, which is exact for `alpha = 0`.

mod spline;

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use spline::{OversampledSpline, UniformSpline, Upsampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hamming,
}

impl WindowKind {
    pub fn build(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hamming => {
                if len == 1 {
                    return vec![1.0];
                }
                let denom = (len - 1) as f64;
                (0..len).map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()).collect()
            }
        }
    }
}

/// Framing parameters shared by analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub sample_rate: u32,
    /// Pre-warp frame length in samples.
    pub frame_len: usize,
    pub hop: usize,
    /// Post-warp frame length in samples (the analysis window length).
    pub warped_len: usize,
    pub fft_len: usize,
    /// Oversampling factor for the warping interpolation.
    pub oversample: usize,
    pub window: WindowKind,
}

impl FrameConfig {
    /// 32 ms Hamming frames, 8 ms hop, FFT of the frame length.
    pub fn stft_short(sample_rate: u32) -> Self {
        let frame_len = ms_to_samples(32.0, sample_rate);
        Self {
            sample_rate,
            frame_len,
            hop: ms_to_samples(8.0, sample_rate),
            warped_len: frame_len,
            fft_len: frame_len,
            oversample: 1,
            window: WindowKind::Hamming,
        }
    }

    /// 128 ms frames, 8 ms hop, FFT length 3262 at 16 kHz.
    pub fn stft_long(sample_rate: u32) -> Self {
        Self::long_window(128.0, sample_rate)
    }

    /// Long window with the fan-chirp defaults: 8 ms hop, FFT length scaled
    /// from 3262 points per 2048-sample frame, oversampling factor 8.
    pub fn long_window(duration_ms: f64, sample_rate: u32) -> Self {
        let frame_len = ms_to_samples(duration_ms, sample_rate);
        let fft_len = (frame_len as f64 * 3262.0 / 2048.0).ceil() as usize;
        Self {
            sample_rate,
            frame_len,
            hop: ms_to_samples(8.0, sample_rate),
            warped_len: frame_len,
            fft_len,
            oversample: 8,
            window: WindowKind::Hamming,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.frame_len < 4 || self.warped_len < 4 {
            return Err(Error::Config("frames must hold at least 4 samples".into()));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!("hop {} must be in 1..={}", self.hop, self.frame_len)));
        }
        if self.fft_len < self.warped_len {
            return Err(Error::Config(format!("fft_len {} shorter than warped_len {}", self.fft_len, self.warped_len)));
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversampling factor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Half of the pre-warp frame duration in seconds.
    pub fn half_span_s(&self) -> f64 {
        self.frame_len as f64 / (2.0 * self.sample_rate as f64)
    }

    pub fn warped_duration_s(&self) -> f64 {
        self.warped_len as f64 / self.sample_rate as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_len as f64
    }

    /// Zero padding applied before the first sample and after the last.
    pub fn edge_pad(&self) -> usize {
        self.frame_len - self.hop
    }

    /// `ceil((n + T - R) / R)` frames for an `n`-sample signal.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        (n_samples + self.frame_len - self.hop).div_ceil(self.hop)
    }

    /// Signal index of the first sample of frame `d` (negative inside the
    /// leading pad).
    pub fn frame_start(&self, d: usize) -> isize {
        (d * self.hop) as isize - self.edge_pad() as isize
    }

    /// Frame center, in seconds from the first signal sample.
    pub fn frame_center_s(&self, d: usize) -> f64 {
        (self.frame_start(d) as f64 + (self.frame_len - 1) as f64 / 2.0) / self.sample_rate as f64
    }

    /// Checks that `1 + alpha t > 0` over the whole frame.
    pub fn check_chirp(&self, alpha: f64) -> Result<()> {
        let half = self.half_span_s();
        if !alpha.is_finite() || 1.0 - alpha.abs() * half <= 0.0 {
            return Err(Error::InvalidChirp { alpha, half_span_s: half });
        }
        Ok(())
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// `phi(t) = t + alpha t^2 / 2`.
#[inline]
pub fn warp_phi(alpha: f64, t: f64) -> f64 {
    t + 0.5 * alpha * t * t
}

/// Inverse of [`warp_phi`] on the monotone branch through the origin,
/// `(-1 + sqrt(1 + 2 alpha tau)) / alpha`, written in a cancellation-free form.
#[inline]
pub fn warp_phi_inv(alpha: f64, tau: f64) -> f64 {
    2.0 * tau / (1.0 + (1.0 + 2.0 * alpha * tau).sqrt())
}

/// One analysis frame in the (possibly warped) frequency domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TFFrame {
    /// One-sided spectrum, `fft_len / 2 + 1` bins.
    pub spectrum: Vec<Complex64>,
    /// Analysis chirp rate in 1/s; 0 for STFT frames.
    pub chirp_rate: f64,
    pub frame_index: usize,
    /// Pre-warp sample positions (frame-local) of the warped samples.
    pub warp_grid: Vec<f64>,
}

/// The frames of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TFSeries {
    pub frames: Vec<TFFrame>,
    pub config: FrameConfig,
    pub original_len: usize,
}

impl TFSeries {
    pub fn chirp_rates(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.chirp_rate).collect()
    }

    /// Same config, length and chirp rate sequence.
    pub fn is_compatible(&self, other: &TFSeries) -> bool {
        self.config == other.config
            && self.original_len == other.original_len
            && self.frames.len() == other.frames.len()
            && self.frames.iter().zip(&other.frames).all(|(a, b)| a.chirp_rate == b.chirp_rate)
    }
}

/// Per-frame chirp rates for [`FanChirpTransform::analyze`].
#[derive(Debug, Clone, PartialEq)]
pub enum ChirpRates {
    /// `alpha = 0` everywhere (plain STFT).
    AutoZero,
    PerFrame(Vec<f64>),
}

/// A frame prepared for warping at several chirp rates.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    samples: Vec<f64>,
    spline: Option<OversampledSpline>,
}

/// Forward and inverse short-time fan-chirp transform for one [`FrameConfig`].
#[derive(Clone)]
pub struct FanChirpTransform {
    config: FrameConfig,
    window: Vec<f64>,
    ola_weight: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    frame_upsampler: Upsampler,
    warped_upsampler: Upsampler,
}

impl std::fmt::Debug for FanChirpTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FanChirpTransform").field("config", &self.config).finish()
    }
}

impl FanChirpTransform {
    pub fn new(config: FrameConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        let window = config.window.build(config.warped_len);
        let ola_weight = config.window.build(config.frame_len).into_iter().map(|w| w * w).collect();
        Ok(Self {
            config,
            window,
            ola_weight,
            fft: planner.plan_fft_forward(config.fft_len),
            ifft: planner.plan_fft_inverse(config.fft_len),
            frame_upsampler: Upsampler::new(&mut planner, config.frame_len, config.oversample),
            warped_upsampler: Upsampler::new(&mut planner, config.warped_len, config.oversample),
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.config
    }

    /// The analysis window, applied on the warped axis.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn is_identity(&self, alpha: f64) -> bool {
        alpha == 0.0 && self.config.warped_len == self.config.frame_len
    }

    /// Center-referenced time of frame-local sample `n`, in seconds.
    fn sample_time(&self, n: f64) -> f64 {
        (n - (self.config.frame_len - 1) as f64 / 2.0) / self.config.sample_rate as f64
    }

    fn time_to_position(&self, t: f64) -> f64 {
        t * self.config.sample_rate as f64 + (self.config.frame_len - 1) as f64 / 2.0
    }

    /// Uniform warped axis: first point and spacing, in seconds.
    fn warped_axis(&self, alpha: f64) -> (f64, f64) {
        let t_first = self.sample_time(0.0);
        let t_last = self.sample_time((self.config.frame_len - 1) as f64);
        let tau_first = warp_phi(alpha, t_first);
        let tau_last = warp_phi(alpha, t_last);
        (tau_first, (tau_last - tau_first) / (self.config.warped_len - 1) as f64)
    }

    /// Pre-warp positions (frame-local sample index) of the warped samples.
    pub fn warp_grid(&self, alpha: f64) -> Result<Vec<f64>> {
        self.config.check_chirp(alpha)?;
        let last = (self.config.frame_len - 1) as f64;
        if self.is_identity(alpha) {
            return Ok((0..self.config.frame_len).map(|n| n as f64).collect());
        }
        let (tau0, dtau) = self.warped_axis(alpha);
        Ok((0..self.config.warped_len)
            .map(|i| {
                let tau = tau0 + dtau * i as f64;
                self.time_to_position(warp_phi_inv(alpha, tau)).clamp(0.0, last)
            })
            .collect())
    }

    pub fn prepare(&self, frame: &[f64]) -> Result<PreparedFrame> {
        if frame.len() != self.config.frame_len {
            return Err(Error::InvalidArgument(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.config.frame_len
            )));
        }
        Ok(PreparedFrame { samples: frame.to_vec(), spline: None })
    }

    fn ensure_spline<'a>(&self, prepared: &'a mut PreparedFrame) -> &'a OversampledSpline {
        prepared.spline.get_or_insert_with(|| OversampledSpline::new(&prepared.samples, &self.frame_upsampler))
    }

    fn warp_prepared(&self, prepared: &mut PreparedFrame, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.warp_grid(alpha)?;
        if self.is_identity(alpha) {
            return Ok((prepared.samples.clone(), grid));
        }
        let spline = self.ensure_spline(prepared);
        let warped = grid.iter().map(|&p| spline.eval(p)).collect();
        Ok((warped, grid))
    }

    /// Resamples a frame on the warped time axis for chirp rate `alpha`.
    /// Returns the `warped_len` warped samples and their pre-warp positions.
    pub fn warp_time_axis(&self, frame: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut prepared = self.prepare(frame)?;
        self.warp_prepared(&mut prepared, alpha)
    }

    fn spectrum_of_warped(&self, warped: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.config.fft_len];
        for ((b, &x), &w) in buf.iter_mut().zip(warped).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        buf.truncate(self.config.n_bins());
        buf
    }

    /// Spectrum of a prepared frame at chirp rate `alpha`. The frame's
    /// oversampled spline is built on first use and reused afterwards.
    pub fn spectrum_at(&self, prepared: &mut PreparedFrame, alpha: f64) -> Result<Vec<Complex64>> {
        let (warped, _) = self.warp_prepared(prepared, alpha)?;
        Ok(self.spectrum_of_warped(&warped))
    }

    pub fn forward_frame(&self, frame: &[f64], alpha: f64, frame_index: usize) -> Result<TFFrame> {
        let mut prepared = self.prepare(frame)?;
        self.forward_prepared(&mut prepared, alpha, frame_index)
    }

    pub fn forward_prepared(&self, prepared: &mut PreparedFrame, alpha: f64, frame_index: usize) -> Result<TFFrame> {
        let (warped, warp_grid) = self.warp_prepared(prepared, alpha)?;
        Ok(TFFrame { spectrum: self.spectrum_of_warped(&warped), chirp_rate: alpha, frame_index, warp_grid })
    }

    /// Inverse FFT, window removal and inverse time warp back to
    /// `frame_len` samples.
    pub fn inverse_frame(&self, tf: &TFFrame) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if tf.spectrum.len() != cfg.n_bins() {
            return Err(Error::InvalidArgument(format!(
                "spectrum has {} bins, expected {}",
                tf.spectrum.len(),
                cfg.n_bins()
            )));
        }
        cfg.check_chirp(tf.chirp_rate)?;

        let n = cfg.fft_len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..tf.spectrum.len()].copy_from_slice(&tf.spectrum);
        for k in tf.spectrum.len()..n {
            buf[k] = tf.spectrum[n - k].conj();
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / n as f64;
        let warped: Vec<f64> = buf[..cfg.warped_len].iter().zip(&self.window).map(|(c, &w)| c.re * scale / w).collect();

        let alpha = tf.chirp_rate;
        if self.is_identity(alpha) {
            return Ok(warped);
        }
        let spline = OversampledSpline::new(&warped, &self.warped_upsampler);
        let (tau0, dtau) = self.warped_axis(alpha);
        let last = (cfg.warped_len - 1) as f64;
        Ok((0..cfg.frame_len)
            .map(|n| {
                let tau = warp_phi(alpha, self.sample_time(n as f64));
                spline.eval(((tau - tau0) / dtau).clamp(0.0, last))
            })
            .collect())
    }

    /// Copies frame `d` out of `signal`, zero-filling outside the signal.
    pub fn extract_frame(&self, signal: &[f64], d: usize) -> Vec<f64> {
        let start = self.config.frame_start(d);
        (0..self.config.frame_len as isize)
            .map(|j| {
                let idx = start + j;
                if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn extract_frames(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        (0..self.config.n_frames(signal.len())).map(|d| self.extract_frame(signal, d)).collect()
    }

    pub fn analyze(&self, signal: &[f64], rates: &ChirpRates) -> Result<TFSeries> {
        if signal.is_empty() {
            return Err(Error::InvalidArgument("cannot analyze an empty signal".into()));
        }
        let n_frames = self.config.n_frames(signal.len());
        if let ChirpRates::PerFrame(alphas) = rates {
            if alphas.len() != n_frames {
                return Err(Error::InvalidArgument(format!(
                    "{} chirp rates supplied for {} frames",
                    alphas.len(),
                    n_frames
                )));
            }
        }
        let frames = (0..n_frames)
            .into_par_iter()
            .map(|d| {
                let alpha = match rates {
                    ChirpRates::AutoZero => 0.0,
                    ChirpRates::PerFrame(a) => a[d],
                };
                self.forward_frame(&self.extract_frame(signal, d), alpha, d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TFSeries { frames, config: self.config, original_len: signal.len() })
    }

    /// Weighted overlap-add of the inverse frames, normalized by the summed
    /// squared Hamming weights.
    pub fn synthesize(&self, tfs: &TFSeries) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if tfs.config != *cfg {
            return Err(Error::InvalidArgument("series was analyzed with another config".into()));
        }
        let n_frames = cfg.n_frames(tfs.original_len);
        if tfs.frames.len() != n_frames {
            return Err(Error::InvalidArgument(format!(
                "series has {} frames, expected {}",
                tfs.frames.len(),
                n_frames
            )));
        }
        if tfs.frames.iter().enumerate().any(|(d, f)| f.frame_index != d) {
            return Err(Error::InvalidArgument("frame indices are not 0, 1, 2, ...".into()));
        }

        let frames = tfs.frames.par_iter().map(|f| self.inverse_frame(f)).collect::<Result<Vec<_>>>()?;

        let total = (n_frames - 1) * cfg.hop + cfg.frame_len;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        for (d, frame) in frames.iter().enumerate() {
            let start = d * cfg.hop;
            for (j, (&x, &w)) in frame.iter().zip(&self.ola_weight).enumerate() {
                acc[start + j] += w * x;
                norm[start + j] += w;
            }
        }
        let pad = cfg.edge_pad();
        Ok((pad..pad + tfs.original_len).map(|i| if norm[i] > 0.0 { acc[i] / norm[i] } else { 0.0 }).collect())
    }
}

#[cfg(test)]
mod tests;
