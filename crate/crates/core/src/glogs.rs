//! Chirp-rate and fundamental-frequency estimation with the gathered log
//! spectrum (GLogS).
//!
//! For every candidate chirp rate the frame is fan-chirp transformed, and for
//! every candidate fundamental the compressed magnitudes at its harmonics are
//! averaged. Octave errors are reduced by subtracting half of the score at
//! twice and at half the fundamental, and scores are z-normalized per
//! fundamental over the whole utterance (robustly, with median and MAD)
//! before the grid argmax.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{FanChirpTransform, FrameConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Zero mean and unit variance per fundamental-frequency row, over all
    /// frames and chirp rates of an utterance.
    #[default]
    PerUtteranceZScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlogsConfig {
    /// Candidate chirp rates in 1/s.
    pub chirp_candidates: Vec<f64>,
    /// Candidate fundamentals in Hz.
    pub f0_candidates: Vec<f64>,
    /// Compression constant in `ln(1 + gamma |X|)`.
    pub gamma: f64,
    pub suppress_multiples: bool,
    pub normalization: Normalization,
    /// Frames whose best normalized score falls below this are unvoiced.
    pub voicing_threshold: f64,
    /// Number of fundamentals evaluated inside each candidate's cell; the
    /// cell keeps the largest value.
    pub f0_refinement: usize,
}

impl Default for GlogsConfig {
    fn default() -> Self {
        Self {
            chirp_candidates: linear_grid(-4.0, 4.0, 21),
            f0_candidates: log_grid(70.0, 400.0, 64),
            gamma: 10.0,
            suppress_multiples: true,
            normalization: Normalization::PerUtteranceZScore,
            voicing_threshold: 5.0,
            f0_refinement: 8,
        }
    }
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    // Round so that the middle of a symmetric grid is exactly zero.
    (0..n).map(|i| snap(lo + step * i as f64)).collect()
}

fn snap(v: f64) -> f64 {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (ratio * i as f64).exp()).collect()
}

impl GlogsConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.chirp_candidates;
        if a.is_empty() || self.f0_candidates.is_empty() {
            return Err(Error::Config("candidate sets must be nonempty".into()));
        }
        if !a.contains(&0.0) {
            return Err(Error::Config("chirp candidates must contain 0".into()));
        }
        let symmetric = a.iter().all(|&x| a.iter().any(|&y| (x + y).abs() <= 1e-9 * (1.0 + x.abs())));
        if !symmetric {
            return Err(Error::Config("chirp candidates must be symmetric about 0".into()));
        }
        if self.f0_candidates.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Config("f0 candidates must be positive".into()));
        }
        if self.f0_candidates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("f0 candidates must be increasing".into()));
        }
        if self.f0_refinement == 0 {
            return Err(Error::Config("f0 refinement must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Number of harmonics of `f0` that stay below Nyquist over a warped frame
/// of `warped_duration_s` seconds at chirp rate `alpha`.
pub fn n_harmonics(sample_rate: f64, f0: f64, alpha: f64, warped_duration_s: f64) -> usize {
    let v = sample_rate / (2.0 * f0 * (1.0 + 0.5 * alpha.abs() * warped_duration_s));
    // Guard against products like 8000/100 landing a hair below an integer.
    (v + 1e-9).floor().max(0.0) as usize
}

/// GLogS values of one frame, `f0` rows by chirp-rate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GlogsSurface {
    pub values: Vec<f64>,
    pub n_f0: usize,
    pub n_alpha: usize,
    pub frame_index: usize,
}

impl GlogsSurface {
    #[inline]
    pub fn get(&self, f0_idx: usize, alpha_idx: usize) -> f64 {
        self.values[f0_idx * self.n_alpha + alpha_idx]
    }

    pub fn row(&self, f0_idx: usize) -> &[f64] {
        &self.values[f0_idx * self.n_alpha..(f0_idx + 1) * self.n_alpha]
    }
}

/// Best grid cell of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChirpEstimate {
    pub frame_index: usize,
    pub alpha: f64,
    pub f0: f64,
    pub alpha_idx: usize,
    pub f0_idx: usize,
    pub score: f64,
    pub voiced: bool,
}

impl ChirpEstimate {
    /// Chirp rate to use for analysis: the estimate when voiced, else 0.
    pub fn analysis_rate(&self) -> f64 {
        if self.voiced {
            self.alpha
        } else {
            0.0
        }
    }
}

/// Per-row centre and spread fitted over a set of surfaces. Median and
/// scaled median absolute deviation are used so that the rows are
/// standardized against their background rather than against the harmonic
/// peaks of a dominant voice.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreNormalizer {
    pub fn fit(surfaces: &[GlogsSurface]) -> Result<Self> {
        let first = surfaces.first().ok_or_else(|| Error::InvalidArgument("no surfaces to normalize".into()))?;
        let (mean, std) = (0..first.n_f0)
            .map(|r| {
                let mut row: Vec<f64> =
                    surfaces.iter().flat_map(|s| s.row(r).iter().copied()).filter(|v| v.is_finite()).collect();
                robust_stats(&mut row)
            })
            .unzip();
        Ok(Self { mean, std })
    }

    /// One centre and spread shared by all rows. Used when only a single
    /// frame is available and per-row statistics over chirp rates alone
    /// would reorder fundamentals.
    pub fn fit_pooled(surfaces: &[GlogsSurface]) -> Result<Self> {
        let first = surfaces.first().ok_or_else(|| Error::InvalidArgument("no surfaces to normalize".into()))?;
        let mut all: Vec<f64> =
            surfaces.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite()).collect();
        let (centre, spread) = robust_stats(&mut all);
        Ok(Self { mean: vec![centre; first.n_f0], std: vec![spread; first.n_f0] })
    }

    pub fn apply(&self, surface: &mut GlogsSurface) {
        for r in 0..surface.n_f0 {
            let (m, s) = (self.mean[r], self.std[r]);
            for v in &mut surface.values[r * surface.n_alpha..(r + 1) * surface.n_alpha] {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Median and normal-consistent median absolute deviation; (0, 1) for empty
/// or constant input.
fn robust_stats(values: &mut [f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let centre = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - centre).abs()).collect();
    let spread = 1.4826 * median(&mut dev);
    if spread > 1e-12 * (1.0 + centre.abs()) {
        (centre, spread)
    } else {
        (centre, 1.0)
    }
}

fn median(v: &mut [f64]) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Grid argmax. Ties go to the chirp rate closest to zero, then to the
/// lowest fundamental.
pub fn argmax(surface: &GlogsSurface, config: &GlogsConfig) -> ChirpEstimate {
    let mut best: Option<(usize, usize, f64)> = None;
    for fi in 0..surface.n_f0 {
        for ai in 0..surface.n_alpha {
            let v = surface.get(fi, ai);
            if !v.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bf, ba, bv)) => {
                    let (a, b) = (config.chirp_candidates[ai].abs(), config.chirp_candidates[ba].abs());
                    v > bv || (v == bv && (a < b || (a == b && fi < bf)))
                }
            };
            if better {
                best = Some((fi, ai, v));
            }
        }
    }
    match best {
        Some((fi, ai, score)) => ChirpEstimate {
            frame_index: surface.frame_index,
            alpha: config.chirp_candidates[ai],
            f0: config.f0_candidates[fi],
            alpha_idx: ai,
            f0_idx: fi,
            score,
            voiced: score >= config.voicing_threshold,
        },
        None => {
            let zero = config.chirp_candidates.iter().position(|&a| a == 0.0).unwrap_or(0);
            ChirpEstimate {
                frame_index: surface.frame_index,
                alpha: 0.0,
                f0: config.f0_candidates[0],
                alpha_idx: zero,
                f0_idx: 0,
                score: f64::NEG_INFINITY,
                voiced: false,
            }
        }
    }
}

/// Estimates and normalized surfaces for every frame of an utterance.
#[derive(Debug, Clone)]
pub struct UtteranceEstimate {
    pub estimates: Vec<ChirpEstimate>,
    pub surfaces: Vec<GlogsSurface>,
}

impl UtteranceEstimate {
    /// Per-frame analysis chirp rates, 0 for unvoiced frames.
    pub fn analysis_rates(&self) -> Vec<f64> {
        self.estimates.iter().map(ChirpEstimate::analysis_rate).collect()
    }
}

/// GLogS grid search for one frame configuration.
#[derive(Debug, Clone)]
pub struct GlogsEstimator {
    config: GlogsConfig,
    transform: FanChirpTransform,
    window_sum: f64,
    /// Fundamentals evaluated for each candidate cell.
    cell_f0s: Vec<Vec<f64>>,
}

/// Log-spaced fundamentals covering the cell of each candidate, bounded by
/// the geometric midpoints to its neighbours.
fn cell_fundamentals(f0s: &[f64], per_cell: usize) -> Vec<Vec<f64>> {
    let n = f0s.len();
    (0..n)
        .map(|i| {
            if per_cell == 1 || n == 1 {
                return vec![f0s[i]];
            }
            let below = if i > 0 { f0s[i - 1] } else { f0s[0] * f0s[0] / f0s[1] };
            let above = if i + 1 < n { f0s[i + 1] } else { f0s[n - 1] * f0s[n - 1] / f0s[n - 2] };
            let lo = (below * f0s[i]).sqrt().ln();
            let hi = (above * f0s[i]).sqrt().ln();
            (0..per_cell).map(|j| (lo + (hi - lo) * (j as f64 + 0.5) / per_cell as f64).exp()).collect()
        })
        .collect()
}

impl GlogsEstimator {
    pub fn new(config: GlogsConfig, frame_cfg: FrameConfig) -> Result<Self> {
        config.validate()?;
        for &a in &config.chirp_candidates {
            frame_cfg.check_chirp(a)?;
        }
        let transform = FanChirpTransform::new(frame_cfg)?;
        let window_sum = transform.window().iter().sum();
        let cell_f0s = cell_fundamentals(&config.f0_candidates, config.f0_refinement);
        Ok(Self { config, transform, window_sum, cell_f0s })
    }

    pub fn config(&self) -> &GlogsConfig {
        &self.config
    }

    pub fn frame_config(&self) -> &FrameConfig {
        self.transform.config()
    }

    fn harmonic_count(&self, f0: f64, alpha: f64) -> usize {
        let fc = self.transform.config();
        n_harmonics(fc.sample_rate as f64, f0, alpha, fc.warped_duration_s())
    }

    /// Mean compressed magnitude over the harmonics of `f0`; `-inf` when no
    /// harmonic fits. `compressed` holds `ln(1 + gamma |X|)` per bin and is
    /// interpolated linearly between bins.
    fn gather(&self, compressed: &[f64], f0: f64, alpha: f64) -> f64 {
        let n_h = self.harmonic_count(f0, alpha);
        if n_h == 0 {
            return f64::NEG_INFINITY;
        }
        let step = f0 / self.transform.config().bin_hz();
        let last = (compressed.len() - 1) as f64;
        // Harmonics strictly inside the spectrum need no clamping.
        let inside = (((last - 1e-9) / step).floor().max(0.0) as usize).min(n_h);
        let mut total = 0.0;
        for k in 1..=inside {
            let pos = k as f64 * step;
            let i = pos as usize;
            let pair = &compressed[i..i + 2];
            total += pair[0] + (pair[1] - pair[0]) * (pos - i as f64);
        }
        total += (inside + 1..=n_h).map(|_| compressed[compressed.len() - 1]).sum::<f64>();
        total / n_h as f64
    }

    fn suppressed(&self, mags: &[f64], f0: f64, alpha: f64) -> f64 {
        if !self.config.suppress_multiples {
            return self.gather(mags, f0, alpha);
        }
        // Harmonic j of f0/2 sits at harmonic j/2 of f0 and j/4 of 2 f0
        // (bit-identical positions), so one sweep yields all three sums.
        let counts = [
            self.harmonic_count(f0, alpha),
            self.harmonic_count(2.0 * f0, alpha),
            self.harmonic_count(0.5 * f0, alpha),
        ];
        if counts[0] == 0 {
            return f64::NEG_INFINITY;
        }
        let half_step = 0.5 * f0 / self.transform.config().bin_hz();
        let len = mags.len();
        let last = (len - 1) as f64;
        let sweep = counts[2].max(2 * counts[0]).max(4 * counts[1]);
        let mut sums = [0.0; 3];
        for j in 1..=sweep {
            let pos = j as f64 * half_step;
            let value = if pos < last {
                let i = pos as usize;
                mags[i] + (mags[i + 1] - mags[i]) * (pos - i as f64)
            } else {
                mags[len - 1]
            };
            if j <= counts[2] {
                sums[2] += value;
            }
            if j % 2 == 0 && j / 2 <= counts[0] {
                sums[0] += value;
            }
            if j % 4 == 0 && j / 4 <= counts[1] {
                sums[1] += value;
            }
        }
        let mut rho = sums[0] / counts[0] as f64;
        for m in [1, 2] {
            if counts[m] > 0 {
                rho -= 0.5 * sums[m] / counts[m] as f64;
            }
        }
        rho
    }

    /// GLogS surface of one frame with multiple/submultiple suppression but
    /// before normalization.
    pub fn raw_surface(&self, frame: &[f64], frame_index: usize) -> Result<GlogsSurface> {
        let n_f0 = self.config.f0_candidates.len();
        let n_alpha = self.config.chirp_candidates.len();
        let mut values = vec![0.0; n_f0 * n_alpha];
        let mut prepared = self.transform.prepare(frame)?;
        for (ai, &alpha) in self.config.chirp_candidates.iter().enumerate() {
            let spectrum = self.transform.spectrum_at(&mut prepared, alpha)?;
            let gamma = self.config.gamma / self.window_sum;
            let mags: Vec<f64> = spectrum.iter().map(|c| (gamma * c.norm()).ln_1p()).collect();
            for (fi, cell) in self.cell_f0s.iter().enumerate() {
                values[fi * n_alpha + ai] =
                    cell.iter().map(|&f0| self.suppressed(&mags, f0, alpha)).fold(f64::NEG_INFINITY, f64::max);
            }
        }
        Ok(GlogsSurface { values, n_f0, n_alpha, frame_index })
    }

    /// Estimate for a single frame, standardized over its own surface.
    pub fn estimate_frame(&self, frame: &[f64]) -> Result<ChirpEstimate> {
        let mut surface = self.raw_surface(frame, 0)?;
        ZScoreNormalizer::fit_pooled(std::slice::from_ref(&surface))?.apply(&mut surface);
        Ok(argmax(&surface, &self.config))
    }

    /// Frames the signal the same way as the transform and estimates every
    /// frame, normalizing over the whole utterance.
    pub fn estimate_utterance(&self, signal: &[f64]) -> Result<UtteranceEstimate> {
        if signal.is_empty() {
            return Err(Error::InvalidArgument("cannot estimate on an empty signal".into()));
        }
        let n_frames = self.transform.config().n_frames(signal.len());
        let mut surfaces = (0..n_frames)
            .into_par_iter()
            .map(|d| self.raw_surface(&self.transform.extract_frame(signal, d), d))
            .collect::<Result<Vec<_>>>()?;
        let normalizer = ZScoreNormalizer::fit(&surfaces)?;
        surfaces.iter_mut().for_each(|s| normalizer.apply(s));
        let estimates = surfaces.iter().map(|s| argmax(s, &self.config)).collect();
        Ok(UtteranceEstimate { estimates, surfaces })
    }
}
