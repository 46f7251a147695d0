//! Direction of arrival from inter-channel delays, MVDR and delay-and-sum
//! beamforming.
//!
//! Delays are in seconds relative to the first channel and are positive when
//! a channel receives the wavefront later than the reference. For a plane
//! wave arriving from unit direction `a`, channel `i` lags by
//! `-(p_i - p_1) . a / c`.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelSignal;
use crate::error::{Error, Result};
use crate::tf::{ChirpRates, FanChirpTransform, FrameConfig, OversampledSpline, TFSeries, Upsampler, WindowKind};

pub const SPEED_OF_SOUND: f64 = 340.0;

/// Element positions in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub positions: Vec<[f64; 3]>,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        let g = Self { positions, speed_of_sound: SPEED_OF_SOUND };
        g.validate()?;
        Ok(g)
    }

    /// Uniform circular array in the xy-plane, element `i` (1-based) at
    /// angle `2 pi i / n`.
    pub fn uniform_circular(n_channels: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("array radius {radius} must be positive")));
        }
        let step = 2.0 * std::f64::consts::PI / n_channels as f64;
        Self::new(
            (1..=n_channels)
                .map(|i| {
                    let phi = step * i as f64;
                    [radius * phi.cos(), radius * phi.sin(), 0.0]
                })
                .collect(),
        )
    }

    /// Parses whitespace-separated `x y z` rows. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("geometry line {}: {e}", no + 1)))?;
            if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("geometry line {}: expected three finite numbers", no + 1)));
            }
            positions.push([vals[0], vals[1], vals[2]]);
        }
        Self::new(positions)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::InvalidArgument("an array needs at least two elements".into()));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidArgument("speed of sound must be positive".into()));
        }
        for i in 0..self.positions.len() {
            for j in i + 1..self.positions.len() {
                if distance(&self.positions[i], &self.positions[j]) < 1e-12 {
                    return Err(Error::InvalidArgument(format!("elements {} and {} coincide", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.positions.len()
    }

    pub fn max_spacing(&self) -> f64 {
        let p = &self.positions;
        let mut best: f64 = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                best = best.max(distance(&p[i], &p[j]));
            }
        }
        best
    }

    /// Largest physically possible delay magnitude.
    pub fn max_delay_s(&self) -> f64 {
        self.max_spacing() / self.speed_of_sound
    }

    /// Delays of a plane wave from direction `a` (towards the source).
    pub fn plane_wave_delays(&self, a: &[f64; 3]) -> Vec<f64> {
        let p1 = self.positions[0];
        self.positions.iter().map(|p| -dot(&sub(p, &p1), a) / self.speed_of_sound).collect()
    }
}

/// Array recording of a far-field source from direction `a`: each channel is
/// `source` delayed by its plane-wave delay, applied as a phase shift on a
/// zero-padded spectrum so that no signal wraps around.
pub fn simulate_plane_wave(
    source: &[f64],
    sample_rate: u32,
    geometry: &ArrayGeometry,
    a: &[f64; 3],
) -> Result<MultichannelSignal> {
    geometry.validate()?;
    let delays = geometry.plane_wave_delays(a);
    let fs = sample_rate as f64;
    let n = source.len();
    let margin = delays.iter().fold(0.0f64, |m, d| m.max(d.abs())) * fs;
    let len = (n + 2 * margin.ceil() as usize + 2).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut spec: Vec<Complex64> = source.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spec.resize(len, Complex64::new(0.0, 0.0));
    fwd.process(&mut spec);
    let channels = delays
        .iter()
        .map(|&d| {
            let mut s: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let kk = if 2 * k <= len { k as f64 } else { k as f64 - len as f64 };
                    let phase = -2.0 * std::f64::consts::PI * kk * fs / len as f64 * d;
                    // The Nyquist bin keeps only its real part so the output stays real.
                    if 2 * k == len {
                        c * phase.cos()
                    } else {
                        c * Complex64::from_polar(1.0, phase)
                    }
                })
                .collect();
            inv.process(&mut s);
            s[..n].iter().map(|c| c.re / len as f64).collect()
        })
        .collect();
    MultichannelSignal::new(channels, sample_rate)
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(&d, &d).sqrt()
}

/// How the cross-correlation peak is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PeakConvention {
    /// Largest correlation value.
    #[default]
    Signed,
    /// Largest absolute correlation, so a polarity flip keeps its lag.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate {
    /// Seconds, `delays[0] == 0`.
    pub delays: Vec<f64>,
    /// Set for channels whose correlation was identically zero.
    pub low_confidence: Vec<bool>,
}

/// Cross-correlation delays against channel 1 at a resolution of
/// `1 / (oversample * fs)`, searched over `|lag| <= max_delay_s`. The
/// correlation is interpolated by zero-padding the cross-spectrum.
pub fn estimate_delays(
    signal: &MultichannelSignal,
    max_delay_s: f64,
    oversample: usize,
    convention: PeakConvention,
) -> Result<DelayEstimate> {
    let m = signal.n_channels();
    if m < 2 {
        return Err(Error::InvalidArgument("delay estimation needs at least two channels".into()));
    }
    if oversample == 0 {
        return Err(Error::InvalidArgument("oversampling factor must be >= 1".into()));
    }
    if !(max_delay_s >= 0.0) {
        return Err(Error::InvalidArgument("maximum delay must be non-negative".into()));
    }
    let n = signal.n_samples();
    let fs = signal.sample_rate() as f64;
    let len = (2 * n.max(1)).next_power_of_two();
    let big = len * oversample;
    let max_lag = ((max_delay_s * fs * oversample as f64).ceil() as usize).min(big / 2 - 1);

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(big);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(len, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let reference = spectrum(signal.channel(0));

    let mut delays = vec![0.0; m];
    let mut low = vec![false; m];
    low[0] = signal.channel(0).iter().all(|&v| v == 0.0);
    for i in 1..m {
        let xi = signal.channel(i);
        if low[0] || xi.iter().all(|&v| v == 0.0) {
            low[i] = true;
            continue;
        }
        let spec = spectrum(xi);
        let mut cross = vec![Complex64::new(0.0, 0.0); big];
        let half = len / 2;
        for k in 0..half {
            cross[k] = spec[k] * reference[k].conj();
        }
        for k in 1..half {
            cross[big - k] = spec[len - k] * reference[len - k].conj();
        }
        // Split the Nyquist bin between the two ends of the padded spectrum.
        let nyq = spec[half] * reference[half].conj() * 0.5;
        cross[half] = nyq;
        cross[big - half] = nyq;
        inv.process(&mut cross);

        let mut best_lag = 0isize;
        let mut best = f64::NEG_INFINITY;
        for lag in -(max_lag as isize)..=max_lag as isize {
            let idx = lag.rem_euclid(big as isize) as usize;
            let v = match convention {
                PeakConvention::Signed => cross[idx].re,
                PeakConvention::Magnitude => cross[idx].re.abs(),
            };
            // Ties go to the smaller lag magnitude.
            if v > best || (v == best && lag.unsigned_abs() < best_lag.unsigned_abs()) {
                best = v;
                best_lag = lag;
            }
        }
        delays[i] = best_lag as f64 / (oversample as f64 * fs);
    }
    Ok(DelayEstimate { delays, low_confidence: low })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// Unit vector pointing towards the source.
    pub direction: [f64; 3],
    pub delays: Vec<f64>,
    /// The geometry does not determine the direction uniquely.
    pub ambiguous: bool,
}

/// Least-squares direction from delays: `(p_i - p_1) . a = -c d_i`.
///
/// With a full-rank geometry the minimum-norm solution is normalized. When
/// the geometry spans fewer than three dimensions and the minimum-norm
/// solution is shorter than one, a null-space component completes it to
/// unit length, so the result still reproduces the delays. The null-space
/// component is chosen with a non-negative largest entry.
pub fn solve_doa(delays: &[f64], geometry: &ArrayGeometry) -> Result<DoaEstimate> {
    let m = geometry.n_channels();
    if delays.len() != m {
        return Err(Error::InvalidArgument(format!("{} delays for {m} elements", delays.len())));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two elements".into()));
    }
    let p1 = geometry.positions[0];
    let a = DMatrix::from_fn(m - 1, 3, |r, c| geometry.positions[r + 1][c] - p1[c]);
    let b = DVector::from_fn(m - 1, |r, _| -geometry.speed_of_sound * delays[r + 1]);

    let svd = SVD::new(a.clone(), true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * 1e-9;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd.solve(&b, tol).map_err(|e| Error::Invariant(format!("direction solve failed: {e}")))?;
    let mut dir = [x[0], x[1], x[2]];
    let norm = dot(&dir, &dir).sqrt();
    let ambiguous = rank < 3;

    if ambiguous && norm < 1.0 {
        // Right singular vectors beyond the rank span the null space. nalgebra
        // returns only min(m-1, 3) of them, so complete the basis explicitly.
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let mut basis: Vec<[f64; 3]> = Vec::new();
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > tol {
                basis.push([v_t[(i, 0)], v_t[(i, 1)], v_t[(i, 2)]]);
            }
        }
        let null = null_direction(&basis);
        let extra = (1.0 - norm * norm).max(0.0).sqrt();
        for c in 0..3 {
            dir[c] += extra * null[c];
        }
    } else if norm > 0.0 {
        for v in &mut dir {
            *v /= norm;
        }
    } else {
        dir = [1.0, 0.0, 0.0];
    }
    let n = dot(&dir, &dir).sqrt();
    for v in &mut dir {
        *v /= n;
    }
    Ok(DoaEstimate { direction: dir, delays: delays.to_vec(), ambiguous })
}

/// A unit vector orthogonal to the given orthonormal vectors (at most two).
fn null_direction(basis: &[[f64; 3]]) -> [f64; 3] {
    let mut best = [0.0; 3];
    let mut best_norm = -1.0;
    for axis in 0..3 {
        let mut v = [0.0; 3];
        v[axis] = 1.0;
        for b in basis {
            let p = dot(&v, b);
            for c in 0..3 {
                v[c] -= p * b[c];
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > best_norm + 1e-9 {
            best_norm = n;
            best = v;
        }
    }
    let n = best_norm.max(f64::MIN_POSITIVE);
    let mut out = best.map(|v| v / n);
    let lead = out.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    if lead < 0.0 {
        out = out.map(|v| -v);
    }
    out
}

/// `exp(j 2 pi f (p_i - p_1) . a / c)`, i.e. the phase of each channel
/// relative to the first for a plane wave from `a`.
pub fn steering_vector(freq_hz: f64, direction: &[f64; 3], geometry: &ArrayGeometry) -> Vec<Complex64> {
    let p1 = geometry.positions[0];
    let k = 2.0 * std::f64::consts::PI * freq_hz / geometry.speed_of_sound;
    geometry.positions.iter().map(|p| Complex64::from_polar(1.0, k * dot(&sub(p, &p1), direction))).collect()
}

/// Steering vector `exp(-j 2 pi f d_i)` from delays directly.
pub fn steering_from_delays(freq_hz: f64, delays: &[f64]) -> Vec<Complex64> {
    delays.iter().map(|&d| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq_hz * d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvdrConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    /// Frames in each covariance estimate, centred on the current frame.
    pub snapshots: usize,
    pub window: WindowKind,
    /// Minimum diagonal loading as a fraction of the mean element power.
    pub loading: f64,
    /// Loading as a multiple of the smallest covariance eigenvalue.
    pub eigen_loading: f64,
}

impl Default for MvdrConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 384,
            fft_len: 512,
            snapshots: 24,
            window: WindowKind::Hamming,
            loading: 1e-3,
            eigen_loading: 10.0,
        }
    }
}

impl MvdrConfig {
    pub fn frame_config(&self, sample_rate: u32) -> FrameConfig {
        FrameConfig {
            sample_rate,
            frame_len: self.frame_len,
            hop: self.hop,
            warped_len: self.frame_len,
            fft_len: self.fft_len,
            oversample: 1,
            window: self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 {
            return Err(Error::Config("MVDR needs at least one snapshot".into()));
        }
        if !(self.loading >= 0.0) || !(self.eigen_loading >= 0.0) {
            return Err(Error::Config("diagonal loading must be non-negative".into()));
        }
        self.frame_config(16000).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvdrWeights {
    pub weights: Vec<Complex64>,
    /// The loaded covariance could not be factorized and delay-and-sum
    /// weights were returned instead.
    pub fell_back: bool,
}

/// Distortionless weights `w = R^-1 v / (v^H R^-1 v)` for the loaded
/// covariance `R = S + delta I`, with
/// `delta = max(eigen_loading * lambda_min(S), loading * tr(S) / M)`.
pub fn mvdr_weights(covariance: &DMatrix<Complex64>, steering: &[Complex64], config: &MvdrConfig) -> MvdrWeights {
    let m = steering.len();
    let dsb = || MvdrWeights { weights: steering.iter().map(|v| v / m as f64).collect(), fell_back: true };
    if covariance.nrows() != m || covariance.ncols() != m || m == 0 {
        warn!("covariance shape does not match the steering vector; using delay-and-sum");
        return dsb();
    }
    let trace = covariance.diagonal().iter().map(|c| c.re).sum::<f64>();
    let lambda_min = SymmetricEigen::new(covariance.clone()).eigenvalues.min();
    let delta =
        (config.eigen_loading * lambda_min.max(0.0)).max(config.loading * trace / m as f64).max(f64::MIN_POSITIVE);
    if !(lambda_min + delta > 0.0) {
        warn!("loaded covariance is not positive definite; using delay-and-sum");
        return dsb();
    }
    let mut loaded = covariance.clone();
    for i in 0..m {
        loaded[(i, i)] += delta;
    }
    let v = DVector::from_column_slice(steering);
    let Some(chol) = loaded.cholesky() else {
        warn!("covariance factorization failed; using delay-and-sum");
        return dsb();
    };
    let u = chol.solve(&v);
    let norm = u.dotc(&v);
    if !(norm.norm() > 0.0) || !norm.re.is_finite() {
        warn!("degenerate MVDR normalization; using delay-and-sum");
        return dsb();
    }
    let scale = norm.conj();
    MvdrWeights { weights: u.iter().map(|x| x / scale).collect(), fell_back: false }
}

/// `w^H v`.
pub fn response(weights: &[Complex64], steering: &[Complex64]) -> Complex64 {
    weights.iter().zip(steering).map(|(w, v)| w.conj() * v).sum()
}

/// Shifts every channel earlier by its delay, so a source with those
/// delays becomes time-aligned with channel 1. Fractional shifts use the
/// oversampled spline (factor 8); samples shifted in from outside are zero.
pub fn align_channels(signal: &MultichannelSignal, delays: &[f64]) -> Result<Vec<Vec<f64>>> {
    if delays.len() != signal.n_channels() {
        return Err(Error::InvalidArgument(format!("{} delays for {} channels", delays.len(), signal.n_channels())));
    }
    let fs = signal.sample_rate() as f64;
    let n = signal.n_samples();
    let mut planner = FftPlanner::new();
    let upsampler = Upsampler::new(&mut planner, n, 8);
    signal
        .channels()
        .par_iter()
        .zip(delays.par_iter())
        .map(|(x, &d)| {
            let shift = d * fs;
            if !shift.is_finite() {
                return Err(Error::InvalidArgument(format!("delay {d} is not finite")));
            }
            if shift == shift.round() {
                let s = shift as isize;
                return Ok((0..n as isize)
                    .map(|i| {
                        let j = i + s;
                        if j >= 0 && (j as usize) < n {
                            x[j as usize]
                        } else {
                            0.0
                        }
                    })
                    .collect());
            }
            let spline = OversampledSpline::new(x, &upsampler);
            let last = (n - 1) as f64;
            Ok((0..n)
                .map(|i| {
                    let pos = i as f64 + shift;
                    if (0.0..=last).contains(&pos) {
                        spline.eval(pos)
                    } else {
                        0.0
                    }
                })
                .collect())
        })
        .collect()
}

/// Aligns the channels by their delays and averages them.
pub fn dsb_beamform(signal: &MultichannelSignal, delays: &[f64]) -> Result<Vec<f64>> {
    if signal.n_channels() < 2 {
        return Err(Error::InvalidArgument("beamforming needs at least two channels".into()));
    }
    let aligned = align_channels(signal, delays)?;
    let m = aligned.len() as f64;
    Ok((0..signal.n_samples()).map(|i| aligned.iter().map(|c| c[i]).sum::<f64>() / m).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformOutput {
    pub samples: Vec<f64>,
    /// Weight solves that fell back to delay-and-sum.
    pub fallbacks: usize,
    /// Largest `|w^H v - 1|` over all solves.
    pub max_constraint_error: f64,
}

/// MVDR beamformer. Channels are first aligned with the delays so the
/// look-direction steering vector is all ones, then per-bin weights are
/// computed from covariances over `snapshots` frames centred on each frame
/// (truncated at the edges). Utterances shorter than one covariance window
/// fall back to delay-and-sum.
pub fn mvdr_beamform(signal: &MultichannelSignal, delays: &[f64], config: &MvdrConfig) -> Result<BeamformOutput> {
    config.validate()?;
    let m = signal.n_channels();
    if m < 2 {
        return Err(Error::InvalidArgument("beamforming needs at least two channels".into()));
    }
    let fc = config.frame_config(signal.sample_rate());
    let n_frames = fc.n_frames(signal.n_samples());
    if n_frames < config.snapshots {
        warn!("utterance shorter than one covariance window; using delay-and-sum");
        return Ok(BeamformOutput { samples: dsb_beamform(signal, delays)?, fallbacks: 0, max_constraint_error: 0.0 });
    }
    let aligned = align_channels(signal, delays)?;
    let transform = FanChirpTransform::new(fc)?;
    let series: Vec<TFSeries> =
        aligned.iter().map(|c| transform.analyze(c, &ChirpRates::AutoZero)).collect::<Result<_>>()?;
    let n_bins = fc.n_bins();
    let ones = vec![Complex64::new(1.0, 0.0); m];
    let half = config.snapshots / 2;

    let per_frame: Vec<(Vec<Complex64>, usize, f64)> = (0..n_frames)
        .into_par_iter()
        .map(|d| {
            // Y(d - n) for -N/2 <= n < N/2.
            let lo = (d + 1).saturating_sub(config.snapshots - half);
            let hi = (d + half).min(n_frames - 1);
            let mut out = vec![Complex64::new(0.0, 0.0); n_bins];
            let mut fallbacks = 0;
            let mut worst: f64 = 0.0;
            for k in 0..n_bins {
                let mut cov = DMatrix::<Complex64>::zeros(m, m);
                for e in lo..=hi {
                    let y = DVector::from_fn(m, |i, _| series[i].frames[e].spectrum[k]);
                    cov += &y * y.adjoint();
                }
                cov /= Complex64::new((hi - lo + 1) as f64, 0.0);
                let w = mvdr_weights(&cov, &ones, config);
                fallbacks += w.fell_back as usize;
                worst = worst.max((response(&w.weights, &ones) - 1.0).norm());
                out[k] = (0..m).map(|i| w.weights[i].conj() * series[i].frames[d].spectrum[k]).sum();
            }
            (out, fallbacks, worst)
        })
        .collect();

    let mut combined = series[0].clone();
    let mut fallbacks = 0;
    let mut worst: f64 = 0.0;
    for (frame, (spec, fb, err)) in combined.frames.iter_mut().zip(per_frame) {
        frame.spectrum = spec;
        fallbacks += fb;
        worst = worst.max(err);
    }
    Ok(BeamformOutput { samples: transform.synthesize(&combined)?, fallbacks, max_constraint_error: worst })
}
