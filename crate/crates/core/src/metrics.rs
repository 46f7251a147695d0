//! Objective measures, oracle local SNR maps, synthetic harmonic chirps and
//! score combination.
//!
//! The intrusive measures (cepstral distance, LPC log-likelihood ratio,
//! frequency-weighted segmental SNR) use 25 ms Hann frames with a 10 ms
//! shift. Reference frames with energy below `1e-10` of the loudest
//! reference frame are skipped.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{ChirpRates, FrameConfig, TFSeries};

pub const LPC_ORDER: usize = 10;
pub const MEL_BANDS: usize = 25;
pub const CD_CLAMP: (f64, f64) = (0.0, 10.0);
pub const LLR_CLAMP: (f64, f64) = (0.0, 2.0);
pub const FWSEGSNR_CLAMP: (f64, f64) = (-10.0, 35.0);
/// Band weights are the reference band magnitudes raised to this power.
pub const FWSEGSNR_WEIGHT_EXPONENT: f64 = 0.2;
const SILENCE: f64 = 1e-10;

/// Mean and median of per-frame values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub frames: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no non-silent reference frames".into()));
        }
        let mean = if values.iter().all(|&v| v == values[0]) {
            values[0]
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Ok(Self { mean, median: median(values), frames: values.len() })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-utterance scores aggregated over a set of utterances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean_cd: f64,
    pub median_cd: f64,
    pub mean_llr: f64,
    pub median_llr: f64,
    pub mean_fwsegsnr: f64,
    pub median_fwsegsnr: f64,
}

/// The three measures for one utterance pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScores {
    pub cd: f64,
    pub llr: f64,
    pub fwsegsnr: f64,
}

pub fn score_utterance(reference: &[f64], test: &[f64], sample_rate: u32) -> Result<UtteranceScores> {
    Ok(UtteranceScores {
        cd: cepstral_distance(reference, test, sample_rate)?.mean,
        llr: llr(reference, test, sample_rate)?.mean,
        fwsegsnr: fwsegsnr(reference, test, sample_rate)?.mean,
    })
}

impl MetricReport {
    pub fn from_scores(scores: &[UtteranceScores]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no utterances to report".into()));
        }
        let col = |f: fn(&UtteranceScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        let (cd, llr, fw) = (col(|s| s.cd), col(|s| s.llr), col(|s| s.fwsegsnr));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            mean_cd: mean(&cd),
            median_cd: median(&cd),
            mean_llr: mean(&llr),
            median_llr: median(&llr),
            mean_fwsegsnr: mean(&fw),
            median_fwsegsnr: median(&fw),
        })
    }
}

struct Framer {
    len: usize,
    shift: usize,
    window: Vec<f64>,
}

impl Framer {
    fn new(sample_rate: u32) -> Self {
        let len = (0.025 * sample_rate as f64).round() as usize;
        let shift = (0.010 * sample_rate as f64).round() as usize;
        // Periodic Hann.
        let window = (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect();
        Self { len, shift, window }
    }

    fn count(&self, n: usize) -> usize {
        if n < self.len {
            usize::from(n > 0)
        } else {
            (n - self.len) / self.shift + 1
        }
    }

    fn frame(&self, x: &[f64], d: usize) -> Vec<f64> {
        let start = d * self.shift;
        (0..self.len).map(|i| x.get(start + i).copied().unwrap_or(0.0) * self.window[i]).collect()
    }
}

/// Pairs of windowed frames with silent reference frames removed. The test
/// signal is trimmed or zero-padded to the reference length.
fn frame_pairs(reference: &[f64], test: &[f64], sample_rate: u32) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    if reference.iter().chain(test).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("signals must be finite".into()));
    }
    let framer = Framer::new(sample_rate);
    let mut test = test.to_vec();
    test.resize(reference.len(), 0.0);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..framer.count(reference.len())).map(|d| (framer.frame(reference, d), framer.frame(&test, d))).collect();
    let energy = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>();
    let loudest = pairs.iter().map(|(r, _)| energy(r)).fold(0.0, f64::max);
    Ok(pairs.into_iter().filter(|(r, _)| loudest > 0.0 && energy(r) > SILENCE * loudest).collect())
}

/// Autocorrelation `r[0..=order]`.
pub fn autocorrelation(frame: &[f64], order: usize) -> Vec<f64> {
    (0..=order).map(|k| frame.iter().zip(frame.iter().skip(k)).map(|(a, b)| a * b).sum()).collect()
}

/// Levinson-Durbin recursion. Returns `[1, a_1, ..., a_p]` for the
/// predictor polynomial `A(z) = 1 + sum a_k z^-k`. A zero autocorrelation
/// gives the flat polynomial.
pub fn levinson(r: &[f64]) -> Vec<f64> {
    let p = r.len() - 1;
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    if !(r[0] > 0.0) {
        return a;
    }
    let mut err = r[0];
    for i in 1..=p {
        let acc: f64 = (1..i).map(|j| a[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            break;
        }
    }
    a
}

/// Cepstrum `c_1..c_n` of the all-pole model `1 / A(z)`.
pub fn lpc_cepstrum(a: &[f64], n: usize) -> Vec<f64> {
    let p = a.len() - 1;
    let coef = |k: usize| if k <= p { a[k] } else { 0.0 };
    let mut c = vec![0.0; n + 1];
    for m in 1..=n {
        let mut s = -coef(m);
        for k in 1..m {
            s -= (k as f64 / m as f64) * c[k] * coef(m - k);
        }
        c[m] = s;
    }
    c.remove(0);
    c
}

fn lpc(frame: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = autocorrelation(frame, LPC_ORDER);
    (levinson(&r), r)
}

/// Frame-wise distance between 10th-order LPC cepstra (c_0 excluded, so
/// overall gain does not matter), `10/ln 10 * sqrt(2 sum (c_k - c'_k)^2)`
/// dB, clamped to [0, 10].
pub fn cepstral_distance(reference: &[f64], test: &[f64], sample_rate: u32) -> Result<Summary> {
    let scale = 10.0 / std::f64::consts::LN_10;
    let values: Vec<f64> = frame_pairs(reference, test, sample_rate)?
        .iter()
        .map(|(r, t)| {
            let cr = lpc_cepstrum(&lpc(r).0, LPC_ORDER);
            let ct = lpc_cepstrum(&lpc(t).0, LPC_ORDER);
            let d2: f64 = cr.iter().zip(&ct).map(|(a, b)| (a - b).powi(2)).sum();
            (scale * (2.0 * d2).sqrt()).clamp(CD_CLAMP.0, CD_CLAMP.1)
        })
        .collect();
    Summary::of(&values)
}

/// Frame-wise `ln(a_t R_r a_t' / a_r R_r a_r')` with `R_r` the reference
/// autocorrelation matrix, clamped to [0, 2]. Not symmetric in its
/// arguments.
pub fn llr(reference: &[f64], test: &[f64], sample_rate: u32) -> Result<Summary> {
    let quad = |a: &[f64], r: &[f64]| {
        let p = a.len();
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..p {
                s += a[i] * r[i.abs_diff(j)] * a[j];
            }
        }
        s
    };
    let values: Vec<f64> = frame_pairs(reference, test, sample_rate)?
        .iter()
        .map(|(r, t)| {
            let (ar, rr) = lpc(r);
            let (at, _) = lpc(t);
            let ratio = quad(&at, &rr) / quad(&ar, &rr);
            let v = if ratio > 0.0 { ratio.ln() } else { LLR_CLAMP.1 };
            v.clamp(LLR_CLAMP.0, LLR_CLAMP.1)
        })
        .collect();
    Summary::of(&values)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `n_bins` FFT bins spanning 0..fs/2.
pub fn mel_filterbank(n_bands: usize, n_bins: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyq = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyq);
    let edges: Vec<f64> = (0..n_bands + 2).map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64)).collect();
    let bin_hz = nyq / (n_bins - 1) as f64;
    (0..n_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Frequency-weighted segmental SNR over 25 mel bands. Per band, the
/// reference energy over the energy of the difference spectrum
/// `X - Y`, in dB and clamped to [-10, 35]; bands are weighted by the
/// reference band magnitude raised to 0.2.
pub fn fwsegsnr(reference: &[f64], test: &[f64], sample_rate: u32) -> Result<Summary> {
    let pairs = frame_pairs(reference, test, sample_rate)?;
    let len = Framer::new(sample_rate).len;
    let nfft = (2 * len).next_power_of_two();
    let n_bins = nfft / 2 + 1;
    let bank = mel_filterbank(MEL_BANDS, n_bins, sample_rate);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let spectrum = |frame: &[f64]| {
        let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        fft.process(&mut buf);
        buf.truncate(n_bins);
        buf
    };
    let band = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let values: Vec<f64> = pairs
        .iter()
        .map(|(r, t)| {
            let x = spectrum(r);
            let y = spectrum(t);
            let mag: Vec<f64> = x.iter().map(|c| c.norm()).collect();
            let power: Vec<f64> = x.iter().map(|c| c.norm_sqr()).collect();
            let err: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).collect();
            let bands: Vec<(f64, f64)> = bank
                .iter()
                .map(|w| {
                    let weight = band(w, &mag).powf(FWSEGSNR_WEIGHT_EXPONENT);
                    let (p, e) = (band(w, &power), band(w, &err));
                    let snr = if e > 0.0 { 10.0 * (p / e).log10() } else { FWSEGSNR_CLAMP.1 };
                    let snr = if snr.is_nan() { FWSEGSNR_CLAMP.0 } else { snr };
                    (weight, snr.clamp(FWSEGSNR_CLAMP.0, FWSEGSNR_CLAMP.1))
                })
                .collect();
            let den: f64 = bands.iter().map(|(w, _)| w).sum();
            if !(den > 0.0) {
                FWSEGSNR_CLAMP.0
            } else if bands.iter().all(|&(_, v)| v == bands[0].1) {
                // Keep saturated frames exactly at the clamp.
                bands[0].1
            } else {
                let num: f64 = bands.iter().map(|(w, v)| w * v).sum();
                (num / den).clamp(FWSEGSNR_CLAMP.0, FWSEGSNR_CLAMP.1)
            }
        })
        .collect();
    Summary::of(&values)
}

/// Oracle per-bin SNR `|S|^2 / (|X_r|^2 + |V|^2)` with the bins that hold
/// direct signal marked.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSnrMap {
    /// `[frame][bin]`, linear.
    pub snr: Vec<Vec<f64>>,
    pub direct_mask: Vec<Vec<bool>>,
}

/// Denominator floor of the local SNR.
pub const LOCAL_SNR_FLOOR: f64 = 1e-300;

impl LocalSnrMap {
    /// Local SNRs in dB of the bins where the mask equals `direct`. Zero SNRs
    /// are floored at -300 dB.
    pub fn values_db(&self, direct: bool) -> Vec<f64> {
        self.snr
            .iter()
            .zip(&self.direct_mask)
            .flat_map(|(row, mask)| row.iter().zip(mask).filter(move |(_, &m)| m == direct).map(|(s, _)| *s))
            .map(|s| 10.0 * s.max(1e-30).log10())
            .collect()
    }

    pub fn mean_db(&self, direct: bool) -> f64 {
        let v = self.values_db(direct);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Local SNRs in dB of bins that are free of direct signal under both
    /// this map's mask and `other_mask`, restricted to frames whose own mask
    /// marks some direct bin.
    pub fn signal_free_values_db(&self, other_mask: &[Vec<bool>]) -> Vec<f64> {
        self.snr
            .iter()
            .zip(&self.direct_mask)
            .zip(other_mask)
            .filter(|((_, mask), _)| mask.iter().any(|&m| m))
            .flat_map(|((row, mask), other)| {
                row.iter().zip(mask.iter().zip(other)).filter(|(_, (&a, &b))| !a && !b).map(|(s, _)| *s)
            })
            .map(|s| 10.0 * s.max(1e-30).log10())
            .collect()
    }
}

/// Counts of `values` in bins of `width` starting at `lo`; values outside
/// `[lo, hi)` go to the first or last bin. Returns `(bin centre, count)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, width: f64) -> Result<Vec<(f64, usize)>> {
    if !(width > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument("histogram needs hi > lo and a positive width".into()));
    }
    let n = ((hi - lo) / width).ceil() as usize;
    let mut counts = vec![0usize; n];
    for &v in values.iter().filter(|v| !v.is_nan()) {
        let i = ((v - lo) / width).floor().clamp(0.0, (n - 1) as f64) as usize;
        counts[i] += 1;
    }
    Ok(counts.into_iter().enumerate().map(|(i, c)| (lo + (i as f64 + 0.5) * width, c)).collect())
}

pub fn local_snr_map(
    direct: &TFSeries,
    reverberant: &TFSeries,
    noise: &TFSeries,
    direct_mask: Vec<Vec<bool>>,
) -> Result<LocalSnrMap> {
    if !direct.is_compatible(reverberant) || !direct.is_compatible(noise) {
        return Err(Error::InvalidArgument("series differ in framing or chirp rates".into()));
    }
    if direct_mask.len() != direct.frames.len()
        || direct_mask.iter().zip(&direct.frames).any(|(m, f)| m.len() != f.spectrum.len())
    {
        return Err(Error::InvalidArgument("mask shape does not match the series".into()));
    }
    let snr = direct
        .frames
        .iter()
        .zip(&reverberant.frames)
        .zip(&noise.frames)
        .map(|((s, r), v)| {
            s.spectrum
                .iter()
                .zip(&r.spectrum)
                .zip(&v.spectrum)
                .map(|((s, r), v)| {
                    let den = (r.norm_sqr() + v.norm_sqr()).max(LOCAL_SNR_FLOOR);
                    (s.norm_sqr() / den).min(f64::MAX)
                })
                .collect()
        })
        .collect();
    Ok(LocalSnrMap { snr, direct_mask })
}

/// Harmonic stimulus with a linearly varying fundamental, optionally
/// surrounded by silence.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicChirp {
    pub samples: Vec<f64>,
    pub f0_start: f64,
    pub f0_end: f64,
    pub n_harmonics: usize,
    pub sample_rate: u32,
    /// Samples of silence before the chirp starts.
    pub lead_in: usize,
    /// Length of the chirp itself in samples.
    pub active_len: usize,
}

impl HarmonicChirp {
    /// Duration of the chirp, excluding padding.
    pub fn duration_s(&self) -> f64 {
        self.active_len as f64 / self.sample_rate as f64
    }

    /// Seconds from the start of `samples` to the chirp onset.
    pub fn onset_s(&self) -> f64 {
        self.lead_in as f64 / self.sample_rate as f64
    }

    /// Fundamental at time `t` seconds after the chirp onset.
    pub fn f0_at(&self, t: f64) -> f64 {
        self.f0_start + (self.f0_end - self.f0_start) * t / self.duration_s()
    }

    /// Chirp rate `f0' / f0` at time `t` after the onset.
    pub fn chirp_rate_at(&self, t: f64) -> f64 {
        (self.f0_end - self.f0_start) / self.duration_s() / self.f0_at(t)
    }

    /// True chirp rate at the centre of every frame, 0 outside the chirp.
    pub fn frame_rates(&self, cfg: &FrameConfig) -> Vec<f64> {
        (0..cfg.n_frames(self.samples.len()))
            .map(|d| self.active_time(cfg, d).map_or(0.0, |t| self.chirp_rate_at(t)))
            .collect()
    }

    /// Adds `lead_s` seconds of silence before and `tail_s` after.
    pub fn padded(mut self, lead_s: f64, tail_s: f64) -> Self {
        let fs = self.sample_rate as f64;
        let lead = (lead_s * fs).round() as usize;
        let tail = (tail_s * fs).round() as usize;
        let mut samples = vec![0.0; lead];
        samples.extend_from_slice(&self.samples);
        samples.resize(samples.len() + tail, 0.0);
        self.samples = samples;
        self.lead_in += lead;
        self
    }

    /// Time after the onset of the centre of frame `d`, if that centre lies
    /// inside the chirp.
    pub fn active_time(&self, cfg: &FrameConfig, d: usize) -> Option<f64> {
        let t = cfg.frame_center_s(d) - self.onset_s();
        (0.0..=self.duration_s()).contains(&t).then_some(t)
    }

    /// Bins that hold direct signal when frame `d` is analysed at chirp rate
    /// `rates[d]` (all zero for the STFT). In the warped frame, harmonic `k`
    /// appears at `k f0(s) / (1 + alpha (s - t_c))` for times `s` under the
    /// window; every bin that frequency passes through, widened by the
    /// window's main lobe, is marked. Frames centred outside the chirp are
    /// empty.
    pub fn direct_mask(&self, cfg: &FrameConfig, rates: &ChirpRates) -> Vec<Vec<bool>> {
        const TIME_POINTS: usize = 33;
        let n_frames = cfg.n_frames(self.samples.len());
        let n_bins = cfg.n_bins();
        let half = cfg.half_span_s();
        let spread = main_lobe_bins(cfg);
        (0..n_frames)
            .map(|d| {
                let mut row = vec![false; n_bins];
                let Some(centre) = self.active_time(cfg, d) else { return row };
                let alpha = match rates {
                    ChirpRates::AutoZero => 0.0,
                    ChirpRates::PerFrame(r) => r[d],
                };
                let (lo, hi) = ((centre - half).max(0.0), (centre + half).min(self.duration_s()));
                let (fmin, fmax) = (0..TIME_POINTS)
                    .map(|i| {
                        let s = lo + (hi - lo) * i as f64 / (TIME_POINTS - 1) as f64;
                        self.f0_at(s) / (1.0 + alpha * (s - centre))
                    })
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| (a.min(f), b.max(f)));
                for k in 1..=self.n_harmonics {
                    let first = (k as f64 * fmin / cfg.bin_hz()).round() as isize - spread;
                    let last = (k as f64 * fmax / cfg.bin_hz()).round() as isize + spread;
                    for b in first.max(0)..=last.min(n_bins as isize - 1) {
                        row[b as usize] = true;
                    }
                }
                row
            })
            .collect()
    }
}

/// Half-width in bins of the window's main lobe: two bins of the unpadded
/// window, rounded to whole FFT bins.
pub fn main_lobe_bins(cfg: &FrameConfig) -> isize {
    (2.0 * cfg.fft_len as f64 / cfg.warped_len as f64).round().max(1.0) as isize
}

/// Sum of `n_harmonics` unit-amplitude harmonics of a fundamental moving
/// linearly from `f0_start` to `f0_end`, with continuous phase.
pub fn gen_harmonic_chirp(
    f0_start: f64,
    f0_end: f64,
    duration_s: f64,
    n_harmonics: usize,
    sample_rate: u32,
) -> Result<HarmonicChirp> {
    if !(f0_start > 0.0 && f0_end > 0.0 && duration_s > 0.0) || n_harmonics == 0 || sample_rate == 0 {
        return Err(Error::InvalidArgument("fundamentals, duration and harmonic count must be positive".into()));
    }
    let nyq = sample_rate as f64 / 2.0;
    if n_harmonics as f64 * f0_start.max(f0_end) >= nyq {
        return Err(Error::InvalidArgument(format!(
            "harmonic {n_harmonics} of {} Hz aliases at {sample_rate} Hz",
            f0_start.max(f0_end)
        )));
    }
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let slope = (f0_end - f0_start) / duration_s;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = 2.0 * PI * (f0_start * t + 0.5 * slope * t * t);
            (1..=n_harmonics).map(|k| (k as f64 * phase).sin()).sum()
        })
        .collect();
    Ok(HarmonicChirp { samples, f0_start, f0_end, n_harmonics, sample_rate, lead_in: 0, active_len: n })
}

/// White Gaussian noise scaled to `snr_db` below the power of `signal`.
pub fn white_noise_at_snr<R: Rng + ?Sized>(signal: &[f64], snr_db: f64, rng: &mut R) -> Vec<f64> {
    let power = signal.iter().map(|v| v * v).sum::<f64>() / signal.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    (0..signal.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 || h.is_empty() {
        return vec![0.0; n];
    }
    let len = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        b.resize(len, Complex64::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..n].iter().map(|c| c.re / len as f64).collect()
}

/// Speech-like test signal: voiced segments of harmonics with a linearly
/// moving fundamental (100-250 Hz) under a random three-resonance spectral
/// envelope, separated by pauses. Starts and ends with a pause.
pub fn speech_like<R: Rng + ?Sized>(duration_s: f64, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.15..0.25) * fs) as usize;
    let ramp = (0.02 * fs) as usize;
    while pos < n {
        let len = ((rng.random_range(0.12..0.35) * fs) as usize).min(n - pos);
        let f0a: f64 = rng.random_range(100.0..220.0);
        let f0b = (f0a * rng.random_range(0.8..1.25)).min(250.0);
        let formants = [
            (rng.random_range(300.0..800.0), 90.0),
            (rng.random_range(900.0..2200.0), 120.0),
            (rng.random_range(2400.0..3200.0), 180.0),
        ];
        let envelope = |f: f64| -> f64 {
            let res: f64 = formants.iter().map(|(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)).sqrt()).sum();
            res * (200.0 / f).sqrt()
        };
        let n_h = (0.45 * fs / f0a.max(f0b)).floor() as usize;
        let amps: Vec<f64> = (1..=n_h).map(|k| envelope(k as f64 * f0a)).collect();
        let phases: Vec<f64> = (0..n_h).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let dur = len as f64 / fs;
        let gain = 10f64.powf(rng.random_range(-6.0..0.0) / 20.0);
        for i in 0..len {
            let t = i as f64 / fs;
            let phi = 2.0 * PI * (f0a * t + 0.5 * (f0b - f0a) / dur * t * t);
            let taper = if i < ramp {
                0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
            } else if len - i <= ramp {
                0.5 - 0.5 * (PI * (len - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let v: f64 =
                amps.iter().zip(&phases).enumerate().map(|(k, (a, p))| a * ((k + 1) as f64 * phi + p).sin()).sum();
            out[pos + i] = 0.05 * gain * taper * v;
        }
        pos += len + (rng.random_range(0.05..0.2) * fs) as usize;
    }
    let tail = (0.15 * fs) as usize;
    for v in out.iter_mut().rev().take(tail) {
        *v = 0.0;
    }
    out
}

/// Components of a simulated reverberant, noisy observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverberantMixture {
    /// Source convolved with the direct part of the impulse response.
    pub direct: Vec<f64>,
    /// Source convolved with the remainder of the impulse response.
    pub reverberant: Vec<f64>,
    pub noise: Vec<f64>,
    pub observed: Vec<f64>,
    pub rir: Vec<f64>,
}

/// Convolves `source` with a model impulse response drawn from `params`
/// (length `6.91/zeta`, the time to decay by 60 dB) and adds white noise
/// `snr_db` below the reverberant signal. The direct part is the first
/// `params.direct_len` samples of the response.
pub fn reverberant_mixture<R: Rng + ?Sized>(
    source: &[f64],
    params: &crate::reverb::ReverbParams,
    snr_db: f64,
    rng: &mut R,
) -> ReverberantMixture {
    let len = ((3.0 * std::f64::consts::LN_10 / params.zeta).ceil() as usize).max(params.direct_len + 1);
    let rir = crate::reverb::model_rir(params, len, rng);
    let split = params.direct_len.min(rir.len());
    let direct = convolve_same(source, &rir[..split]);
    let mut tail = vec![0.0; split];
    tail.extend_from_slice(&rir[split..]);
    let reverberant = convolve_same(source, &tail);
    let clean: Vec<f64> = direct.iter().zip(&reverberant).map(|(a, b)| a + b).collect();
    let noise = white_noise_at_snr(&clean, snr_db, rng);
    let observed = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
    ReverberantMixture { direct, reverberant, noise, observed, rir }
}

/// Minimum-variance combination of two score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvcResult {
    /// Weight on the second vector, in [0, 1].
    pub weight: f64,
    pub combined: Vec<f64>,
    /// The vectors were identical and the weight is the 0.5 convention.
    pub degenerate: bool,
}

/// `c = argmin sum_i ((1 - c) a_i + c b_i)^2`, clamped to [0, 1], and the
/// combined scores `(1 - c) a + c b`.
pub fn mvc_combine(a: &[f64], b: &[f64]) -> Result<MvcResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("{} vs {} scores", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("need at least two scores".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let dd: f64 = a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum();
    let (weight, degenerate) = if dd == 0.0 {
        (0.5, true)
    } else {
        let ad: f64 = a.iter().zip(b).map(|(x, y)| x * (y - x)).sum();
        ((-ad / dd).clamp(0.0, 1.0), false)
    };
    let combined = a.iter().zip(b).map(|(x, y)| (1.0 - weight) * x + weight * y).collect();
    Ok(MvcResult { weight, combined, degenerate })
}

#[cfg(test)]
mod tests;
