//! Spectral gains for joint noise and late-reverberation suppression.
//!
//! Each frame is processed in order: the late-reverberant variance is
//! predicted from the reverberation model, a priori and a posteriori
//! signal-to-interference ratios are formed (decision-directed), a
//! frame-level voice activity statistic gates the noise tracker, and the
//! log-spectral-amplitude gain is blended with a time-frequency gain floor
//! according to a speech presence probability. The noisy phase is kept.

mod expint;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reverb::{DrrAdapter, ReverbModel, ReverbParams, ReverbState};

pub use expint::e1;

/// Frame voice-activity statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VadStatistic {
    /// Mean log-likelihood ratio `mean_k [gamma xi/(1+xi) - ln(1+xi)]`.
    #[default]
    LikelihoodRatio,
    /// `sum_k [ln(gamma) xi/(1+xi) - ln(1+xi)]`.
    LogGammaSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainConfig {
    /// Gain floor applied where late reverberation dominates.
    pub gmin_late: f64,
    /// Gain floor applied where noise dominates.
    pub gmin_noise: f64,
    /// Decision-directed weight on the previous frame's estimate.
    pub dd_alpha: f64,
    /// Noise-variance smoothing on frames declared noise-only.
    pub noise_smoothing: f64,
    pub vad_statistic: VadStatistic,
    /// Frames with a VAD statistic below this update the noise estimate.
    pub vad_threshold: f64,
    /// Floor on the a priori SIR.
    pub xi_min: f64,
    /// Speech presence `p = xi / (xi + spp_xi0)` before smoothing.
    pub spp_xi0: f64,
    /// Upper bound on the LSA gain.
    pub gain_cap: f64,
    /// Frames averaged for the initial noise estimate.
    pub noise_init_frames: usize,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            gmin_late: 0.05,
            gmin_noise: 0.1,
            dd_alpha: 0.98,
            noise_smoothing: 0.98,
            vad_statistic: VadStatistic::LikelihoodRatio,
            vad_threshold: 0.15,
            xi_min: 10f64.powf(-2.5),
            spp_xi0: 0.3,
            gain_cap: 10.0,
            noise_init_frames: 6,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        unit("gmin_late", self.gmin_late)?;
        unit("gmin_noise", self.gmin_noise)?;
        unit("dd_alpha", self.dd_alpha)?;
        unit("noise_smoothing", self.noise_smoothing)?;
        if !(self.xi_min > 0.0) || !(self.spp_xi0 > 0.0) || !(self.gain_cap >= 1.0) {
            return Err(Error::Config("xi_min and spp_xi0 must be positive, gain_cap >= 1".into()));
        }
        if self.noise_init_frames == 0 {
            return Err(Error::Config("noise_init_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// MMSE log-spectral-amplitude gain `xi/(1+xi) exp(E1(v)/2)` with
/// `v = gamma xi/(1+xi)`, capped at `cap`.
pub fn lsa_gain(xi: f64, gamma: f64, cap: f64) -> f64 {
    if !(xi > 0.0) {
        return 0.0;
    }
    let ratio = xi / (1.0 + xi);
    let v = gamma.max(0.0) * ratio;
    if v == 0.0 {
        return cap;
    }
    (ratio * (0.5 * e1(v)).exp()).min(cap)
}

/// `g_lsa^p g_min^(1-p)`.
pub fn om_lsa_gain(g_lsa: f64, p: f64, g_min: f64) -> f64 {
    if p >= 1.0 {
        return g_lsa;
    }
    if p <= 0.0 {
        return g_min;
    }
    g_lsa.powf(p) * g_min.powf(1.0 - p)
}

/// Time-frequency gain floor: the two floors weighted by the late-reverberant
/// and noise variances.
pub fn gmin_tf(lambda_late: f64, lambda_noise: f64, config: &GainConfig) -> f64 {
    let total = lambda_late + lambda_noise;
    if !(total > 0.0) {
        return config.gmin_noise;
    }
    (config.gmin_late * lambda_late + config.gmin_noise * lambda_noise) / total
}

/// Per-bin SIRs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sirs {
    pub xi: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Interference variance used as denominator (late + noise, floored).
    pub interference: Vec<f64>,
}

/// Decision-directed a priori SIR and a posteriori SIR against
/// `lambda_late + lambda_noise`. The denominator is floored at `1e-12` of the
/// mean frame power.
pub fn compute_sirs(
    power: &[f64],
    amp_prev_sq: &[f64],
    lambda_late: &[f64],
    lambda_noise: &[f64],
    config: &GainConfig,
) -> Sirs {
    let mean_power = power.iter().sum::<f64>() / power.len().max(1) as f64;
    let floor = (1e-12 * mean_power).max(f64::MIN_POSITIVE);
    let n = power.len();
    let mut sirs = Sirs { xi: vec![0.0; n], gamma: vec![0.0; n], interference: vec![0.0; n] };
    for k in 0..n {
        let den = (lambda_late[k] + lambda_noise[k]).max(floor);
        let gamma = power[k] / den;
        let xi = config.dd_alpha * amp_prev_sq[k] / den + (1.0 - config.dd_alpha) * (gamma - 1.0).max(0.0);
        sirs.gamma[k] = gamma;
        sirs.xi[k] = xi.max(config.xi_min);
        sirs.interference[k] = den;
    }
    sirs
}

/// `sum_k [ln(gamma) xi/(1+xi) - ln(1+xi)]`, with `gamma` floored at 1e-12.
pub fn vad_statistic(xi: &[f64], gamma: &[f64]) -> f64 {
    xi.iter().zip(gamma).map(|(&x, &g)| g.max(1e-12).ln() * x / (1.0 + x) - x.ln_1p()).sum()
}

/// Mean Gaussian log-likelihood ratio of speech presence over the bins.
pub fn vad_likelihood_ratio(xi: &[f64], gamma: &[f64]) -> f64 {
    let total: f64 = xi.iter().zip(gamma).map(|(&x, &g)| g * x / (1.0 + x) - x.ln_1p()).sum();
    total / xi.len().max(1) as f64
}

pub fn frame_vad(kind: VadStatistic, xi: &[f64], gamma: &[f64]) -> f64 {
    match kind {
        VadStatistic::LikelihoodRatio => vad_likelihood_ratio(xi, gamma),
        VadStatistic::LogGammaSum => vad_statistic(xi, gamma),
    }
}

/// Recursive noise update on noise-only frames.
pub fn update_noise(lambda_noise: &mut [f64], power: &[f64], eta: f64, config: &GainConfig) {
    if eta < config.vad_threshold {
        let mu = config.noise_smoothing;
        for (l, &p) in lambda_noise.iter_mut().zip(power) {
            *l = mu * *l + (1.0 - mu) * p;
        }
    }
}

/// Speech presence proxy `xi/(xi + xi0)`, averaged over each bin and its
/// two neighbours.
pub fn speech_presence(xi: &[f64], xi0: f64) -> Vec<f64> {
    let raw: Vec<f64> = xi.iter().map(|&x| x / (x + xi0)).collect();
    let n = raw.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Mean power over frames, used as the initial noise estimate.
pub fn initial_noise(frames: &[&[Complex64]]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("no frames for the noise estimate".into()))?;
    let mut acc = vec![0.0; first.len()];
    for f in frames {
        for (a, c) in acc.iter_mut().zip(f.iter()) {
            *a += c.norm_sqr();
        }
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Per-utterance recursive state.
#[derive(Debug, Clone, PartialEq)]
pub struct GainState {
    pub lambda_noise: Vec<f64>,
    /// Enhanced magnitude of the previous frame.
    pub amp_prev: Vec<f64>,
    pub reverb: ReverbState,
    /// Current `E_r / E_d`.
    pub drr_inverse: f64,
}

/// Diagnostics of one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGains {
    pub gain: Vec<f64>,
    pub vad: f64,
    pub lambda_late: Vec<f64>,
    pub presence: Vec<f64>,
}

/// Gain computation for one frame configuration.
#[derive(Debug, Clone)]
pub struct GainEngine {
    config: GainConfig,
    reverb: ReverbModel,
    drr: DrrAdapter,
    adapt_drr: bool,
}

impl GainEngine {
    pub fn new(config: GainConfig, reverb: ReverbParams, hop: usize, n_bins: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, reverb: ReverbModel::new(reverb, hop, n_bins)?, drr: DrrAdapter::default(), adapt_drr: true })
    }

    /// Disables the online update of `E_r / E_d`.
    pub fn with_fixed_drr(mut self) -> Self {
        self.adapt_drr = false;
        self
    }

    pub fn config(&self) -> &GainConfig {
        &self.config
    }

    pub fn reverb_model(&self) -> &ReverbModel {
        &self.reverb
    }

    pub fn initial_state(&self, lambda_noise: Vec<f64>) -> GainState {
        let n = lambda_noise.len();
        GainState {
            lambda_noise,
            amp_prev: vec![0.0; n],
            reverb: self.reverb.initial_state(),
            drr_inverse: self.reverb.params().drr_inverse,
        }
    }

    /// Enhances one frame in place, keeping the noisy phase, and advances
    /// the state.
    pub fn enhance_frame(&self, spectrum: &mut [Complex64], state: &mut GainState) -> Result<FrameGains> {
        let n = spectrum.len();
        if state.lambda_noise.len() != n || state.amp_prev.len() != n {
            return Err(Error::InvalidArgument(format!("frame has {n} bins, state has {}", state.lambda_noise.len())));
        }
        let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
        let amp_prev_sq: Vec<f64> = state.amp_prev.iter().map(|a| a * a).collect();

        state.reverb.lambda_d.clone_from(&amp_prev_sq);
        self.reverb.update(&mut state.reverb, state.drr_inverse)?;
        let lambda_late = self.reverb.late_variance(&state.reverb);

        let sirs = compute_sirs(&power, &amp_prev_sq, &lambda_late, &state.lambda_noise, &self.config);
        let vad = frame_vad(self.config.vad_statistic, &sirs.xi, &sirs.gamma);
        let presence = speech_presence(&sirs.xi, self.config.spp_xi0);

        let mut gain = vec![0.0; n];
        for k in 0..n {
            let floor = gmin_tf(lambda_late[k], state.lambda_noise[k], &self.config);
            let g_lsa = lsa_gain(sirs.xi[k], sirs.gamma[k], self.config.gain_cap);
            gain[k] = om_lsa_gain(g_lsa, presence[k], floor);
            spectrum[k] *= gain[k];
        }

        if self.adapt_drr {
            let total_power: f64 = power.iter().sum();
            let total_interference: f64 = lambda_late.iter().zip(&state.lambda_noise).map(|(a, b)| a + b).sum();
            let active = total_power > self.drr.activity_gate * total_interference;
            let mut direct = 0.0;
            let mut reverberant = 0.0;
            for k in 0..n {
                let a2 = spectrum[k].norm_sqr();
                direct += a2;
                reverberant += (power[k] - state.lambda_noise[k] - a2).max(0.0);
            }
            state.drr_inverse = self.drr.adapt(state.drr_inverse, direct, reverberant, active);
        }

        update_noise(&mut state.lambda_noise, &power, vad, &self.config);
        for (a, c) in state.amp_prev.iter_mut().zip(spectrum.iter()) {
            *a = c.norm();
        }
        Ok(FrameGains { gain, vad, lambda_late, presence })
    }
}
