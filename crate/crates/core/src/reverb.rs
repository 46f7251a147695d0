//! Statistical late-reverberation model.
//!
//! The room impulse response is modelled as white noise under an exponential
//! envelope decaying at `zeta` nepers per sample. The reverberant spectral
//! variance follows a first-order recursion driven by the direct-path
//! variance, and the late part is the reverberant variance delayed and
//! attenuated by the early/late split time.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `3 ln(10) / (T60 fs)`: amplitude decay in nepers per sample.
pub fn zeta_from_t60(t60: f64, sample_rate: f64) -> Result<f64> {
    if !(t60 > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("T60 ({t60}) and sample rate ({sample_rate}) must be positive")));
    }
    Ok(3.0 * std::f64::consts::LN_10 / (t60 * sample_rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverbParams {
    pub t60: f64,
    pub sample_rate: u32,
    /// Decay per sample; derived from `t60`.
    pub zeta: f64,
    /// Optional per-bin decay overriding `zeta` in the variance recursions.
    pub zeta_per_bin: Option<Vec<f64>>,
    /// Early/late split in samples, a multiple of the hop.
    pub early_len: usize,
    /// Length of the direct part of a model RIR, in samples.
    pub direct_len: usize,
    /// Reverberant-to-direct energy ratio `E_r / E_d`.
    pub drr_inverse: f64,
    pub sigma_d2: f64,
    pub sigma_r2: f64,
}

impl ReverbParams {
    /// Defaults: 50 ms early part (rounded to a multiple of `hop`), 8 ms
    /// direct part, `E_r / E_d = 1`, unit model variances.
    pub fn new(t60: f64, sample_rate: u32, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        let fs = sample_rate as f64;
        let blocks = ((0.05 * fs / hop as f64).round() as usize).max(1);
        Ok(Self {
            t60,
            sample_rate,
            zeta: zeta_from_t60(t60, fs)?,
            zeta_per_bin: None,
            early_len: blocks * hop,
            direct_len: (0.008 * fs).round() as usize,
            drr_inverse: 1.0,
            sigma_d2: 1.0,
            sigma_r2: 1.0,
        })
    }

    /// Expected `E_r / E_d` of a model impulse response.
    pub fn model_energy_ratio(&self) -> f64 {
        let q = (-2.0 * self.zeta).exp();
        let direct = self.sigma_d2 * (1.0 - q.powi(self.direct_len as i32)) / (1.0 - q);
        let reverberant = self.sigma_r2 * q.powi(self.direct_len as i32) / (1.0 - q);
        reverberant / direct
    }

    /// Sets the direct-part variance so the model response has the given
    /// `E_r / E_d`.
    pub fn with_model_energy_ratio(mut self, ratio: f64) -> Self {
        self.sigma_d2 = 1.0;
        self.sigma_d2 = self.model_energy_ratio() / ratio;
        self
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        if self.early_len < hop {
            return Err(Error::Config(format!("early/late split {} is shorter than the hop {hop}", self.early_len)));
        }
        if !self.early_len.is_multiple_of(hop) {
            return Err(Error::Config(format!(
                "early/late split {} is not a multiple of the hop {hop}",
                self.early_len
            )));
        }
        if !(self.zeta >= 0.0) || self.zeta_per_bin.iter().flatten().any(|z| !(*z >= 0.0)) {
            return Err(Error::Config("decay constants must be nonnegative".into()));
        }
        if !(self.drr_inverse >= 0.0) {
            return Err(Error::Config("E_r/E_d must be nonnegative".into()));
        }
        Ok(())
    }

    fn zeta_at(&self, bin: usize) -> f64 {
        self.zeta_per_bin.as_ref().map_or(self.zeta, |z| z[bin])
    }
}

/// Expected energy envelope of the model RIR at sample `n`.
pub fn rir_energy_envelope(params: &ReverbParams, n: isize) -> f64 {
    if n < 0 {
        return 0.0;
    }
    let sigma2 = if (n as usize) < params.direct_len { params.sigma_d2 } else { params.sigma_r2 };
    sigma2 * (-2.0 * params.zeta * n as f64).exp()
}

/// Draws a model RIR: Gaussian noise shaped by the square root of the
/// energy envelope.
pub fn model_rir<R: Rng + ?Sized>(params: &ReverbParams, len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let b: f64 = StandardNormal.sample(rng);
            b * rir_energy_envelope(params, n as isize).sqrt()
        })
        .collect()
}

/// Per-utterance recursion state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverbState {
    /// Reverberant variance at the current frame.
    pub lambda_r: Vec<f64>,
    /// Direct variance of the previous frame.
    pub lambda_d: Vec<f64>,
    /// The last `early_len / hop` reverberant variances, oldest first.
    history: VecDeque<Vec<f64>>,
}

impl ReverbState {
    pub fn history(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.history.iter()
    }
}

/// Reverberant and late-reverberant variance recursions for one frame
/// configuration.
#[derive(Debug, Clone)]
pub struct ReverbModel {
    params: ReverbParams,
    hop: usize,
    n_bins: usize,
    /// `exp(-2 zeta hop)` per bin.
    hop_decay: Vec<f64>,
    /// `exp(-2 zeta (early_len - hop))` per bin.
    late_decay: Vec<f64>,
}

impl ReverbModel {
    pub fn new(params: ReverbParams, hop: usize, n_bins: usize) -> Result<Self> {
        params.validate(hop)?;
        if let Some(z) = &params.zeta_per_bin {
            if z.len() != n_bins {
                return Err(Error::Config(format!("{} per-bin decay values for {n_bins} bins", z.len())));
            }
        }
        let hop_decay = (0..n_bins).map(|k| (-2.0 * params.zeta_at(k) * hop as f64).exp()).collect();
        let late_decay =
            (0..n_bins).map(|k| (-2.0 * params.zeta_at(k) * (params.early_len - hop) as f64).exp()).collect();
        Ok(Self { params, hop, n_bins, hop_decay, late_decay })
    }

    pub fn params(&self) -> &ReverbParams {
        &self.params
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn history_len(&self) -> usize {
        self.params.early_len / self.hop
    }

    /// Zero state: silence before the utterance.
    pub fn initial_state(&self) -> ReverbState {
        let zeros = vec![0.0; self.n_bins];
        ReverbState {
            lambda_r: zeros.clone(),
            lambda_d: zeros.clone(),
            history: std::iter::repeat_n(zeros, self.history_len()).collect(),
        }
    }

    /// Advances the reverberant variance one frame,
    /// `lambda_r <- a lambda_r + (E_r/E_d)(1 - a) lambda_d` with
    /// `a = exp(-2 zeta hop)`, and records it in the history.
    pub fn update(&self, state: &mut ReverbState, drr_inverse: f64) -> Result<()> {
        if state.lambda_r.len() != self.n_bins || state.lambda_d.len() != self.n_bins {
            return Err(Error::InvalidArgument("state has the wrong number of bins".into()));
        }
        if state.lambda_r.iter().chain(&state.lambda_d).any(|v| !(*v >= 0.0)) {
            return Err(Error::Invariant("negative or NaN variance in reverb state".into()));
        }
        if !(drr_inverse >= 0.0) {
            return Err(Error::Invariant(format!("E_r/E_d = {drr_inverse} is negative")));
        }
        for k in 0..self.n_bins {
            let a = self.hop_decay[k];
            state.lambda_r[k] = a * state.lambda_r[k] + drr_inverse * (1.0 - a) * state.lambda_d[k];
        }
        let mut slot = state.history.pop_front().unwrap_or_default();
        slot.clone_from(&state.lambda_r);
        state.history.push_back(slot);
        Ok(())
    }

    /// Late-reverberant variance of the current frame: the reverberant
    /// variance `early_len / hop - 1` frames ago, attenuated by
    /// `exp(-2 zeta (early_len - hop))`.
    pub fn late_variance(&self, state: &ReverbState) -> Vec<f64> {
        let delayed = state.history.front().expect("history is never empty");
        delayed.iter().zip(&self.late_decay).map(|(v, d)| v * d).collect()
    }
}

/// Exponential smoothing of `E_r / E_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrAdapter {
    pub smoothing: f64,
    /// Frame-level a posteriori SIR (linear) above which the direct signal
    /// counts as active and the ratio is updated.
    pub activity_gate: f64,
}

impl Default for DrrAdapter {
    fn default() -> Self {
        Self { smoothing: 0.95, activity_gate: 10f64.powf(0.3) }
    }
}

impl DrrAdapter {
    /// One update from direct and reverberant energy estimates of a frame.
    /// The ratio is kept in `[0, 1]`; inactive frames leave it unchanged.
    pub fn adapt(&self, current: f64, direct_est: f64, reverb_est: f64, active: bool) -> f64 {
        if !active {
            return current;
        }
        let observed = if direct_est > 0.0 {
            reverb_est.max(0.0) / direct_est
        } else if reverb_est > 0.0 {
            1.0
        } else {
            return current;
        };
        (self.smoothing * current + (1.0 - self.smoothing) * observed).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(t60: f64) -> ReverbParams {
        ReverbParams::new(t60, 16000, 128).unwrap()
    }

    /// Model whose per-hop decay is exactly `a`.
    fn model_with_hop_decay(a: f64, early_blocks: usize, n_bins: usize) -> ReverbModel {
        let hop = 128;
        let mut p = params(0.5);
        p.zeta = -a.ln() / (2.0 * hop as f64);
        p.early_len = early_blocks * hop;
        ReverbModel::new(p, hop, n_bins).unwrap()
    }

    #[test]
    fn zeta_values() {
        assert!((zeta_from_t60(0.5, 16000.0).unwrap() - 8.63469e-4).abs() < 1e-9);
        let z1 = zeta_from_t60(0.3, 16000.0).unwrap();
        let z2 = zeta_from_t60(0.6, 16000.0).unwrap();
        assert!((z1 / z2 - 2.0).abs() < 1e-12);
        assert!(zeta_from_t60(1e12, 16000.0).unwrap() < 1e-15);
        assert!(zeta_from_t60(0.0, 16000.0).is_err());
        assert!(zeta_from_t60(0.5, -1.0).is_err());
    }

    #[test]
    fn default_split_lengths() {
        let p = params(0.5);
        assert_eq!(p.early_len, 768);
        assert_eq!(p.direct_len, 128);
        assert_eq!(p.early_len % 128, 0);
    }

    #[test]
    fn bad_split_is_a_config_error() {
        let mut p = params(0.5);
        p.early_len = 64;
        assert!(matches!(ReverbModel::new(p.clone(), 128, 4), Err(Error::Config(_))));
        p.early_len = 200;
        assert!(matches!(ReverbModel::new(p, 128, 4), Err(Error::Config(_))));
    }

    #[test]
    fn one_step_of_the_recursion() {
        let m = model_with_hop_decay(0.9, 6, 1);
        let mut s = m.initial_state();
        s.lambda_d = vec![1.0];
        m.update(&mut s, 1.0).unwrap();
        assert!((s.lambda_r[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_and_sourceless_decay() {
        let m = model_with_hop_decay(0.9, 6, 1);
        let mut s = m.initial_state();
        s.lambda_r = vec![2.0];
        for d in 1..=10 {
            m.update(&mut s, 1.0).unwrap();
            assert!((s.lambda_r[0] - 2.0 * 0.9f64.powi(d)).abs() < 1e-12);
        }
        let mut s = m.initial_state();
        s.lambda_r = vec![2.0];
        s.lambda_d = vec![5.0];
        for _ in 0..2000 {
            m.update(&mut s, 0.0).unwrap();
        }
        assert!(s.lambda_r[0] < 1e-80);
    }

    #[test]
    fn late_variance_examples() {
        // exp(-2 zeta (early - hop)) = 0.8 with five blocks of delay.
        let a = 0.8f64.powf(1.0 / 5.0);
        let m = model_with_hop_decay(a, 6, 1);
        let mut s = m.initial_state();
        s.history = std::iter::repeat_n(vec![1.0], 6).collect();
        assert!((m.late_variance(&s)[0] - 0.8).abs() < 1e-12);

        let m = model_with_hop_decay(0.9, 1, 3);
        let mut s = m.initial_state();
        s.lambda_d = vec![1.0, 2.0, 3.0];
        m.update(&mut s, 1.0).unwrap();
        assert_eq!(m.late_variance(&s), s.lambda_r);

        let m = model_with_hop_decay(0.9, 6, 3);
        assert_eq!(m.late_variance(&m.initial_state()), vec![0.0; 3]);
    }

    #[test]
    fn impulse_response_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: f64 = rng.random_range(0.5..0.999);
            let c: f64 = rng.random_range(0.0..1.0);
            let m = model_with_hop_decay(a, 6, 1);
            let a = m.hop_decay[0];
            let mut s = m.initial_state();
            s.lambda_d = vec![1.0];
            for d in 1..=100 {
                m.update(&mut s, c).unwrap();
                s.lambda_d = vec![0.0];
                let closed = c * (1.0 - a) * a.powi(d - 1);
                assert!((s.lambda_r[0] - closed).abs() <= 1e-13 * closed);
            }
        }
    }

    #[test]
    fn late_variance_reads_the_right_frame() {
        let blocks = 6;
        let m = model_with_hop_decay(0.9, blocks, 1);
        let mut s = m.initial_state();
        let marker_frame = 10;
        let mut late = Vec::new();
        for d in 0..30 {
            s.lambda_r = vec![0.0];
            s.lambda_d = vec![if d == marker_frame { 1.0 } else { 0.0 }];
            m.update(&mut s, 1.0).unwrap();
            late.push(m.late_variance(&s)[0]);
        }
        // lambda_r is nonzero only at the marker frame (it is reset every
        // frame), so the late variance lights up `blocks - 1` frames later.
        for (d, v) in late.iter().enumerate() {
            assert_eq!(*v > 0.0, d == marker_frame + blocks - 1, "frame {d}");
        }
    }

    #[test]
    fn negative_variance_is_rejected() {
        let m = model_with_hop_decay(0.9, 6, 2);
        let mut s = m.initial_state();
        s.lambda_d = vec![1.0, -1.0];
        assert!(matches!(m.update(&mut s, 1.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn per_bin_decay() {
        let mut p = params(0.5);
        p.zeta_per_bin = Some(vec![0.0, 1e-3]);
        let m = ReverbModel::new(p.clone(), 128, 2).unwrap();
        let mut s = m.initial_state();
        s.lambda_r = vec![1.0, 1.0];
        m.update(&mut s, 1.0).unwrap();
        assert_eq!(s.lambda_r[0], 1.0);
        assert!((s.lambda_r[1] - (-0.256f64).exp()).abs() < 1e-12);
        assert!(ReverbModel::new(p, 128, 3).is_err());
    }

    #[test]
    fn drr_adaptation() {
        let ad = DrrAdapter::default();
        assert_eq!(ad.adapt(1.0, 1.0, 1.4, true), 1.0);
        assert_eq!(ad.adapt(0.3, 1.0, 1.0, false), 0.3);
        let mut r = 0.2;
        // Five time constants of a 0.95 smoother is 100 frames.
        for _ in 0..100 {
            r = ad.adapt(r, 0.5, 0.5, true);
        }
        assert!((r - 1.0).abs() < 0.01);
        assert!(ad.adapt(0.5, 0.0, 0.0, true) == 0.5);
    }

    #[test]
    fn envelope() {
        let mut p = params(0.5);
        p.sigma_d2 = 2.0;
        p.sigma_r2 = 0.5;
        assert_eq!(rir_energy_envelope(&p, 0), 2.0);
        assert_eq!(rir_energy_envelope(&p, -3), 0.0);
        let nd = p.direct_len as isize;
        assert!((rir_energy_envelope(&p, nd) - 0.5 * (-2.0 * p.zeta * nd as f64).exp()).abs() < 1e-15);
        p.sigma_r2 = 2.0;
        let before = rir_energy_envelope(&p, nd - 1);
        let after = rir_energy_envelope(&p, nd);
        assert!((before / after - (2.0 * p.zeta).exp()).abs() < 1e-12);
    }

    #[test]
    fn model_rir_follows_the_envelope() {
        let p = params(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 8000;
        let mut acc = vec![0.0; n];
        for _ in 0..200 {
            for (a, h) in acc.iter_mut().zip(model_rir(&p, n, &mut rng)) {
                *a += h * h / 200.0;
            }
        }
        for &i in &[1000usize, 3000, 6000] {
            let m: f64 = acc[i - 200..i + 200].iter().sum::<f64>() / 400.0;
            let e = rir_energy_envelope(&p, i as isize);
            assert!((m / e - 1.0).abs() < 0.15, "{i}: {m} vs {e}");
        }
    }

    proptest! {
        #[test]
        fn variances_stay_nonnegative(
            drive in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 4), 1..60),
            a in 0.01f64..0.999,
            c in 0.0f64..1.0,
        ) {
            let m = model_with_hop_decay(a, 3, 4);
            let mut s = m.initial_state();
            for d in drive {
                s.lambda_d = d;
                m.update(&mut s, c).unwrap();
                prop_assert!(s.lambda_r.iter().all(|v| *v >= 0.0));
                prop_assert!(m.late_variance(&s).iter().all(|v| *v >= 0.0));
            }
        }
    }
}
