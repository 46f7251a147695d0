use super::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn long_cfg() -> FrameConfig {
    FrameConfig::stft_long(16000)
}

fn ser_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let sig: f64 = reference.iter().map(|x| x * x).sum();
    let err: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    10.0 * (sig / err.max(1e-300)).log10()
}

/// Harmonic chirp sampled on a frame-centered time axis whose fundamental is
/// `f0 (1 + alpha t)`.
fn harmonic_chirp_frame(cfg: &FrameConfig, f0: f64, alpha: f64, n_harm: usize) -> Vec<f64> {
    let fs = cfg.sample_rate as f64;
    (0..cfg.frame_len)
        .map(|n| {
            let t = (n as f64 - (cfg.frame_len - 1) as f64 / 2.0) / fs;
            (1..=n_harm).map(|k| (2.0 * PI * k as f64 * f0 * warp_phi(alpha, t)).cos()).sum()
        })
        .collect()
}

fn brute_dft(x: &[f64], n_fft: usize, n_bins: usize) -> Vec<Complex64> {
    (0..n_bins)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| {
                    let ph = -2.0 * PI * (k * n % n_fft) as f64 / n_fft as f64;
                    Complex64::from_polar(v, ph)
                })
                .sum()
        })
        .collect()
}

fn band_limited(len: usize, tones: &[(f64, f64, f64)], fs: f64) -> Vec<f64> {
    (0..len).map(|n| tones.iter().map(|&(a, f, p)| a * (2.0 * PI * f * n as f64 / fs + p).sin()).sum()).collect()
}

#[test]
fn presets_match_published_framing() {
    let s = FrameConfig::stft_short(16000);
    assert_eq!((s.frame_len, s.hop, s.fft_len), (512, 128, 512));
    let l = long_cfg();
    assert_eq!((l.frame_len, l.hop, l.fft_len, l.oversample), (2048, 128, 3262, 8));
    let w96 = FrameConfig::long_window(96.0, 16000);
    assert_eq!((w96.frame_len, w96.fft_len), (1536, 2447));
}

#[test]
fn inverse_warp_closed_form() {
    assert!((warp_phi(0.5, 1.0) - 1.25).abs() < 1e-15);
    assert!((warp_phi_inv(0.5, 1.25) - 1.0).abs() < 1e-15);
    assert_eq!(warp_phi_inv(0.0, 0.3), 0.3);
    for &a in &[-4.0, -0.4, 1.2, 4.0] {
        for &t in &[-0.064, -0.01, 0.0, 0.02, 0.064] {
            assert!((warp_phi_inv(a, warp_phi(a, t)) - t).abs() < 1e-15);
        }
    }
}

#[test]
fn identity_warp_returns_the_frame() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let x = band_limited(cfg.frame_len, &[(1.0, 313.0, 0.2), (0.3, 2900.0, 1.0)], 16000.0);
    let (w, grid) = tr.warp_time_axis(&x, 0.0).unwrap();
    assert_eq!(w, x);
    assert!(grid.windows(2).all(|p| p[1] > p[0]));
}

#[test]
fn warp_grid_is_increasing_and_spans_the_frame() {
    let tr = FanChirpTransform::new(long_cfg()).unwrap();
    for &a in &[-4.0, -1.6, 0.8, 4.0] {
        let g = tr.warp_grid(a).unwrap();
        assert_eq!(g.len(), 2048);
        assert!(g.windows(2).all(|p| p[1] > p[0]));
        assert!(g[0].abs() < 1e-9 && (g[2047] - 2047.0).abs() < 1e-9);
    }
}

#[test]
fn nonmonotone_warp_is_rejected() {
    let tr = FanChirpTransform::new(long_cfg()).unwrap();
    let x = vec![0.0; 2048];
    // 1 - |alpha| * 0.064 <= 0 once |alpha| >= 15.625
    assert!(matches!(tr.warp_time_axis(&x, 16.0), Err(Error::InvalidChirp { .. })));
    assert!(matches!(tr.forward_frame(&x, -20.0, 0), Err(Error::InvalidChirp { .. })));
    assert!(tr.forward_frame(&x, 15.0, 0).is_ok());
}

#[test]
fn mismatched_warp_broadens_a_tone_peak() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let tone = harmonic_chirp_frame(&cfg, 200.0, 0.0, 1);
    let chirp = harmonic_chirp_frame(&cfg, 200.0, 2.0, 1);
    let peak = |x: &[f64]| {
        let s = tr.forward_frame(x, 2.0, 0).unwrap().spectrum;
        let mags: Vec<f64> = s.iter().map(|c| c.norm()).collect();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let width = mags.iter().filter(|&&m| m > max / 2.0).count();
        (max, width)
    };
    let (tone_max, tone_width) = peak(&tone);
    let (chirp_max, chirp_width) = peak(&chirp);
    assert!(tone_max < chirp_max);
    assert!(tone_width > chirp_width, "{tone_width} vs {chirp_width}");
}

#[test]
fn zero_rate_frame_is_the_windowed_dft() {
    for cfg in [FrameConfig::stft_short(16000), long_cfg()] {
        let tr = FanChirpTransform::new(cfg).unwrap();
        let x = band_limited(cfg.frame_len, &[(1.0, 441.0, 0.1), (0.5, 5100.0, 2.0)], 16000.0);
        let windowed: Vec<f64> = x.iter().zip(tr.window()).map(|(a, w)| a * w).collect();
        let oracle = brute_dft(&windowed, cfg.fft_len, cfg.n_bins());
        let got = tr.forward_frame(&x, 0.0, 0).unwrap().spectrum;
        let scale = oracle.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let dev = got.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(dev / scale < 1e-6, "relative deviation {}", dev / scale);
    }
}

#[test]
fn matched_rate_sharpens_every_harmonic() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let (f0, alpha) = (180.0, 2.4);
    let x = harmonic_chirp_frame(&cfg, f0, alpha, 10);
    let matched = tr.forward_frame(&x, alpha, 0).unwrap().spectrum;
    let plain = tr.forward_frame(&x, 0.0, 0).unwrap().spectrum;
    let bin = cfg.bin_hz();
    for k in 1..=10 {
        let centre = (k as f64 * f0 / bin).round() as usize;
        let local_max = |s: &[Complex64]| s[centre - 3..=centre + 3].iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(local_max(&matched) >= local_max(&plain), "harmonic {k}");
    }
}

#[test]
fn zero_in_zero_out() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let f = tr.forward_frame(&vec![0.0; 2048], 1.2, 3).unwrap();
    assert!(f.spectrum.iter().all(|c| c.norm() == 0.0));
    assert!(tr.inverse_frame(&f).unwrap().iter().all(|&v| v == 0.0));

    let series = tr.analyze(&vec![0.0; 5000], &ChirpRates::AutoZero).unwrap();
    assert!(tr.synthesize(&series).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_rate_frame_inverts_to_round_off() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let x = band_limited(cfg.frame_len, &[(1.0, 97.0, 0.0), (0.2, 7000.0, 1.0)], 16000.0);
    let back = tr.inverse_frame(&tr.forward_frame(&x, 0.0, 0).unwrap()).unwrap();
    let peak = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let dev = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev / peak < 1e-10, "{}", dev / peak);
}

#[test]
fn warped_frame_round_trip_exceeds_30_db() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let x = harmonic_chirp_frame(&cfg, 150.0, 1.6, 25);
    for &a in &[-4.0, -1.2, 0.4, 1.6, 4.0] {
        let back = tr.inverse_frame(&tr.forward_frame(&x, a, 0).unwrap()).unwrap();
        let ser = ser_db(&x, &back);
        assert!(ser > 30.0, "alpha {a}: {ser} dB");
    }
}

#[test]
fn frame_count_follows_symmetric_padding() {
    let cfg = long_cfg();
    assert_eq!(cfg.n_frames(2048 + 128), (2176 + 1920usize).div_ceil(128));
    assert_eq!(cfg.n_frames(2048 + 128), 32);
    assert_eq!(cfg.frame_start(0), -1920);
    let tr = FanChirpTransform::new(cfg).unwrap();
    let s = tr.analyze(&vec![0.1; 2176], &ChirpRates::AutoZero).unwrap();
    assert_eq!(s.frames.len(), 32);
    assert!(s.frames.iter().enumerate().all(|(d, f)| f.frame_index == d));
}

#[test]
fn stft_frames_satisfy_parseval() {
    let cfg = FrameConfig::stft_short(16000);
    let tr = FanChirpTransform::new(cfg).unwrap();
    let x = band_limited(3000, &[(1.0, 200.0, 0.0), (0.4, 3333.0, 0.5)], 16000.0);
    let s = tr.analyze(&x, &ChirpRates::AutoZero).unwrap();
    for f in &s.frames {
        let frame = tr.extract_frame(&x, f.frame_index);
        let time_energy: f64 = frame.iter().zip(tr.window()).map(|(a, w)| (a * w).powi(2)).sum();
        let n = cfg.fft_len;
        let spec_energy: f64 =
            (0..n).map(|k| f.spectrum[if k <= n / 2 { k } else { n - k }].norm_sqr()).sum::<f64>() / n as f64;
        assert!((time_energy - spec_energy).abs() <= 1e-9 * time_energy.max(1e-12));
    }
}

#[test]
fn constant_signal_gives_identical_interior_frames() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    let x = vec![0.5; 8000];
    let s = tr.analyze(&x, &ChirpRates::AutoZero).unwrap();
    // Frames 15 and 16 lie fully inside the signal.
    for (a, b) in s.frames[15].spectrum.iter().zip(&s.frames[16].spectrum) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn stft_round_trip_is_exact() {
    for cfg in [FrameConfig::stft_short(16000), long_cfg()] {
        let tr = FanChirpTransform::new(cfg).unwrap();
        let x = band_limited(7001, &[(0.7, 123.0, 0.3), (0.2, 6001.0, 0.0)], 16000.0);
        let y = tr.synthesize(&tr.analyze(&x, &ChirpRates::AutoZero).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let err = (x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!(err / rms < 1e-6);
    }
}

#[test]
fn argument_errors() {
    let cfg = long_cfg();
    let tr = FanChirpTransform::new(cfg).unwrap();
    assert!(matches!(tr.analyze(&[], &ChirpRates::AutoZero), Err(Error::InvalidArgument(_))));
    assert!(tr.analyze(&[0.0; 3000], &ChirpRates::PerFrame(vec![0.0; 2])).is_err());
    assert!(tr.forward_frame(&[0.0; 100], 0.0, 0).is_err());

    let mut s = tr.analyze(&[0.1; 3000], &ChirpRates::AutoZero).unwrap();
    s.config.hop = 64;
    assert!(matches!(tr.synthesize(&s), Err(Error::InvalidArgument(_))));

    let mut bad = cfg;
    bad.hop = 4096;
    assert!(FanChirpTransform::new(bad).is_err());
    bad = cfg;
    bad.fft_len = 1000;
    assert!(FanChirpTransform::new(bad).is_err());
}

#[test]
fn candidate_rates_keep_the_warp_monotone() {
    let cfg = long_cfg();
    for i in 0..21 {
        let a = -4.0 + 0.4 * i as f64;
        assert!(cfg.check_chirp(a).is_ok());
        assert!(1.0 - a.abs() * cfg.half_span_s() >= 0.744 - 1e-12);
    }
}

fn tones_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.1f64..1.0, 60.0f64..3500.0, 0.0f64..std::f64::consts::TAU), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn warped_round_trip_exceeds_30_db(
        tones in tones_strategy(),
        alpha_idx in prop::collection::vec(0usize..21, 8),
    ) {
        let cfg = long_cfg();
        let tr = FanChirpTransform::new(cfg).unwrap();
        let x = band_limited(4000, &tones, 16000.0);
        let n = cfg.n_frames(x.len());
        let alphas: Vec<f64> = (0..n).map(|d| -4.0 + 0.4 * alpha_idx[d % 8] as f64).collect();
        let y = tr.synthesize(&tr.analyze(&x, &ChirpRates::PerFrame(alphas)).unwrap()).unwrap();
        prop_assert!(ser_db(&x, &y) > 30.0);
    }

    #[test]
    fn stft_round_trip_exceeds_120_db(tones in tones_strategy()) {
        let cfg = FrameConfig::stft_short(16000);
        let tr = FanChirpTransform::new(cfg).unwrap();
        let x = band_limited(3000, &tones, 16000.0);
        let y = tr.synthesize(&tr.analyze(&x, &ChirpRates::AutoZero).unwrap()).unwrap();
        prop_assert!(ser_db(&x[400..2600], &y[400..2600]) > 120.0);
    }

    #[test]
    fn forward_and_inverse_are_linear(
        a in prop::collection::vec(-1.0f64..1.0, 2048),
        b in prop::collection::vec(-1.0f64..1.0, 2048),
        alpha_idx in 0usize..21,
    ) {
        let tr = FanChirpTransform::new(long_cfg()).unwrap();
        let alpha = -4.0 + 0.4 * alpha_idx as f64;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = tr.forward_frame(&a, alpha, 0).unwrap();
        let fb = tr.forward_frame(&b, alpha, 0).unwrap();
        let fs = tr.forward_frame(&sum, alpha, 0).unwrap();
        for ((x, y), z) in fa.spectrum.iter().zip(&fb.spectrum).zip(&fs.spectrum) {
            prop_assert!((x + y - z).norm() < 1e-9 * (1.0 + z.norm()));
        }
        let ia = tr.inverse_frame(&fa).unwrap();
        let ib = tr.inverse_frame(&fb).unwrap();
        let is = tr.inverse_frame(&fs).unwrap();
        for ((x, y), z) in ia.iter().zip(&ib).zip(&is) {
            prop_assert!((x + y - z).abs() < 1e-9);
        }
    }
}
