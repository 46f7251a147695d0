use super::*;
use crate::tf::{ChirpRates, FanChirpTransform};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FS: u32 = 16000;

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Vowel-like test signal: a 140 Hz pulse train through two resonators.
fn vowel(n: usize) -> Vec<f64> {
    let period = FS as f64 / 140.0;
    let mut x: Vec<f64> = (0..n).map(|i| if (i as f64 % period) < 1.0 { 1.0 } else { 0.0 }).collect();
    for (f, bw) in [(700.0, 80.0), (1200.0, 100.0)] {
        let r = (-PI * bw / FS as f64).exp();
        let theta = 2.0 * PI * f / FS as f64;
        let (a1, a2) = (-2.0 * r * theta.cos(), r * r);
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = x[i] - a1 * if i >= 1 { y[i - 1] } else { 0.0 } - a2 * if i >= 2 { y[i - 2] } else { 0.0 };
        }
        x = y;
    }
    x
}

#[test]
fn levinson_solves_the_normal_equations() {
    let frame: Vec<f64> = vowel(400);
    let r = autocorrelation(&frame, LPC_ORDER);
    let a = levinson(&r);
    let p = LPC_ORDER;
    let m = DMatrix::from_fn(p, p, |i, j| r[i.abs_diff(j)]);
    let rhs = DVector::from_fn(p, |i, _| -r[i + 1]);
    let want = m.lu().solve(&rhs).unwrap();
    for k in 0..p {
        assert!((a[k + 1] - want[k]).abs() < 1e-8 * (1.0 + want[k].abs()), "k={k}");
    }
}

#[test]
fn cepstrum_recursion_matches_log_spectrum() {
    // c_n = 2 * IDFT(ln |1/A|)[n] for a minimum-phase all-pole model.
    let a = levinson(&autocorrelation(&vowel(400), LPC_ORDER));
    let n = 4096;
    let log_mag: Vec<f64> = (0..n)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / n as f64;
            let resp: Complex64 =
                a.iter().enumerate().map(|(i, c)| c * Complex64::from_polar(1.0, -w * i as f64)).sum();
            -resp.norm().ln()
        })
        .collect();
    let got = lpc_cepstrum(&a, 16);
    for (m, c) in got.iter().enumerate() {
        let m = m + 1;
        let want: f64 = 2.0
            * log_mag.iter().enumerate().map(|(k, v)| v * (2.0 * PI * (k * m) as f64 / n as f64).cos()).sum::<f64>()
            / n as f64;
        assert!((c - want).abs() < 1e-9, "c_{m}: {c} vs {want}");
    }
}

#[test]
fn cepstral_distance_examples() {
    let x = vowel(8000);
    let id = cepstral_distance(&x, &x, FS).unwrap();
    assert_eq!((id.mean, id.median), (0.0, 0.0));
    let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    assert!(cepstral_distance(&x, &half, FS).unwrap().mean < 1e-9);
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let noisy: Vec<f64> = x.iter().zip(white(8000, 3)).map(|(a, b)| a + power.sqrt() * b).collect();
    assert!(cepstral_distance(&x, &noisy, FS).unwrap().mean > 2.0);
}

#[test]
fn llr_examples() {
    let x = vowel(8000);
    assert_eq!(llr(&x, &x, FS).unwrap().mean, 0.0);
    let n = white(8000, 4);
    let v = llr(&x, &n, FS).unwrap();
    assert!(v.mean > 1.5, "{}", v.mean);
    let noisy: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + 0.05 * b).collect();
    let forward = llr(&x, &noisy, FS).unwrap().mean;
    let backward = llr(&noisy, &x, FS).unwrap().mean;
    assert!((forward - backward).abs() > 1e-3);
}

#[test]
fn fwsegsnr_examples() {
    let x = vowel(16000);
    assert_eq!(fwsegsnr(&x, &x, FS).unwrap().mean, 35.0);
    // A silent estimate leaves an error equal to the reference.
    assert!(fwsegsnr(&x, &vec![0.0; x.len()], FS).unwrap().mean.abs() < 1e-12);
    let loud: Vec<f64> = x.iter().map(|v| 5.0 * v).collect();
    assert_eq!(fwsegsnr(&x, &loud, FS).unwrap().mean, -10.0);
}

#[test]
fn fwsegsnr_at_ten_db() {
    let x = white(32000, 8);
    let n = white(32000, 9);
    let noisy: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + 0.1f64.sqrt() * b).collect();
    let s = fwsegsnr(&x, &noisy, FS).unwrap();
    assert!((5.0..=15.0).contains(&s.mean), "{}", s.mean);
}

#[test]
fn silent_reference_frames_are_skipped() {
    let mut x = vec![0.0; 4000];
    x.extend(vowel(4000));
    let all = fwsegsnr(&x, &x, FS).unwrap();
    let voiced = fwsegsnr(&x[4000..], &x[4000..], FS).unwrap();
    assert!(all.frames < voiced.frames + 3);
    assert!(fwsegsnr(&[0.0; 1000], &[1.0; 1000], FS).is_err());
}

#[test]
fn test_signal_is_trimmed_or_padded() {
    let x = vowel(4000);
    let mut longer = x.clone();
    longer.extend(white(500, 1));
    assert_eq!(cepstral_distance(&x, &longer, FS).unwrap().mean, 0.0);
}

#[test]
fn mel_bank_covers_the_band() {
    let bank = mel_filterbank(25, 513, FS);
    assert_eq!(bank.len(), 25);
    for (b, w) in bank.iter().enumerate() {
        let peak = w.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.5 && peak <= 1.0, "band {b}");
    }
}

#[test]
fn report_aggregates_utterances() {
    let s = |v| UtteranceScores { cd: v, llr: v / 10.0, fwsegsnr: 10.0 * v };
    let r = MetricReport::from_scores(&[s(1.0), s(2.0), s(6.0)]).unwrap();
    assert_eq!(r.mean_cd, 3.0);
    assert_eq!(r.median_cd, 2.0);
    assert_eq!(r.median_fwsegsnr, 20.0);
    assert!(MetricReport::from_scores(&[]).is_err());
}

fn series(x: &[f64]) -> TFSeries {
    FanChirpTransform::new(FrameConfig::stft_short(FS)).unwrap().analyze(x, &ChirpRates::AutoZero).unwrap()
}

fn full_mask(s: &TFSeries, v: bool) -> Vec<Vec<bool>> {
    s.frames.iter().map(|f| vec![v; f.spectrum.len()]).collect()
}

#[test]
fn local_snr_edge_cases() {
    let x = white(2000, 1);
    let zero = vec![0.0; 2000];
    let (s, z) = (series(&x), series(&zero));
    let m = local_snr_map(&z, &s, &s, full_mask(&s, true)).unwrap();
    assert!(m.snr.iter().flatten().all(|&v| v == 0.0));
    let m = local_snr_map(&s, &z, &z, full_mask(&s, true)).unwrap();
    assert!(m.snr.iter().flatten().all(|&v| v.is_finite() && v > 1e200));
    let short = series(&x[..1000]);
    assert!(local_snr_map(&s, &short, &s, full_mask(&s, true)).is_err());
    assert!(local_snr_map(&s, &s, &s, vec![]).is_err());
}

#[test]
fn harmonic_chirp_stimuli() {
    let a = gen_harmonic_chirp(200.0, 233.0, 0.2, 20, FS).unwrap();
    assert_eq!(a.samples.len(), 3200);
    assert!((a.f0_at(0.1) - 216.5).abs() < 1e-12);
    assert!((a.chirp_rate_at(0.0) - 165.0 / 200.0).abs() < 1e-12);
    // A 250 -> 200 Hz fundamental completes 45 cycles in 0.2 s.
    let one = gen_harmonic_chirp(250.0, 200.0, 0.2, 1, FS).unwrap();
    let crossings = one.samples.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count();
    assert!((44..=45).contains(&crossings), "{crossings}");
    assert!(gen_harmonic_chirp(400.0, 420.0, 0.2, 20, FS).is_err());
    assert!(gen_harmonic_chirp(200.0, 233.0, 0.0, 20, FS).is_err());
}

#[test]
fn padding_shifts_the_mask_with_the_chirp() {
    let cfg = FrameConfig::stft_long(FS);
    let bare = gen_harmonic_chirp(200.0, 233.0, 0.2, 20, FS).unwrap();
    let padded = bare.clone().padded(0.256, 0.1);
    assert_eq!(padded.samples.len(), 3200 + 4096 + 1600);
    assert_eq!(&padded.samples[4096..7296], &bare.samples[..]);
    assert_eq!(padded.duration_s(), 0.2);
    let (m0, m1) = (bare.direct_mask(&cfg, &ChirpRates::AutoZero), padded.direct_mask(&cfg, &ChirpRates::AutoZero));
    // 0.256 s is exactly 32 hops.
    for d in 0..m0.len() {
        assert_eq!(m0[d], m1[d + 32]);
    }
    assert!(m1[..32].iter().all(|r| r.iter().all(|&b| !b)));
    assert!((padded.active_time(&cfg, 40).unwrap() - bare.active_time(&cfg, 8).unwrap()).abs() < 1e-12);
}

#[test]
fn stationary_stimulus_has_constant_mask() {
    let cfg = FrameConfig::stft_long(FS);
    let tone = gen_harmonic_chirp(200.0, 200.0, 0.5, 10, FS).unwrap();
    let mask = tone.direct_mask(&cfg, &ChirpRates::AutoZero);
    let rows: Vec<&Vec<bool>> = mask.iter().filter(|r| r.iter().any(|&b| b)).collect();
    assert!(rows.len() > 10);
    assert!(rows.windows(2).all(|w| w[0] == w[1]));
    let per_harmonic = 2 * main_lobe_bins(&cfg) as usize + 1;
    assert_eq!(rows[0].iter().filter(|&&b| b).count(), 10 * per_harmonic);
}

#[test]
fn matched_rate_collapses_the_mask() {
    let cfg = FrameConfig::stft_long(FS);
    let chirp = gen_harmonic_chirp(200.0, 233.0, 0.5, 20, FS).unwrap();
    let n_frames = cfg.n_frames(chirp.samples.len());
    let truth: Vec<f64> =
        (0..n_frames).map(|d| chirp.active_time(&cfg, d).map_or(0.0, |t| chirp.chirp_rate_at(t))).collect();
    assert_eq!(truth, chirp.frame_rates(&cfg));
    let stft = chirp.direct_mask(&cfg, &ChirpRates::AutoZero);
    let matched = chirp.direct_mask(&cfg, &ChirpRates::PerFrame(truth));
    let count = |row: &Vec<bool>| row.iter().filter(|&&b| b).count();
    // Frame 31 sits in the middle, with the window wholly inside the chirp.
    assert!(chirp.active_time(&cfg, 31).is_some());
    let per_harmonic = 2 * main_lobe_bins(&cfg) as usize + 2;
    assert!(count(&matched[31]) <= 20 * per_harmonic, "{}", count(&matched[31]));
    assert!(count(&stft[31]) > 3 * count(&matched[31]));
    for (a, b) in stft.iter().zip(&matched) {
        assert_eq!(a.iter().any(|&x| x), b.iter().any(|&x| x));
    }
}

#[test]
fn mvc_examples() {
    let r = mvc_combine(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(r.weight, 1.0);
    assert!(r.combined.iter().all(|&v| v == 0.0));
    let r = mvc_combine(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.weight, 0.5);
    // d/dc sum((1-c) a + c b)^2 = 0 at c = -sum a (b-a) / sum (b-a)^2 = -1.
    let r = mvc_combine(&[1.0, -1.0], &[2.0, -2.0]).unwrap();
    assert_eq!(r.weight, 0.0);
    let r = mvc_combine(&[1.0, 1.0], &[-1.0, -0.5]).unwrap();
    assert!((r.weight - 3.5 / 6.25).abs() < 1e-15);
    assert!(mvc_combine(&[1.0], &[2.0]).is_err());
    assert!(mvc_combine(&[1.0, 2.0], &[2.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mvc_weight_minimizes_the_energy(a in prop::collection::vec(-5.0f64..5.0, 2..8), shift in -3.0f64..3.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.3 + shift + i as f64 * 0.1).collect();
        let r = mvc_combine(&a, &b).unwrap();
        let energy = |c: f64| a.iter().zip(&b).map(|(x, y)| ((1.0 - c) * x + c * y).powi(2)).sum::<f64>();
        for k in 0..=100 {
            let c = k as f64 / 100.0;
            prop_assert!(energy(r.weight) <= energy(c) + 1e-9);
        }
    }

    #[test]
    fn identical_inputs_score_perfectly(seed in 0u64..100) {
        let x = white(3000, seed);
        prop_assert_eq!(cepstral_distance(&x, &x, FS).unwrap().mean, 0.0);
        prop_assert_eq!(llr(&x, &x, FS).unwrap().mean, 0.0);
        prop_assert_eq!(fwsegsnr(&x, &x, FS).unwrap().mean, 35.0);
    }

    #[test]
    fn local_snr_is_scale_invariant(seed in 0u64..100, scale in 1e-3f64..1e3) {
        let (s, r, v) = (white(1500, seed), white(1500, seed + 1), white(1500, seed + 2));
        let sc = |x: &[f64]| x.iter().map(|a| a * scale).collect::<Vec<_>>();
        let (ss, rs, vs) = (series(&s), series(&r), series(&v));
        let base = local_snr_map(&ss, &rs, &vs, full_mask(&ss, false)).unwrap();
        let scaled = local_snr_map(&series(&sc(&s)), &series(&sc(&r)), &series(&sc(&v)), full_mask(&ss, false)).unwrap();
        for (a, b) in base.snr.iter().flatten().zip(scaled.snr.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }
}

#[test]
fn histogram_examples() {
    let h = histogram(&[-50.0, -1.0, 0.0, 0.5, 4.9, 99.0, f64::NAN], -10.0, 10.0, 5.0).unwrap();
    assert_eq!(h, vec![(-7.5, 1), (-2.5, 1), (2.5, 3), (7.5, 1)]);
    assert!(histogram(&[1.0], 1.0, 1.0, 1.0).is_err());
    assert!(histogram(&[1.0], 0.0, 1.0, 0.0).is_err());
}

#[test]
fn signal_free_bins_exclude_both_masks_and_inactive_frames() {
    let map = LocalSnrMap {
        snr: vec![vec![1.0, 10.0, 100.0], vec![1.0, 1.0, 1.0]],
        direct_mask: vec![vec![true, false, false], vec![false, false, false]],
    };
    let other = vec![vec![false, true, false], vec![false, false, false]];
    assert_eq!(map.signal_free_values_db(&other), vec![20.0]);
}
