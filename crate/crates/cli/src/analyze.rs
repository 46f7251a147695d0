use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use fanchirp_core::glogs::GlogsEstimator;
use fanchirp_core::metrics::{gen_harmonic_chirp, histogram, local_snr_map, reverberant_mixture, LocalSnrMap};
use fanchirp_core::{read_wav, ChirpRates, FanChirpTransform, ReverbParams, TfMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, parse_mode};
use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateSource {
    /// The stimuli's true chirp rate at each frame centre.
    Known,
    /// GLogS estimates from the noisy reverberant mixture.
    Estimated,
}

/// Chirp-rate estimates of a recording, or the two-chirp local-SNR study.
#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("task").required(true).args(["glogs", "local_snr"])))]
pub struct AnalyzeArgs {
    /// Write per-frame chirp rate, fundamental and score of this WAV file.
    #[arg(long, value_name = "WAV")]
    pub glogs: Option<PathBuf>,
    /// Compare local SNRs of the STFT and fan-chirp transform on two
    /// simulated harmonic chirps.
    #[arg(long, alias = "fig3")]
    pub local_snr: bool,
    /// Directory for the CSV outputs.
    #[arg(short, long, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON pipeline configuration (its estimator settings are used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frame configuration for the estimates: stfcht or stfcht-iter.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TfMode>,
    /// Reverberation time of the simulated room.
    #[arg(long, default_value_t = 0.5)]
    pub t60: f64,
    /// Noise level of the simulation, in dB below the reverberant signal.
    #[arg(long, default_value_t = 20.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chirp rates of the fan-chirp frames in the local-SNR study.
    #[arg(long, value_enum, default_value_t = RateSource::Known)]
    pub rates: RateSource,
    /// Noise and reverberation draws per stimulus.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Histogram bin width in dB.
    #[arg(long, default_value_t = 2.0)]
    pub bin_width: f64,
}

fn write_csv(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn glogs_csv(args: &AnalyzeArgs, input: &Path) -> CliResult<()> {
    let cfg = config::load(args.config.as_deref())?;
    let mode = args.mode.unwrap_or(cfg.mode);
    if !mode.uses_chirp() {
        return Err(usage(format!("mode {} has no chirp-rate estimates", mode.label())));
    }
    let size = std::fs::metadata(input).map_err(|e| usage(format!("cannot open {}: {e}", input.display())))?.len();
    if size == 0 {
        return Err(usage(format!("{} is empty", input.display())));
    }
    let signal = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    if signal.n_samples() == 0 {
        return Err(usage(format!("{} contains no samples", input.display())));
    }
    let fc = mode.frame_config(signal.sample_rate());
    let est = GlogsEstimator::new(cfg.glogs.clone(), fc)?.estimate_utterance(signal.channel(0))?;
    let mut text = String::from("frame,time_s,alpha,f0_hz,score,voiced\n");
    for e in &est.estimates {
        let t = fc.frame_center_s(e.frame_index);
        writeln!(text, "{},{t:.6},{},{},{},{}", e.frame_index, e.alpha, e.f0, e.score, u8::from(e.voiced)).unwrap();
    }
    let stem = input.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let path = args.out_dir.join(format!("{stem}_glogs.csv"));
    write_csv(&path, &text)?;
    let voiced = est.estimates.iter().filter(|e| e.voiced).count();
    println!("{} frames ({voiced} voiced) -> {}", est.estimates.len(), path.display());
    Ok(())
}

fn matrix_csv(map: &LocalSnrMap) -> String {
    let mut text = String::new();
    for row in &map.snr {
        let line: Vec<String> = row.iter().map(|s| format!("{:.3}", 10.0 * s.max(1e-30).log10())).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    text
}

fn mask_csv(map: &LocalSnrMap) -> String {
    let mut text = String::new();
    for row in &map.direct_mask {
        let line: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    text
}

fn histogram_csv(stft: &[f64], chirp: &[f64], width: f64) -> anyhow::Result<String> {
    let (lo, hi) = (-60.0, 60.0);
    let a = histogram(stft, lo, hi, width)?;
    let b = histogram(chirp, lo, hi, width)?;
    let mut text = String::from("snr_db,stft,stfcht\n");
    for ((centre, x), (_, y)) in a.iter().zip(&b) {
        writeln!(text, "{centre},{x},{y}").unwrap();
    }
    Ok(text)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn local_snr_study(args: &AnalyzeArgs) -> CliResult<()> {
    let cfg = config::load(args.config.as_deref())?;
    let fs = 16000;
    let fc = TfMode::Stfcht.frame_config(fs);
    let tf = FanChirpTransform::new(fc)?;
    let est = GlogsEstimator::new(cfg.glogs.clone(), fc)?;
    let params = ReverbParams::new(args.t60, fs, fc.hop)?.with_model_energy_ratio(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    // [stft, stfcht] pooled over both stimuli.
    let mut direct: [Vec<f64>; 2] = Default::default();
    let mut free: [Vec<f64>; 2] = Default::default();
    for (i, (f0a, f0b)) in [(200.0, 233.0), (250.0, 200.0)].into_iter().enumerate() {
        let chirp = gen_harmonic_chirp(f0a, f0b, 0.2, 20, fs)?.padded(0.2, 0.3);
        for trial in 0..args.trials {
            let m = reverberant_mixture(&chirp.samples, &params, args.snr, &mut rng);
            let rates = [
                ChirpRates::AutoZero,
                ChirpRates::PerFrame(match args.rates {
                    RateSource::Known => chirp.frame_rates(&fc),
                    RateSource::Estimated => est.estimate_utterance(&m.observed)?.analysis_rates(),
                }),
            ];
            let mut maps = Vec::new();
            for r in &rates {
                let an = |x: &[f64]| tf.analyze(x, r);
                maps.push(local_snr_map(
                    &an(&m.direct)?,
                    &an(&m.reverberant)?,
                    &an(&m.noise)?,
                    chirp.direct_mask(&fc, r),
                )?);
            }
            for (t, name) in ["stft", "stfcht"].iter().enumerate() {
                let other = &maps[1 - t].direct_mask;
                direct[t].extend(maps[t].values_db(true));
                free[t].extend(maps[t].signal_free_values_db(other));
                if trial == 0 {
                    let base = args.out_dir.join(format!("chirp{}_{name}", i + 1));
                    write_csv(&base.with_extension("local_snr.csv"), &matrix_csv(&maps[t]))?;
                    write_csv(&base.with_extension("direct_mask.csv"), &mask_csv(&maps[t]))?;
                }
            }
        }
    }
    let hist_direct = args.out_dir.join("local_snr_hist_direct.csv");
    let hist_free = args.out_dir.join("local_snr_hist_signal_free.csv");
    write_csv(&hist_direct, &histogram_csv(&direct[0], &direct[1], args.bin_width)?)?;
    write_csv(&hist_free, &histogram_csv(&free[0], &free[1], args.bin_width)?)?;
    println!(
        "mean local SNR, direct bins:      STFT {:7.2} dB  fan-chirp {:7.2} dB",
        mean(&direct[0]),
        mean(&direct[1])
    );
    println!("mean local SNR, signal-free bins: STFT {:7.2} dB  fan-chirp {:7.2} dB", mean(&free[0]), mean(&free[1]));
    println!("histograms: {} {}", hist_direct.display(), hist_free.display());
    Ok(())
}

pub fn run(args: AnalyzeArgs) -> CliResult<()> {
    if !args.out_dir.is_dir() {
        return Err(usage(format!("output directory {} does not exist", args.out_dir.display())));
    }
    if !(args.bin_width > 0.0) {
        return Err(usage("--bin-width must be positive"));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if let Some(input) = &args.glogs {
        glogs_csv(&args, input)?;
    }
    if args.local_snr {
        local_snr_study(&args)?;
    }
    Ok(())
}
