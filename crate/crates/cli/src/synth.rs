use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use fanchirp_core::metrics::{gen_harmonic_chirp, reverberant_mixture, speech_like, white_noise_at_snr};
use fanchirp_core::spatial::simulate_plane_wave;
use fanchirp_core::{write_wav_with, ArrayGeometry, MultichannelSignal, ReverbParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Encoding;
use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Voiced and unvoiced segments with a wandering fundamental.
    Speech,
    /// Harmonic tone whose fundamental moves linearly.
    Chirp,
}

/// Synthesize test material, optionally reverberant, noisy and multichannel.
#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Kind::Speech)]
    pub kind: Kind,
    /// Output WAV file.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the direct-path signal of the first channel here.
    #[arg(long)]
    pub direct_out: Option<PathBuf>,
    /// Duration in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 200.0)]
    pub f0_start: f64,
    #[arg(long, default_value_t = 233.0)]
    pub f0_end: f64,
    #[arg(long, default_value_t = 20)]
    pub harmonics: usize,
    /// Add model reverberation with this reverberation time.
    #[arg(long)]
    pub t60: Option<f64>,
    /// Add white noise this many dB below the signal.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Microphone positions; defaults to a circle of radius 0.1 m.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Source direction in the horizontal plane, in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub azimuth_deg: f64,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    pub encoding: Encoding,
}

fn source(args: &SynthArgs, rng: &mut ChaCha8Rng) -> CliResult<Vec<f64>> {
    Ok(match args.kind {
        Kind::Speech => speech_like(args.duration, args.sample_rate, rng),
        Kind::Chirp => {
            let c = gen_harmonic_chirp(args.f0_start, args.f0_end, args.duration, args.harmonics, args.sample_rate)
                .map_err(|e| usage(e.to_string()))?;
            let peak = c.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            c.samples.iter().map(|v| 0.5 * v / peak.max(f64::MIN_POSITIVE)).collect()
        }
    })
}

fn geometry(args: &SynthArgs) -> CliResult<ArrayGeometry> {
    let g = match &args.geometry {
        Some(path) => {
            ArrayGeometry::from_file(path).map_err(|e| usage(format!("bad geometry file {}: {e}", path.display())))?
        }
        None => ArrayGeometry::uniform_circular(args.channels, 0.1).map_err(|e| usage(e.to_string()))?,
    };
    if g.n_channels() != args.channels {
        return Err(usage(format!("geometry has {} microphones but --channels is {}", g.n_channels(), args.channels)));
    }
    Ok(g)
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    if !(args.duration > 0.0) || args.sample_rate == 0 || args.channels == 0 {
        return Err(usage("duration, sample rate and channel count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let dry = source(&args, &mut rng)?;
    let arrivals = if args.channels > 1 {
        let az = args.azimuth_deg.to_radians();
        simulate_plane_wave(&dry, args.sample_rate, &geometry(&args)?, &[az.cos(), az.sin(), 0.0])?.into_channels()
    } else {
        vec![dry]
    };
    let reverb = match args.t60 {
        Some(t60) => Some(
            ReverbParams::new(t60, args.sample_rate, 128)
                .map_err(|e| usage(e.to_string()))?
                .with_model_energy_ratio(1.0),
        ),
        None => None,
    };
    let mut observed = Vec::with_capacity(arrivals.len());
    let mut direct = Vec::new();
    for (i, x) in arrivals.into_iter().enumerate() {
        let (d, mut y) = match &reverb {
            Some(p) => {
                let m = reverberant_mixture(&x, p, f64::INFINITY, &mut rng);
                let y = m.direct.iter().zip(&m.reverberant).map(|(a, b)| a + b).collect();
                (m.direct, y)
            }
            None => (x.clone(), x),
        };
        if let Some(snr) = args.snr {
            let noise = white_noise_at_snr(&y, snr, &mut rng);
            y.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        }
        if i == 0 {
            direct = d;
        }
        observed.push(y);
    }
    let peak = observed.iter().flatten().chain(&direct).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.9 {
        let g = 0.9 / peak;
        observed.iter_mut().flatten().chain(direct.iter_mut()).for_each(|v| *v *= g);
    }
    let enc = args.encoding.into();
    write_wav_with(&MultichannelSignal::new(observed, args.sample_rate)?, &args.out, enc)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.direct_out {
        write_wav_with(&MultichannelSignal::mono(direct, args.sample_rate)?, path, enc)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
