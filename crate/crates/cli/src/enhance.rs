use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use fanchirp_core::{
    enhance_utterance, read_wav, write_wav_with, ArrayGeometry, MultichannelSignal, PipelineConfig, TfMode,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{self, parse_mode, Encoding};
use crate::error::{usage, CliError, CliResult};
use crate::manifest::{RunManifest, Status, UtteranceRecord};

/// Dereverberate and denoise WAV files.
#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Input WAV files (1, 2 or more channels).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output WAV file, or a directory when several inputs are given.
    #[arg(short, long)]
    pub out: PathBuf,
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Time-frequency domain: stft32, stft128, stfcht or stfcht-iter.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TfMode>,
    /// Reverberation time in seconds.
    #[arg(long)]
    pub t60: Option<f64>,
    /// Weight of the first pass in iterative mode.
    #[arg(long = "iter-a")]
    pub iter_a: Option<f64>,
    /// Re-estimate chirp rates in the second pass instead of reusing them.
    #[arg(long)]
    pub recompute_chirp: bool,
    /// Initial reverberant-to-direct energy ratio.
    #[arg(long)]
    pub drr_inverse: Option<f64>,
    /// Microphone positions, one "x y z" line per channel, in metres.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Manifest path; defaults to the output path with the extension
    /// .manifest.json, or manifest.json inside an output directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    pub encoding: Encoding,
    /// Utterances processed in parallel.
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
}

impl EnhanceArgs {
    fn pipeline_config(&self) -> CliResult<PipelineConfig> {
        let mut cfg = config::load(self.config.as_deref())?;
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(t60) = self.t60 {
            cfg.t60 = Some(t60);
        }
        if let Some(a) = self.iter_a {
            cfg.iteration_weight = a;
        }
        if self.recompute_chirp {
            cfg.recompute_chirp = true;
        }
        if let Some(r) = self.drr_inverse {
            cfg.drr_inverse = r;
        }
        if let Some(path) = &self.geometry {
            let g = ArrayGeometry::from_file(path)
                .map_err(|e| usage(format!("bad geometry file {}: {e}", path.display())))?;
            cfg.geometry = Some(g);
        }
        if cfg.t60.is_none() {
            return Err(usage("--t60 is required (or set \"t60\" in the config file)"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output directory, if outputs are named after their inputs.
fn output_dir(args: &EnhanceArgs) -> Option<&Path> {
    (args.inputs.len() > 1 || args.out.is_dir()).then_some(args.out.as_path())
}

fn output_path(args: &EnhanceArgs, input: &Path) -> PathBuf {
    match output_dir(args) {
        Some(dir) => dir.join(input.file_name().unwrap_or(input.as_os_str())),
        None => args.out.clone(),
    }
}

fn manifest_path(args: &EnhanceArgs) -> PathBuf {
    if let Some(p) = &args.manifest {
        return p.clone();
    }
    match output_dir(args) {
        Some(dir) => dir.join("manifest.json"),
        None => args.out.with_extension("manifest.json"),
    }
}

fn process(input: &Path, output: &Path, cfg: &PipelineConfig, args: &EnhanceArgs) -> UtteranceRecord {
    let start = Instant::now();
    let run = || -> anyhow::Result<UtteranceRecord> {
        let signal = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
        let start = Instant::now();
        let enhanced = enhance_utterance(&signal, cfg).with_context(|| format!("enhancing {}", input.display()))?;
        let out = MultichannelSignal::mono(enhanced.samples, enhanced.sample_rate)?;
        let report = write_wav_with(&out, output, args.encoding.into())
            .with_context(|| format!("writing {}", output.display()))?;
        let processing_s = start.elapsed().as_secs_f64();
        let duration_s = signal.duration_s();
        Ok(UtteranceRecord {
            input: input.to_path_buf(),
            output: Some(output.to_path_buf()),
            status: Status::Ok,
            error: None,
            n_channels: Some(signal.n_channels()),
            sample_rate: Some(signal.sample_rate()),
            duration_s,
            processing_s,
            rtf: (duration_s > 0.0).then(|| processing_s / duration_s),
            channel_path: Some(enhanced.path),
            voiced_frames: Some(enhanced.passes.iter().map(|p| p.voiced_frames).max().unwrap_or(0)),
            clipped_samples: report.clipped,
        })
    };
    match run() {
        Ok(rec) => {
            info!("{} -> {} (RTF {:.2})", input.display(), output.display(), rec.rtf.unwrap_or(0.0));
            rec
        }
        Err(e) => {
            warn!("{}: {e:#}", input.display());
            UtteranceRecord::failed(input, format!("{e:#}"), start.elapsed().as_secs_f64())
        }
    }
}

pub fn run(args: EnhanceArgs) -> CliResult<()> {
    let cfg = args.pipeline_config()?;
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if args.inputs.len() > 1 && !args.out.is_dir() {
        return Err(usage(format!("--out {} must be an existing directory for several inputs", args.out.display())));
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build().map_err(|e| CliError::Processing(e.into()))?;
    let start = Instant::now();
    let records: Vec<UtteranceRecord> = pool.install(|| {
        args.inputs.par_iter().map(|input| process(input, &output_path(&args, input), &cfg, &args)).collect()
    });
    let manifest = RunManifest::new(&cfg, args.jobs, &args.inputs, records, start.elapsed().as_secs_f64());
    let path = manifest_path(&args);
    manifest.write(&path)?;
    if manifest.failures > 0 {
        return Err(CliError::Processing(anyhow::anyhow!(
            "{} of {} inputs failed; see {}",
            manifest.failures,
            args.inputs.len(),
            path.display()
        )));
    }
    if let Some(rtf) = manifest.rtf {
        println!("enhanced {} file(s), RTF {rtf:.3}, manifest {}", args.inputs.len(), path.display());
    }
    Ok(())
}
