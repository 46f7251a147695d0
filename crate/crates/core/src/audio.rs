//! Multichannel audio container and WAV file I/O.
//!
//! Only RIFF/WAVE with 16-bit PCM or 32-bit IEEE float samples is supported.
//! Samples are held as `f64` regardless of the on-disk precision.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

/// Sampled audio, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelSignal {
    /// Builds a signal after checking that all channels have equal length,
    /// the sample rate is positive and every sample is finite.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidArgument("signal has no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidArgument("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("signal contains non-finite samples".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Outcome of a write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteReport {
    /// Number of samples that fell outside [-1, 1] and were clipped.
    pub clipped: usize,
}

/// Reads a PCM-16 or float-32 WAV file. PCM samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelSignal> {
    let reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Format("zero channels in header".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::Format(format!(
                "{bits}-bit {format:?} samples are not supported (PCM-16 or float-32 only)"
            )))
        }
    };
    if !interleaved.len().is_multiple_of(n_channels) {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "data chunk ends mid-frame")));
    }

    let n_samples = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(n_samples); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    MultichannelSignal::new(channels, spec.sample_rate)
}

/// Writes a float-32 WAV file.
pub fn write_wav(signal: &MultichannelSignal, path: impl AsRef<Path>) -> Result<WriteReport> {
    write_wav_with(signal, path, SampleEncoding::Float32)
}

/// Writes a WAV file with the chosen encoding. Samples outside [-1, 1] are
/// clipped and a warning is logged.
pub fn write_wav_with(
    signal: &MultichannelSignal,
    path: impl AsRef<Path>,
    encoding: SampleEncoding,
) -> Result<WriteReport> {
    if signal.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty signal".into()));
    }
    let (bits_per_sample, sample_format) = match encoding {
        SampleEncoding::Pcm16 => (16, SampleFormat::Int),
        SampleEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: signal.n_channels() as u16,
        sample_rate: signal.sample_rate(),
        bits_per_sample,
        sample_format,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    let mut clipped = 0usize;
    for n in 0..signal.n_samples() {
        for ch in signal.channels() {
            let mut v = ch[n];
            if !(-1.0..=1.0).contains(&v) {
                clipped += 1;
                v = v.clamp(-1.0, 1.0);
            }
            match encoding {
                SampleEncoding::Pcm16 => {
                    let q = (v * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                SampleEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    if clipped > 0 {
        warn!("{}: clipped {clipped} samples outside [-1, 1]", path.as_ref().display());
    }
    Ok(WriteReport { clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn mono_pcm16_header_and_scaling() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        for _ in 1..16000 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();

        let sig = read_wav(&path).unwrap();
        assert_eq!(sig.n_channels(), 1);
        assert_eq!(sig.n_samples(), 16000);
        assert_eq!(sig.sample_rate(), 16000);
        assert!((sig.channel(0)[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn eight_channels_keep_file_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("eight.wav");
        let channels: Vec<Vec<f64>> = (0..8).map(|c| vec![c as f64 / 10.0; 32]).collect();
        let sig = MultichannelSignal::new(channels, 16000).unwrap();
        write_wav(&sig, &path).unwrap();
        let back = read_wav(&path).unwrap();
        for c in 0..8 {
            assert_eq!(back.channel(c)[5], (c as f64 / 10.0) as f32 as f64);
        }
    }

    #[test]
    fn clipping_on_pcm16() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let sig = MultichannelSignal::mono(vec![1.5, -0.25], 8000).unwrap();
        let report = write_wav_with(&sig, &path, SampleEncoding::Pcm16).unwrap();
        assert_eq!(report.clipped, 1);
        let back = read_wav(&path).unwrap();
        assert!((back.channel(0)[0] - 1.0).abs() <= 1.0 / 32768.0);
        assert_eq!(back.channel(0)[1], -0.25);
    }

    #[test]
    fn unsupported_encoding_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("i24.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 24, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let sig = MultichannelSignal::mono(vec![0.1; 1000], 16000).unwrap();
        write_wav_with(&sig, &path, SampleEncoding::Pcm16).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Io(_))));
    }

    #[test]
    fn rejects_bad_signals() {
        assert!(MultichannelSignal::new(vec![vec![0.0; 3], vec![0.0; 4]], 16000).is_err());
        assert!(MultichannelSignal::mono(vec![f64::NAN], 16000).is_err());
        assert!(MultichannelSignal::mono(vec![0.0], 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn float32_round_trip_is_exact(
            data in prop::collection::vec(-1.0f32..=1.0, 1..400),
            n_channels in 1usize..4,
        ) {
            let n = data.len() / n_channels;
            prop_assume!(n > 0);
            let channels: Vec<Vec<f64>> = (0..n_channels)
                .map(|c| data[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect())
                .collect();
            let sig = MultichannelSignal::new(channels, 16000).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.wav");
            write_wav(&sig, &path).unwrap();
            prop_assert_eq!(read_wav(&path).unwrap(), sig);
        }

        #[test]
        fn pcm16_round_trip_within_one_step(data in prop::collection::vec(-1.0f64..=1.0, 1..400)) {
            let sig = MultichannelSignal::mono(data, 22050).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.wav");
            write_wav_with(&sig, &path, SampleEncoding::Pcm16).unwrap();
            let back = read_wav(&path).unwrap();
            for (a, b) in sig.channel(0).iter().zip(back.channel(0)) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
