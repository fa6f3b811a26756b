//! Mono PCM clips: WAV I/O, band-limited rate conversion and speed change.

use std::fs;
use std::io::{self, Cursor};
use std::path::Path;

use thiserror::Error;

/// Rate every pipeline stage works at unless told otherwise.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const MAX_SAMPLE_RATE: u32 = 192_000;

/// Accepted range for `speed_change`.
pub const SPEED_RATIO_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("invalid sample rate {0} Hz")]
    InvalidRate(f64),
    #[error("speed ratio {0} outside [0.5, 2.0]")]
    InvalidRatio(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A mono waveform. Samples are nominally in [-1, 1]; values outside that
/// range are tolerated in memory and clamped when written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        let clip = Self { samples, sample_rate };
        clip.validate()?;
        Ok(clip)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if !valid_rate(self.sample_rate) {
            return Err(AudioError::InvalidRate(self.sample_rate as f64));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn valid_rate(rate: u32) -> bool {
    (MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&rate)
}

/// Float sample to 16-bit PCM: scale by 32768, round half away from zero,
/// clamp to the representable range.
pub fn quantize(sample: f32) -> i16 {
    let v = (f64::from(sample) * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize(sample: i16) -> f32 {
    f32::from(sample) / 32768.0
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

/// Encodes a clip as a 16-bit mono RIFF/WAVE byte stream.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, AudioError> {
    clip.validate()?;
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * clip.len()));
    {
        let mut writer =
            hound::WavWriter::new(&mut buf, wav_spec(clip.sample_rate)).map_err(map_hound)?;
        let mut pcm = writer.get_i16_writer(clip.len() as u32);
        for &s in &clip.samples {
            pcm.write_sample(quantize(s));
        }
        pcm.flush().map_err(map_hound)?;
        writer.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    // In-memory reads only fail on I/O when the stream ends early.
    let truncated = |e: hound::Error| match e {
        hound::Error::IoError(e) => AudioError::CorruptHeader(e.to_string()),
        other => map_hound(other),
    };
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(truncated)?;
    read_from(reader).map_err(|e| match e {
        AudioError::Io(e) => AudioError::CorruptHeader(e.to_string()),
        other => other,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => AudioError::NotFound(path.display().to_string()),
        _ => AudioError::Io(e),
    })?;
    decode_wav(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let bytes = encode_wav(clip)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn read_from<R: io::Read>(mut reader: hound::WavReader<R>) -> Result<AudioClip, AudioError> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}-bit {:?} samples, expected 16-bit integer PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if !valid_rate(spec.sample_rate) {
        return Err(AudioError::InvalidRate(spec.sample_rate as f64));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(dequantize))
        .collect::<Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Ok(AudioClip { samples, sample_rate: spec.sample_rate })
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            AudioError::CorruptHeader("unexpected end of file".into())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(msg) => AudioError::CorruptHeader(msg.into()),
        hound::Error::Unsupported => {
            AudioError::UnsupportedFormat("compressed or unknown WAVE encoding".into())
        }
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedFormat("sample format does not match 16-bit PCM".into())
        }
        hound::Error::UnfinishedSample => AudioError::CorruptHeader("truncated sample data".into()),
    }
}

/// Band-limited conversion to `target_rate`. The output has
/// `round(len * target / source)` samples and the same content pitch.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if !valid_rate(target_rate) {
        return Err(AudioError::InvalidRate(target_rate as f64));
    }
    clip.validate()?;
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    Ok(AudioClip {
        samples: SincResampler::new(ratio).process(&clip.samples, out_len),
        sample_rate: target_rate,
    })
}

/// Playback-rate change: `ratio` 1.05 plays 5% faster and 5% higher. The
/// clip is resampled to `rate / ratio` and the original rate kept in the
/// header.
pub fn speed_change(clip: &AudioClip, ratio: f64) -> Result<AudioClip, AudioError> {
    if !ratio.is_finite() || ratio < SPEED_RATIO_RANGE.0 || ratio > SPEED_RATIO_RANGE.1 {
        return Err(AudioError::InvalidRatio(ratio));
    }
    clip.validate()?;
    if ratio == 1.0 {
        return Ok(clip.clone());
    }
    let out_len = (clip.len() as f64 / ratio).round() as usize;
    Ok(AudioClip {
        samples: SincResampler::new(1.0 / ratio).process(&clip.samples, out_len),
        sample_rate: clip.sample_rate,
    })
}

/// Kaiser-windowed sinc interpolator with a tabulated kernel.
///
/// The kernel spans 32 taps at the lower of the two rates and cuts off at
/// 0.95 of that rate's Nyquist frequency. Fractional positions are served
/// from a table of `PHASES` entries per input sample with linear
/// interpolation between neighbouring phases.
pub struct SincResampler {
    /// Input samples advanced per output sample.
    step: f64,
    /// Kernel half-width in input samples.
    half_width: f64,
    table: Vec<f64>,
}

impl SincResampler {
    const TAPS_PER_PHASE: f64 = 32.0;
    const PHASES: usize = 512;
    const CUTOFF: f64 = 0.95;
    const KAISER_BETA: f64 = 8.6;

    /// `ratio` is output rate over input rate.
    pub fn new(ratio: f64) -> Self {
        assert!(ratio > 0.0 && ratio.is_finite());
        let scale = ratio.min(1.0);
        let half_width = Self::TAPS_PER_PHASE / 2.0 / scale;
        // cycles per input sample
        let fc = 0.5 * Self::CUTOFF * scale;
        let n = (half_width * Self::PHASES as f64).ceil() as usize + 2;
        let i0_beta = bessel_i0(Self::KAISER_BETA);
        let table = (0..n)
            .map(|j| {
                let tau = j as f64 / Self::PHASES as f64;
                let u = tau / half_width;
                if u >= 1.0 {
                    return 0.0;
                }
                let window = bessel_i0(Self::KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta;
                2.0 * fc * sinc(2.0 * fc * tau) * window
            })
            .collect();
        Self { step: 1.0 / ratio, half_width, table }
    }

    fn kernel(&self, tau: f64) -> f64 {
        let pos = tau.abs() * Self::PHASES as f64;
        let j = pos.floor() as usize;
        if j + 1 >= self.table.len() {
            return 0.0;
        }
        let frac = pos - j as f64;
        self.table[j] + (self.table[j + 1] - self.table[j]) * frac
    }

    pub fn process(&self, input: &[f32], out_len: usize) -> Vec<f32> {
        let n_in = input.len() as isize;
        (0..out_len)
            .map(|n| {
                let center = n as f64 * self.step;
                let first = (center - self.half_width).floor() as isize + 1;
                let last = (center + self.half_width).floor() as isize;
                let mut acc = 0.0;
                let mut norm = 0.0;
                for i in first..=last {
                    let h = self.kernel(center - i as f64);
                    norm += h;
                    if (0..n_in).contains(&i) {
                        acc += h * f64::from(input[i as usize]);
                    }
                }
                if norm.abs() > 1e-12 {
                    (acc / norm) as f32
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}
