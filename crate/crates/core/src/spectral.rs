//! STFT analysis, least-squares overlap-add synthesis and Griffin-Lim phase
//! reconstruction.
//!
//! Framing convention: the signal is reflect-padded by `frame_length / 2` on
//! the left, and on the right by at least as much, so that every input sample
//! is covered by whole frames. `istft` undoes the left padding and returns
//! `(frames - 1) * frame_shift + frame_length - 2 * (frame_length / 2)`
//! samples, which is at least the original length.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::rng;

pub const DEFAULT_GRIFFIN_LIM_ITERATIONS: usize = 60;

const SPG_MAGIC: &[u8; 4] = b"SPG1";

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("malformed spectrogram file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
}

impl StftParams {
    pub fn new(frame_length: usize, frame_shift: usize, fft_size: usize) -> Result<Self, SpectralError> {
        let p = Self { frame_length, frame_shift, fft_size };
        p.validate()?;
        Ok(p)
    }

    /// 50 ms frames, 12.5 ms shift, 2048-point FFT at 16 kHz; frame
    /// durations scale with the rate, the FFT grows to fit.
    pub fn vocoder_defaults(sample_rate: u32) -> Self {
        let frame_length = (sample_rate as usize * 50) / 1000;
        let frame_shift = (sample_rate as usize * 125) / 10_000;
        let fft_size = frame_length.next_power_of_two().max(2048);
        Self { frame_length, frame_shift, fft_size }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if self.frame_shift == 0 {
            return Err(SpectralError::InvalidParams("frame_shift must be positive".into()));
        }
        if self.frame_shift > self.frame_length {
            return Err(SpectralError::InvalidParams(format!(
                "frame_shift {} exceeds frame_length {}",
                self.frame_shift, self.frame_length
            )));
        }
        if self.frame_length > self.fft_size {
            return Err(SpectralError::InvalidParams(format!(
                "frame_length {} exceeds fft_size {}",
                self.frame_length, self.fft_size
            )));
        }
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(SpectralError::InvalidParams("fft_size must be even and >= 2".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    fn pad(&self) -> usize {
        self.frame_length / 2
    }

    /// Samples spanned by `frames` unpadded frames.
    fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.frame_shift + self.frame_length
        }
    }
}

/// Complex STFT, `frames × bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub params: StftParams,
    pub sample_rate: u32,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        let b = self.bins();
        &self.data[i * b..(i + 1) * b]
    }

    pub fn magnitudes(&self) -> Spectrogram {
        Spectrogram {
            params: self.params,
            sample_rate: self.sample_rate,
            frames: self.frames,
            magnitudes: self.data.iter().map(|c| c.norm() as f32).collect(),
        }
    }
}

/// Non-negative magnitude spectrogram, `frames × bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub params: StftParams,
    pub sample_rate: u32,
    pub frames: usize,
    pub magnitudes: Vec<f32>,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        self.params.validate()?;
        if self.magnitudes.len() != self.frames * self.bins() {
            return Err(SpectralError::InvalidParams(format!(
                "{} magnitudes for {} frames of {} bins",
                self.magnitudes.len(),
                self.frames,
                self.bins()
            )));
        }
        if self.magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(SpectralError::InvalidParams("magnitudes must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Shared FFT plans and window for one parameter set.
pub(crate) struct Framer {
    params: StftParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Framer {
    pub(crate) fn new(params: StftParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params,
            window: hann(params.frame_length),
            forward: planner.plan_fft_forward(params.fft_size),
            inverse: planner.plan_fft_inverse(params.fft_size),
        }
    }

    fn frame_count(&self, len: usize) -> usize {
        let p = &self.params;
        if len < p.frame_length {
            return 0;
        }
        1 + (len - p.frame_length) / p.frame_shift
    }

    /// STFT of an already padded signal: frames start at multiples of the
    /// shift, no padding is added.
    pub(crate) fn analyze(&self, signal: &[f64]) -> (usize, Vec<Complex64>) {
        let p = &self.params;
        let frames = self.frame_count(signal.len());
        let bins = p.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::default(); p.fft_size];
        for f in 0..frames {
            let start = f * p.frame_shift;
            buf.fill(Complex64::default());
            for (n, (x, w)) in signal[start..start + p.frame_length].iter().zip(&self.window).enumerate() {
                buf[n].re = x * w;
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        (frames, out)
    }

    /// Windowed overlap-add of the inverse transforms together with the
    /// summed squared window at each sample.
    fn overlap_add(&self, frames: usize, spectrum: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let n = p.fft_size;
        let bins = p.bins();
        let mut out = vec![0.0; p.span(frames)];
        let mut norm = vec![0.0; out.len()];
        let mut buf = vec![Complex64::default(); n];
        for f in 0..frames {
            let row = &spectrum[f * bins..(f + 1) * bins];
            buf[..bins].copy_from_slice(row);
            for k in 1..n / 2 {
                buf[n - k] = row[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = f * p.frame_shift;
            for (i, w) in self.window.iter().enumerate() {
                out[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        (out, norm)
    }

    /// Least-squares inverse of `analyze`: each frame is inverse transformed,
    /// re-windowed and overlap-added, then divided by the summed squared
    /// window. Samples no window covers are set to zero.
    pub(crate) fn synthesize(&self, frames: usize, spectrum: &[Complex64]) -> Vec<f64> {
        let (out, norm) = self.overlap_add(frames, spectrum);
        out.iter().zip(&norm).map(|(o, w)| if *w > 1e-10 { o / w } else { 0.0 }).collect()
    }

    /// Least-squares inverse of padding followed by `analyze`: like
    /// `synthesize`, but the padded margins are folded back onto the samples
    /// they mirror, so the result is the clip whose STFT is closest to
    /// `spectrum`.
    fn synthesize_clip(&self, frames: usize, spectrum: &[Complex64]) -> Vec<f64> {
        let (out, norm) = self.overlap_add(frames, spectrum);
        let pad = self.params.pad();
        if out.len() <= 2 * pad {
            return Vec::new();
        }
        let len = out.len() - 2 * pad;
        let (mut num, mut den) = (vec![0.0; len], vec![0.0; len]);
        for (i, (o, w)) in out.iter().zip(&norm).enumerate() {
            let j = reflect_index(i as isize - pad as isize, len);
            num[j] += o;
            den[j] += w;
        }
        num.iter().zip(&den).map(|(o, w)| if *w > 1e-10 { o / w } else { 0.0 }).collect()
    }

    fn padded<T: Copy + Into<f64>>(&self, samples: &[T]) -> Vec<f64> {
        let p = &self.params;
        let pad = p.pad() as isize;
        let base = samples.len() + 2 * p.pad();
        let frames = if base <= p.frame_length {
            1
        } else {
            1 + (base - p.frame_length).div_ceil(p.frame_shift)
        };
        (0..p.span(frames) as isize)
            .map(|i| samples[reflect_index(i - pad, samples.len())].into())
            .collect()
    }

    fn crop(&self, raw: Vec<f64>) -> Vec<f64> {
        let pad = self.params.pad();
        if raw.len() <= 2 * pad {
            return Vec::new();
        }
        raw[pad..raw.len() - pad].to_vec()
    }
}

/// Hann-windowed STFT of `clip`.
pub fn stft(clip: &AudioClip, params: StftParams) -> Result<ComplexSpectrogram, SpectralError> {
    params.validate()?;
    if clip.is_empty() {
        return Err(SpectralError::InvalidParams("empty clip".into()));
    }
    let framer = Framer::new(params);
    let (frames, data) = framer.analyze(&framer.padded(&clip.samples));
    Ok(ComplexSpectrogram { params, sample_rate: clip.sample_rate, frames, data })
}

/// Inverse of [`stft`]; interior samples are reconstructed exactly up to
/// rounding.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip, SpectralError> {
    spec.params.validate()?;
    if spec.data.len() != spec.frames * spec.bins() {
        return Err(SpectralError::InvalidParams("spectrum size does not match frames × bins".into()));
    }
    let framer = Framer::new(spec.params);
    let raw = framer.synthesize(spec.frames, &spec.data);
    Ok(AudioClip {
        samples: framer.crop(raw).into_iter().map(|s| s as f32).collect(),
        sample_rate: spec.sample_rate,
    })
}

pub fn magnitude_spectrogram(clip: &AudioClip, params: StftParams) -> Result<Spectrogram, SpectralError> {
    Ok(stft(clip, params)?.magnitudes())
}

/// Frobenius norm of the two-sided spectrum a half spectrum stands for:
/// interior bins count twice, DC and Nyquist once.
fn two_sided_norm_sq(values: impl Iterator<Item = f64>, bins: usize) -> f64 {
    values
        .enumerate()
        .map(|(i, v)| {
            let k = i % bins;
            let weight = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            weight * v * v
        })
        .sum()
}

/// Relative consistency error `‖M − |S|‖ / ‖M‖` between target magnitudes
/// and the magnitudes of an STFT with the same shape.
pub fn consistency_error(target: &[f64], spectrum: &[Complex64], bins: usize) -> f64 {
    let denom = two_sided_norm_sq(target.iter().copied(), bins);
    if denom == 0.0 {
        return 0.0;
    }
    let diff = two_sided_norm_sq(target.iter().zip(spectrum).map(|(m, s)| m - s.norm()), bins);
    (diff / denom).sqrt()
}

/// Result of a Griffin-Lim run with the per-iteration consistency errors.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub clip: AudioClip,
    /// `errors[k]` is the consistency error of the signal produced by
    /// iteration `k + 1`, before peak normalization.
    pub errors: Vec<f64>,
    /// Factor applied for peak normalization (1 for silence).
    pub gain: f64,
}

pub fn griffin_lim(spec: &Spectrogram, iterations: usize, seed: u64) -> Result<AudioClip, SpectralError> {
    Ok(griffin_lim_traced(spec, iterations, seed)?.clip)
}

/// Griffin-Lim phase reconstruction.
///
/// Starts from uniform random phase drawn from the seeded stream and
/// alternates least-squares resynthesis with re-imposing the target
/// magnitudes. The returned clip is scaled to a peak of 0.99 (silent input
/// stays silent).
pub fn griffin_lim_traced(spec: &Spectrogram, iterations: usize, seed: u64) -> Result<Reconstruction, SpectralError> {
    spec.validate()?;
    if iterations == 0 {
        return Err(SpectralError::InvalidParams("iterations must be >= 1".into()));
    }
    let framer = Framer::new(spec.params);
    if spec.params.span(spec.frames) <= 2 * spec.params.pad() {
        return Err(SpectralError::InvalidParams(format!("{} frame(s) cover no unpadded samples", spec.frames)));
    }
    let bins = spec.bins();
    let target: Vec<f64> = spec.magnitudes.iter().map(|&m| f64::from(m)).collect();

    let mut rng = rng::stream(seed, "griffin-lim/phase");
    let mut phase: Vec<Complex64> = (0..target.len())
        .map(|_| Complex64::from_polar(1.0, rng.random_range(-PI..PI)))
        .collect();

    let mut errors = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    let mut estimate: Vec<Complex64> = vec![Complex64::default(); target.len()];
    for _ in 0..iterations {
        for ((e, m), p) in estimate.iter_mut().zip(&target).zip(&phase) {
            *e = p * *m;
        }
        signal = framer.synthesize_clip(spec.frames, &estimate);
        let (_, analysis) = framer.analyze(&framer.padded(&signal));
        errors.push(consistency_error(&target, &analysis, bins));
        for (p, s) in phase.iter_mut().zip(&analysis) {
            let n = s.norm();
            if n > 0.0 {
                *p = s / n;
            }
        }
    }

    let mut samples: Vec<f32> = signal.into_iter().map(|s| s as f32).collect();
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    let gain = if peak > 0.0 { 0.99 / peak } else { 1.0 };
    samples.iter_mut().for_each(|s| *s *= gain);
    Ok(Reconstruction { clip: AudioClip { samples, sample_rate: spec.sample_rate }, errors, gain: f64::from(gain) })
}

/// Writes the little-endian `SPG1` container.
pub fn write_spectrogram(spec: &Spectrogram, mut out: impl Write) -> Result<(), SpectralError> {
    spec.validate()?;
    out.write_all(SPG_MAGIC)?;
    let header = [
        spec.frames,
        spec.bins(),
        spec.params.fft_size,
        spec.params.frame_shift,
        spec.params.frame_length,
        spec.sample_rate as usize,
    ];
    for v in header {
        let v = u32::try_from(v).map_err(|_| SpectralError::Format(format!("{v} does not fit u32")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for m in &spec.magnitudes {
        out.write_all(&m.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_spectrogram(mut input: impl Read) -> Result<Spectrogram, SpectralError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || &bytes[..4] != SPG_MAGIC {
        return Err(SpectralError::Format("missing SPG1 header".into()));
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (frames, bins, fft_size, frame_shift, frame_length, sample_rate) =
        (field(0), field(1), field(2), field(3), field(4), field(5));
    let params = StftParams::new(frame_length, frame_shift, fft_size)?;
    if bins != params.bins() {
        return Err(SpectralError::Format(format!("{bins} bins inconsistent with fft_size {fft_size}")));
    }
    let body = &bytes[28..];
    let expected = frames
        .checked_mul(bins)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SpectralError::Format("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(SpectralError::Format(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let magnitudes = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let spec = Spectrogram { params, sample_rate: sample_rate as u32, frames, magnitudes };
    spec.validate()?;
    Ok(spec)
}

pub fn save_spectrogram(spec: &Spectrogram, path: impl AsRef<Path>) -> Result<(), SpectralError> {
    let mut buf = Vec::new();
    write_spectrogram(spec, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<Spectrogram, SpectralError> {
    read_spectrogram(fs::File::open(path)?)
}
