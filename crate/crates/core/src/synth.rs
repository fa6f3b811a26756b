//! Synthetic test signals and a toy multi-speaker corpus generator.
//!
//! The voices are source-filter models: a band-limited glottal pulse train
//! at a speaker-specific F0 shaped by speaker-specific formant resonators,
//! interleaved with noise bursts and short pauses. Utterance content (vowel
//! sequence, intonation, length) depends only on the utterance number, so
//! the same number gives a "parallel" prompt across speakers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::rng;

pub fn sine(freq: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> AudioClip {
    let len = (seconds * sample_rate as f64).round() as usize;
    let samples = (0..len)
        .map(|n| (amplitude * (2.0 * PI * freq * n as f64 / sample_rate as f64).sin()) as f32)
        .collect();
    AudioClip { samples, sample_rate }
}

/// Rising sawtooth with its F0 swept linearly from `f0_start` to `f0_end`.
pub fn sawtooth_glide(f0_start: f64, f0_end: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> AudioClip {
    let len = (seconds * sample_rate as f64).round() as usize;
    let mut phase = 0.0f64;
    let samples = (0..len)
        .map(|n| {
            let s = amplitude * (2.0 * phase - 1.0);
            let f = f0_start + (f0_end - f0_start) * n as f64 / len.max(1) as f64;
            phase = (phase + f / sample_rate as f64).fract();
            s as f32
        })
        .collect();
    AudioClip { samples, sample_rate }
}

pub fn sawtooth(f0: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> AudioClip {
    sawtooth_glide(f0, f0, seconds, sample_rate, amplitude)
}

/// Sine whose frequency sweeps linearly (phase-continuous).
pub fn sine_glide(f_start: f64, f_end: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> AudioClip {
    let len = (seconds * sample_rate as f64).round() as usize;
    let mut phase = 0.0f64;
    let samples = (0..len)
        .map(|n| {
            let s = amplitude * (2.0 * PI * phase).sin();
            let f = f_start + (f_end - f_start) * n as f64 / len.max(1) as f64;
            phase += f / sample_rate as f64;
            s as f32
        })
        .collect();
    AudioClip { samples, sample_rate }
}

pub fn white_noise(seconds: f64, sample_rate: u32, amplitude: f64, seed: u64) -> AudioClip {
    let len = (seconds * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| (amplitude * rng.random_range(-1.0..1.0)) as f32).collect();
    AudioClip { samples, sample_rate }
}

/// Formant frequencies (Hz) of a reference vocal tract.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

const F4_GAIN: f64 = 4.0;

/// Speaker parameters for the source-filter voice.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub name: String,
    /// Mean F0 in Hz.
    pub f0: f64,
    /// Formant scale factor (shorter vocal tract > 1).
    pub formant_scale: f64,
    /// Spectral tilt of the glottal source, 0 (bright) .. 1 (dark).
    pub tilt: f64,
    /// Speaking-rate multiplier on segment durations.
    pub tempo: f64,
    /// Fixed upper resonance (Hz) that does not follow the vowel.
    pub f4: f64,
}

impl Voice {
    /// A small, well separated speaker set.
    pub fn panel(count: usize) -> Vec<Voice> {
        let base = [
            ("spk_a", 110.0, 1.00, 0.30, 1.00, 3300.0),
            ("spk_b", 205.0, 1.17, 0.55, 0.95, 4300.0),
            ("spk_c", 150.0, 1.08, 0.10, 1.05, 3750.0),
            ("spk_d", 240.0, 1.22, 0.70, 0.92, 4700.0),
            ("spk_e", 95.0, 0.94, 0.45, 1.08, 3050.0),
            ("spk_f", 180.0, 1.12, 0.20, 1.00, 4000.0),
        ];
        (0..count)
            .map(|i| {
                let (name, f0, fs, tilt, tempo, f4) = base[i % base.len()];
                let cycle = (i / base.len()) as f64;
                Voice {
                    name: if cycle == 0.0 { name.to_string() } else { format!("{name}{}", cycle as usize) },
                    f0: f0 * (1.0 + 0.07 * cycle),
                    formant_scale: fs * (1.0 - 0.03 * cycle),
                    tilt,
                    tempo,
                    f4: f4 * (1.0 + 0.05 * cycle),
                }
            })
            .collect()
    }
}

/// Two-pole resonator at `freq` with bandwidth `bw`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, rate: f64) -> Self {
        let r = (-PI * bw / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        Self { a1: 2.0 * r * theta.cos(), a2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn set(&mut self, freq: f64, bw: f64, rate: f64) {
        let r = (-PI * bw / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders utterance `number` spoken by `voice`. Content is a function of
/// `number` and `corpus_seed` only; `voice` sets pitch, timbre and tempo,
/// plus a small per-speaker jitter.
pub fn render_utterance(voice: &Voice, number: u32, corpus_seed: u64, sample_rate: u32) -> AudioClip {
    let rate = sample_rate as f64;
    let mut content = rng::stream(corpus_seed, &format!("synth/content/{number}"));
    let mut jitter = rng::stream(corpus_seed, &format!("synth/voice/{}/{number}", voice.name));

    // 0.5 .. 1.5 s before tempo, split into 3-6 segments.
    let total = content.random_range(0.5..1.5) * voice.tempo;
    let total = total.clamp(0.5, 1.5);
    let segments = content.random_range(3..=6);
    let kinds: Vec<usize> = (0..segments)
        .map(|i| if i > 0 && content.random_bool(0.2) { 5 } else { content.random_range(0..5) })
        .collect();
    // fricatives are short next to vowels
    let mut weights: Vec<f64> = kinds
        .iter()
        .map(|&k| content.random_range(0.5..1.5) * if k == 5 { 0.25 } else { 1.0 })
        .collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= total / wsum);
    let contour = content.random_range(-0.15..0.15);
    let vibrato = content.random_range(0.02..0.06);

    let len = (total * rate).round() as usize;
    let mut samples = Vec::with_capacity(len);
    let mut formants = [
        Resonator::new(500.0, 80.0, rate),
        Resonator::new(1500.0, 100.0, rate),
        Resonator::new(2500.0, 140.0, rate),
    ];
    let mut f4 = Resonator::new(voice.f4.min(0.45 * rate), 200.0, rate);
    let mut frication = Resonator::new((2600.0 * voice.formant_scale).min(0.45 * rate), 400.0, rate);
    let mut lowpass = 0.0;
    let mut phase = 0.0;
    let f0_jitter = 1.0 + jitter.random_range(-0.03..0.03);
    let mut seg = 0;
    let mut seg_end = weights[0];
    let mut seg_start = 0.0;
    for n in 0..len {
        let t = n as f64 / rate;
        while t >= seg_end && seg + 1 < segments {
            seg += 1;
            seg_start = seg_end;
            seg_end += weights[seg];
        }
        let u = (t - seg_start) / (seg_end - seg_start);
        let envelope = (PI * u.clamp(0.0, 1.0)).sin().powf(0.3);
        let progress = t / total;
        let x = if kinds[seg] == 5 {
            // fricative: noise through the speaker's front-cavity and F4 resonances
            let noise = jitter.random_range(-1.0..1.0);
            let hp = noise - lowpass;
            lowpass = 0.7 * lowpass + 0.3 * noise;
            (frication.tick(hp) + F4_GAIN * f4.tick(hp)) * envelope
        } else {
            let v = VOWELS[kinds[seg]];
            for (r, (&f, bw)) in formants.iter_mut().zip(v.iter().zip([80.0, 100.0, 140.0])) {
                r.set((f * voice.formant_scale).min(0.45 * rate), bw, rate);
            }
            let f0 = voice.f0
                * f0_jitter
                * (1.0 + contour * (progress - 0.5))
                * (1.0 + vibrato * (2.0 * PI * 3.0 * t).sin());
            phase += f0 / rate;
            if phase >= 1.0 {
                phase -= 1.0;
            }
            // glottal pulse: sawtooth softened by the speaker's tilt
            let pulse = 1.0 - 2.0 * phase;
            lowpass = voice.tilt * lowpass + (1.0 - voice.tilt) * pulse;
            let src = lowpass;
            let y: f64 = formants.iter_mut().map(|r| r.tick(src)).sum::<f64>() + F4_GAIN * f4.tick(src);
            y * envelope
        };
        samples.push(x);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    AudioClip { samples: samples.into_iter().map(|s| (s * gain) as f32).collect(), sample_rate }
}
