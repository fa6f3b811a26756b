use proptest::prelude::*;
use spkraug::spectral::{self, StftParams};
use spkraug::synth::{self, Voice};
use spkraug::AudioClip;

/// `‖M − |STFT(x)|‖_F / ‖M‖_F` over the one-sided bins, computed from a
/// fresh analysis of `clip` scaled back by `1/gain`.
fn frobenius_consistency(target: &spectral::Spectrogram, clip: &AudioClip, gain: f64) -> f64 {
    let undone = AudioClip { samples: clip.samples.iter().map(|s| (*s as f64 / gain) as f32).collect(), ..clip.clone() };
    let again = spectral::magnitude_spectrogram(&undone, target.params).unwrap();
    assert_eq!(again.frames, target.frames);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (m, s) in target.magnitudes.iter().zip(&again.magnitudes) {
        num += (*m as f64 - *s as f64).powi(2);
        den += (*m as f64).powi(2);
    }
    (num / den).sqrt()
}

#[test]
fn cola_reconstruction_on_noise() {
    let params = StftParams::new(400, 100, 512).unwrap();
    for seed in 0..10 {
        let clip = synth::white_noise(0.5, 16000, 0.8, seed);
        let back = spectral::istft(&spectral::stft(&clip, params).unwrap()).unwrap();
        assert!(back.len() >= clip.len());
        let err = clip.samples[400..clip.len() - 400]
            .iter()
            .zip(&back.samples[400..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn vocoder_defaults_at_16k() {
    let p = StftParams::vocoder_defaults(16000);
    assert_eq!((p.frame_length, p.frame_shift, p.fft_size), (800, 200, 2048));
}

#[test]
fn griffin_lim_improves_on_speech_like_input() {
    let voice = &Voice::panel(1)[0];
    let clip = synth::render_utterance(voice, 1, 9, 16000);
    let spec = spectral::magnitude_spectrogram(&clip, StftParams::vocoder_defaults(16000)).unwrap();
    let one = spectral::griffin_lim_traced(&spec, 1, 42).unwrap();
    let sixty = spectral::griffin_lim_traced(&spec, 60, 42).unwrap();
    assert!(sixty.errors[59] < one.errors[0]);
    assert_eq!(sixty.errors[0], one.errors[0]);
    for w in sixty.errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
    assert!((sixty.clip.peak() - 0.99).abs() < 1e-6);
}

#[test]
fn reported_error_tracks_fresh_analysis() {
    let clip = synth::sawtooth_glide(120.0, 180.0, 0.6, 16000, 0.5);
    let spec = spectral::magnitude_spectrogram(&clip, StftParams::vocoder_defaults(16000)).unwrap();
    let r = spectral::griffin_lim_traced(&spec, 30, 3).unwrap();
    let fresh = frobenius_consistency(&spec, &r.clip, r.gain);
    assert!((fresh - r.errors[29]).abs() < 1e-3, "fresh {fresh} vs traced {}", r.errors[29]);
}

#[test]
fn spectrogram_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth::sine(440.0, 0.3, 16000, 0.5);
    let spec = spectral::magnitude_spectrogram(&clip, StftParams::vocoder_defaults(16000)).unwrap();
    let p = dir.path().join("a.spg");
    spectral::save_spectrogram(&spec, &p).unwrap();
    assert_eq!(spectral::load_spectrogram(&p).unwrap(), spec);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"SPG1");
    assert_eq!(bytes.len(), 28 + 4 * spec.magnitudes.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quarter_overlap_hann_is_identity_inside(seed in any::<u64>(), len in 2000usize..6000, shape in 0usize..3) {
        let (fl, fft) = [(256, 256), (400, 512), (800, 1024)][shape];
        let params = StftParams::new(fl, fl / 4, fft).unwrap();
        let clip = synth::white_noise(len as f64 / 16000.0, 16000, 1.0, seed);
        let back = spectral::istft(&spectral::stft(&clip, params).unwrap()).unwrap();
        for n in fl..clip.len() - fl {
            prop_assert!((clip.samples[n] - back.samples[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn griffin_lim_is_deterministic(seed in any::<u64>()) {
        let clip = synth::white_noise(0.2, 16000, 0.5, 1);
        let spec = spectral::magnitude_spectrogram(&clip, StftParams::vocoder_defaults(16000)).unwrap();
        let a = spectral::griffin_lim(&spec, 3, seed).unwrap();
        let b = spectral::griffin_lim(&spec, 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
