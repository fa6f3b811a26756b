//! Time-domain PSOLA duration and F0 modification.
//!
//! Pipeline: autocorrelation pitch tracking, pitch-mark placement on local
//! waveform maxima, then overlap-add of two-period Hann grains re-spaced by
//! the requested F0 factor and re-timed by the duration factor.

use thiserror::Error;

use crate::audio::AudioClip;

pub const RATIO_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsolaError {
    #[error("invalid F0 search range [{0}, {1}] Hz")]
    InvalidRange(f64, f64),
    #[error("ratio {0} outside [0.5, 2.0]")]
    InvalidRatio(f64),
    #[error("empty clip")]
    EmptyClip,
    #[error("fewer than two pitch marks; input too short")]
    NoPitchMarks,
}

/// Pitch tracker and mark placement settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Analysis window, seconds.
    pub window: f64,
    /// Frame shift, seconds.
    pub shift: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self { f0_min: 60.0, f0_max: 400.0, window: 0.025, shift: 0.010, voicing_threshold: 0.5 }
    }
}

impl PitchConfig {
    pub fn with_range(f0_min: f64, f0_max: f64) -> Self {
        Self { f0_min, f0_max, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub sample_rate: u32,
    /// Seconds between frame centers.
    pub frame_shift: f64,
    /// Center of frame 0, seconds.
    pub first_center: f64,
    /// Hz, 0 where unvoiced.
    pub f0_values: Vec<f64>,
    pub voicing: Vec<bool>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_values.is_empty()
    }

    /// Voicing and F0 of the frame nearest to sample `n`.
    pub fn at_sample(&self, n: usize) -> (bool, f64) {
        if self.is_empty() {
            return (false, 0.0);
        }
        let t = n as f64 / self.sample_rate as f64;
        let i = ((t - self.first_center) / self.frame_shift).round().max(0.0) as usize;
        let i = i.min(self.len() - 1);
        (self.voicing[i], self.f0_values[i])
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.voicing.iter().filter(|v| **v).count() as f64 / self.len() as f64
    }

    pub fn median_voiced_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.f0_values.iter().copied().filter(|f| *f > 0.0).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }
}

/// Autocorrelation F0 tracker with default window, shift and threshold.
pub fn estimate_f0(clip: &AudioClip, f0_min: f64, f0_max: f64) -> Result<PitchTrack, PsolaError> {
    estimate_f0_with(clip, &PitchConfig::with_range(f0_min, f0_max))
}

/// Per-frame normalized cross-correlation between the analysis window and
/// its lagged copy. The F0 is taken from the shortest-lag interior peak
/// within 90% of the strongest one (suppresses period doubling), refined by
/// parabolic interpolation.
pub fn estimate_f0_with(clip: &AudioClip, cfg: &PitchConfig) -> Result<PitchTrack, PsolaError> {
    let rate = clip.sample_rate as f64;
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max && cfg.f0_max < rate / 4.0) {
        return Err(PsolaError::InvalidRange(cfg.f0_min, cfg.f0_max));
    }
    let x = &clip.samples;
    let win = (cfg.window * rate).round() as usize;
    let hop = ((cfg.shift * rate).round() as usize).max(1);
    let lag_min = ((rate / cfg.f0_max).floor() as usize).max(2);
    let lag_max = (rate / cfg.f0_min).ceil() as usize;
    let frames = if x.len() <= win { 1 } else { 1 + (x.len() - win).div_ceil(hop) };
    let sample = |i: usize| x.get(i).map_or(0.0, |&s| f64::from(s));

    let mut f0_values = Vec::with_capacity(frames);
    let mut voicing = Vec::with_capacity(frames);
    let mut r = vec![0.0; lag_max + 2];
    for f in 0..frames {
        let start = f * hop;
        let a: Vec<f64> = (start..start + win).map(sample).collect();
        let ea: f64 = a.iter().map(|v| v * v).sum();
        if ea / (win as f64) < 1e-10 {
            f0_values.push(0.0);
            voicing.push(false);
            continue;
        }
        let b: Vec<f64> = (start..start + win + lag_max + 1).map(sample).collect();
        let mut eb: f64 = b[lag_min - 1..lag_min - 1 + win].iter().map(|v| v * v).sum();
        for lag in lag_min - 1..=lag_max + 1 {
            if lag > lag_min - 1 {
                eb += b[lag + win - 1].powi(2) - b[lag - 1].powi(2);
            }
            let dot: f64 = a.iter().zip(&b[lag..lag + win]).map(|(p, q)| p * q).sum();
            let denom = (ea * eb.max(0.0)).sqrt();
            r[lag] = if denom > 1e-12 { dot / denom } else { 0.0 };
        }
        let best = (lag_min..=lag_max).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        let peak = (lag_min..=lag_max).find(|&l| {
            r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1] && r[l] > 0.0
        });
        match peak {
            Some(l) if r[l] >= cfg.voicing_threshold => {
                let (y0, y1, y2) = (r[l - 1], r[l], r[l + 1]);
                let curv = y0 - 2.0 * y1 + y2;
                let delta = if curv.abs() > 1e-12 { (0.5 * (y0 - y2) / curv).clamp(-0.5, 0.5) } else { 0.0 };
                let f0 = (rate / (l as f64 + delta)).clamp(cfg.f0_min, cfg.f0_max);
                f0_values.push(f0);
                voicing.push(true);
            }
            _ => {
                f0_values.push(0.0);
                voicing.push(false);
            }
        }
    }
    Ok(PitchTrack {
        sample_rate: clip.sample_rate,
        frame_shift: hop as f64 / rate,
        first_center: win as f64 / 2.0 / rate,
        f0_values,
        voicing,
    })
}

/// Grain anchors: one per pitch period in voiced regions, a 10 ms grid in
/// unvoiced ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchMarks {
    pub positions: Vec<usize>,
    pub voiced: Vec<bool>,
    /// Local period in samples (grid spacing when unvoiced).
    pub periods: Vec<f64>,
}

impl PitchMarks {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn nearest(&self, t: f64) -> usize {
        let idx = self.positions.partition_point(|&p| (p as f64) < t);
        if idx == 0 {
            return 0;
        }
        if idx == self.len() {
            return self.len() - 1;
        }
        let before = t - self.positions[idx - 1] as f64;
        let after = self.positions[idx] as f64 - t;
        if after < before {
            idx
        } else {
            idx - 1
        }
    }
}

const UNVOICED_GRID: f64 = 0.010;
/// Search radius around the predicted mark, as a fraction of the period.
const SNAP_RADIUS: f64 = 0.2;

pub fn place_pitch_marks(clip: &AudioClip, track: &PitchTrack) -> Result<PitchMarks, PsolaError> {
    if clip.is_empty() {
        return Err(PsolaError::EmptyClip);
    }
    let x = &clip.samples;
    let len = x.len();
    let rate = clip.sample_rate as f64;
    let grid = (UNVOICED_GRID * rate).round();
    let argmax = |lo: usize, hi: usize| {
        (lo..=hi).fold(lo, |best, i| if x[i] > x[best] { i } else { best })
    };

    let mut marks = PitchMarks { positions: Vec::new(), voiced: Vec::new(), periods: Vec::new() };
    let mut next = 0.0f64;
    let mut prev_voiced = false;
    loop {
        let p = next.round() as usize;
        if p >= len {
            break;
        }
        let floor = marks.positions.last().map_or(0, |&m| m + 1);
        let (voiced, f0) = track.at_sample(p);
        if voiced {
            let period = rate / f0;
            let (lo, hi) = if prev_voiced {
                (p as f64 - SNAP_RADIUS * period, p as f64 + SNAP_RADIUS * period)
            } else {
                (p as f64, p as f64 + period)
            };
            let lo = (lo.ceil().max(0.0) as usize).max(floor);
            let hi = (hi.floor() as usize).min(len - 1);
            if lo > hi {
                break;
            }
            let m = argmax(lo, hi);
            marks.positions.push(m);
            marks.voiced.push(true);
            marks.periods.push(period);
            next = m as f64 + period;
        } else {
            let m = p.max(floor);
            if m >= len {
                break;
            }
            marks.positions.push(m);
            marks.voiced.push(false);
            marks.periods.push(grid);
            next = m as f64 + grid;
        }
        prev_voiced = voiced;
    }
    Ok(marks)
}

/// Pitch analysis of one clip, reusable across several renders.
#[derive(Debug, Clone)]
pub struct PsolaAnalysis {
    clip: AudioClip,
    marks: PitchMarks,
    /// Synthesis period per mark: the distance to the next mark inside a
    /// voiced run, the tracked period elsewhere.
    spans: Vec<f64>,
}

impl PsolaAnalysis {
    pub fn new(clip: &AudioClip, cfg: &PitchConfig) -> Result<Self, PsolaError> {
        if clip.is_empty() {
            return Err(PsolaError::EmptyClip);
        }
        let track = estimate_f0_with(clip, cfg)?;
        let marks = place_pitch_marks(clip, &track)?;
        if marks.len() < 2 {
            return Err(PsolaError::NoPitchMarks);
        }
        let spans = (0..marks.len())
            .map(|k| match k + 1 < marks.len() && marks.voiced[k] && marks.voiced[k + 1] {
                true => (marks.positions[k + 1] - marks.positions[k]) as f64,
                false => marks.periods[k],
            })
            .collect();
        Ok(Self { clip: clip.clone(), marks, spans })
    }

    pub fn marks(&self) -> &PitchMarks {
        &self.marks
    }

    /// Overlap-adds Hann grains two local periods wide. Voiced grains are
    /// spaced `span / f0_ratio` apart, unvoiced ones keep their spacing;
    /// each grain is taken from the analysis mark nearest to the synthesis
    /// time mapped back through `duration_ratio` (ties go to the earlier
    /// mark). The sum is divided by the summed window, so every output
    /// sample is a convex combination of input samples.
    pub fn render(&self, duration_ratio: f64, f0_ratio: f64) -> Result<AudioClip, PsolaError> {
        check_ratio(duration_ratio)?;
        check_ratio(f0_ratio)?;
        let x = &self.clip.samples;
        let marks = &self.marks;
        let spans = &self.spans;
        let out_len = (duration_ratio * x.len() as f64).round() as usize;
        let mut out = vec![0.0f64; out_len];
        let mut wsum = vec![0.0f64; out_len];

        let spacing = |k: usize| {
            if marks.voiced[k] {
                spans[k] / f0_ratio
            } else {
                spans[k]
            }
        };
        let first = marks.positions[0] as f64 * duration_ratio;
        let mut t = first - (first / spacing(0)).floor() * spacing(0);
        while t < out_len as f64 {
            let k = marks.nearest(t / duration_ratio);
            let half = spans[k].max(marks.periods[k]).round().max(1.0) as isize;
            let src = marks.positions[k] as isize;
            let dst = t.round() as isize;
            for j in -half..=half {
                let (s, d) = (src + j, dst + j);
                if s < 0 || s >= x.len() as isize || d < 0 || d >= out_len as isize {
                    continue;
                }
                let w = 0.5 * (1.0 + (std::f64::consts::PI * j as f64 / half as f64).cos());
                out[d as usize] += w * f64::from(x[s as usize]);
                wsum[d as usize] += w;
            }
            t += spacing(k);
        }
        let samples = out
            .iter()
            .zip(&wsum)
            .map(|(o, w)| if *w > 1e-3 { (o / w) as f32 } else { 0.0 })
            .collect();
        Ok(AudioClip { samples, sample_rate: self.clip.sample_rate })
    }
}

fn check_ratio(r: f64) -> Result<(), PsolaError> {
    if r.is_finite() && (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&r) {
        Ok(())
    } else {
        Err(PsolaError::InvalidRatio(r))
    }
}

/// TD-PSOLA: scales duration by `duration_ratio` and voiced F0 by `f0_ratio`.
pub fn psola_modify(clip: &AudioClip, duration_ratio: f64, f0_ratio: f64) -> Result<AudioClip, PsolaError> {
    check_ratio(duration_ratio)?;
    check_ratio(f0_ratio)?;
    PsolaAnalysis::new(clip, &PitchConfig::default())?.render(duration_ratio, f0_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn median_f0(clip: &AudioClip) -> f64 {
        estimate_f0(clip, 60.0, 400.0).unwrap().median_voiced_f0().unwrap()
    }

    #[test]
    fn sine_track_is_voiced_at_true_pitch() {
        let track = estimate_f0(&synth::sine(200.0, 1.0, 16000, 0.5), 50.0, 500.0).unwrap();
        assert!(track.voicing.iter().all(|v| *v));
        let f0 = track.median_voiced_f0().unwrap();
        assert!((f0 - 200.0).abs() <= 2.0, "{f0}");
        for (f, v) in track.f0_values.iter().zip(&track.voicing) {
            assert_eq!(*f == 0.0, !*v);
        }
    }

    #[test]
    fn noise_and_silence_are_unvoiced() {
        let track = estimate_f0(&synth::white_noise(1.0, 16000, 0.5, 17), 60.0, 400.0).unwrap();
        assert!(track.voiced_fraction() <= 0.1, "{}", track.voiced_fraction());
        let track = estimate_f0(&AudioClip::silence(16000, 16000), 60.0, 400.0).unwrap();
        assert_eq!(track.voiced_fraction(), 0.0);
    }

    #[test]
    fn rejects_bad_search_range() {
        let clip = synth::sine(200.0, 0.1, 16000, 0.5);
        assert!(matches!(estimate_f0(&clip, 0.0, 400.0), Err(PsolaError::InvalidRange(..))));
        assert!(matches!(estimate_f0(&clip, 300.0, 200.0), Err(PsolaError::InvalidRange(..))));
        assert!(matches!(estimate_f0(&clip, 60.0, 4000.0), Err(PsolaError::InvalidRange(..))));
    }

    #[test]
    fn marks_follow_period() {
        let clip = synth::sine(100.0, 1.0, 16000, 0.5);
        let track = estimate_f0(&clip, 60.0, 400.0).unwrap();
        let marks = place_pitch_marks(&clip, &track).unwrap();
        assert!(marks.voiced.iter().all(|v| *v));
        for g in marks.positions.windows(2) {
            let gap = (g[1] - g[0]) as f64;
            assert!((gap - 160.0).abs() <= 16.0, "{gap}");
        }
    }

    #[test]
    fn unvoiced_marks_use_10ms_grid() {
        let clip = AudioClip::silence(8000, 16000);
        let track = estimate_f0(&clip, 60.0, 400.0).unwrap();
        let marks = place_pitch_marks(&clip, &track).unwrap();
        assert_eq!(marks.positions, (0..8000).step_by(160).collect::<Vec<_>>());
        assert!(matches!(place_pitch_marks(&AudioClip::silence(0, 16000), &track), Err(PsolaError::EmptyClip)));
    }

    #[test]
    fn glide_marks_spread_out() {
        let clip = synth::sine_glide(200.0, 100.0, 1.0, 16000, 0.5);
        let track = estimate_f0(&clip, 60.0, 400.0).unwrap();
        let marks = place_pitch_marks(&clip, &track).unwrap();
        let gaps: Vec<i64> = marks.positions.windows(2).map(|w| (w[1] - w[0]) as i64).collect();
        // integer mark positions jitter the gaps by at most one sample
        for g in gaps.windows(2) {
            assert!(g[1] >= g[0] - 1, "{gaps:?}");
        }
        assert!(gaps[gaps.len() - 1] - gaps[0] > 60, "{gaps:?}");
        for (g, p) in gaps.iter().zip(&marks.periods) {
            assert!((*g as f64 - p).abs() <= 0.2 * p, "gap {g} period {p}");
        }
    }

    #[test]
    fn identity_ratios_preserve_signal() {
        let clip = synth::sawtooth(150.0, 1.0, 16000, 0.5);
        let out = psola_modify(&clip, 1.0, 1.0).unwrap();
        assert_eq!(out.len(), clip.len());
        let n = out.len();
        let dot: f64 = (0..n).map(|i| f64::from(clip.samples[i]) * f64::from(out.samples[i])).sum();
        let ea: f64 = clip.samples.iter().map(|s| f64::from(*s).powi(2)).sum();
        let eb: f64 = out.samples.iter().map(|s| f64::from(*s).powi(2)).sum();
        let corr = dot / (ea * eb).sqrt();
        assert!(corr > 0.95, "{corr}");
        let db = 20.0 * (out.rms() / clip.rms()).log10();
        assert!(db.abs() < 3.0, "{db}");
    }

    #[test]
    fn duration_stretch_keeps_pitch() {
        let clip = synth::sawtooth(150.0, 1.0, 16000, 0.5);
        let out = psola_modify(&clip, 1.2, 1.0).unwrap();
        assert!((out.duration_seconds() - 1.2).abs() <= 0.024);
        let f0 = median_f0(&out);
        assert!((f0 - 150.0).abs() <= 7.0, "{f0}");
    }

    #[test]
    fn pitch_shift_keeps_duration() {
        let clip = synth::sawtooth(150.0, 1.0, 16000, 0.5);
        let out = psola_modify(&clip, 1.0, 1.5).unwrap();
        assert!((out.len() as f64 / clip.len() as f64 - 1.0).abs() <= 0.02);
        let f0 = median_f0(&out);
        assert!((f0 - 225.0).abs() <= 11.0, "{f0}");
        assert!(out.peak() <= 1.0);
    }

    #[test]
    fn rejects_bad_ratios_and_tiny_input() {
        let clip = synth::sawtooth(150.0, 0.5, 16000, 0.5);
        assert!(matches!(psola_modify(&clip, 0.3, 1.0), Err(PsolaError::InvalidRatio(_))));
        assert!(matches!(psola_modify(&clip, 1.0, 2.1), Err(PsolaError::InvalidRatio(_))));
        let tiny = AudioClip::silence(100, 16000);
        assert!(matches!(psola_modify(&tiny, 1.0, 1.0), Err(PsolaError::NoPitchMarks)));
        assert!(matches!(psola_modify(&AudioClip::silence(0, 16000), 1.0, 1.0), Err(PsolaError::EmptyClip)));
    }

    #[test]
    fn nearest_mark_ties_go_early() {
        let marks = PitchMarks { positions: vec![0, 10, 20], voiced: vec![true; 3], periods: vec![10.0; 3] };
        assert_eq!(marks.nearest(5.0), 0);
        assert_eq!(marks.nearest(5.1), 1);
        assert_eq!(marks.nearest(15.0), 1);
        assert_eq!(marks.nearest(99.0), 2);
        assert_eq!(marks.nearest(-3.0), 0);
    }
}
