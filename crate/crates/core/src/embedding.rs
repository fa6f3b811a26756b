//! Speaker embeddings: storage, distances, nearest-neighbour selection,
//! centroids and a deterministic non-neural stand-in extractor.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::audio::AudioClip;
use crate::spectral::{self, StftParams};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("non-finite value in embedding {0}")]
    NonFinite(String),
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("k = {k} exceeds {available} candidates")]
    KTooLarge { k: usize, available: usize },
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("clip of {0:.3} s is shorter than the 0.2 s minimum")]
    ClipTooShort(f64),
    #[error("embedding TSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub utterance_id: String,
    pub speaker_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(utterance_id: impl Into<String>, speaker_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { utterance_id: utterance_id.into(), speaker_id: speaker_id.into(), values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn same_dims(a: &[f64], b: &[f64]) -> Result<(), EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1] against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    same_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    same_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine(&a.values, &b.values)
}

pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    euclidean(&a.values, &b.values)
}

/// Ids of the `k` candidates closest to `query`, nearest first; equal
/// distances are ordered by ascending utterance id, so the result does not
/// depend on candidate order.
pub fn select_k_nearest<'a>(
    query: &EmbeddingVector,
    candidates: impl IntoIterator<Item = &'a EmbeddingVector>,
    k: usize,
) -> Result<Vec<String>, EmbeddingError> {
    let mut scored = candidates
        .into_iter()
        .map(|c| Ok((euclidean_distance(query, c)?, c.utterance_id.as_str())))
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    if scored.is_empty() {
        return Err(EmbeddingError::NoCandidates);
    }
    if k > scored.len() {
        return Err(EmbeddingError::KTooLarge { k, available: scored.len() });
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
}

/// A validated collection: unique ids, one dimension, finite non-zero
/// vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingSet {
    dimension: usize,
    entries: Vec<EmbeddingVector>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(entries: Vec<EmbeddingVector>) -> Result<Self, EmbeddingError> {
        let mut set = Self { dimension: entries.first().map_or(0, |e| e.dimension()), ..Self::default() };
        for e in entries {
            set.push(e)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, entry: EmbeddingVector) -> Result<(), EmbeddingError> {
        if self.entries.is_empty() {
            self.dimension = entry.dimension();
        }
        if entry.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(self.dimension, entry.dimension()));
        }
        if entry.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(entry.utterance_id));
        }
        if entry.norm() == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        if self.index.contains_key(&entry.utterance_id) {
            return Err(EmbeddingError::DuplicateId(entry.utterance_id));
        }
        self.index.insert(entry.utterance_id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EmbeddingVector] {
        &self.entries
    }

    pub fn get(&self, utterance_id: &str) -> Option<&EmbeddingVector> {
        self.index.get(utterance_id).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingVector> {
        self.entries.iter()
    }

    /// Sorted, de-duplicated speaker ids.
    pub fn speakers(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.entries.iter().map(|e| e.speaker_id.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#dim={}\n", self.dimension);
        for e in &self.entries {
            out.push_str(&e.utterance_id);
            out.push('\t');
            out.push_str(&e.speaker_id);
            for v in &e.values {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EmbeddingError::Parse { line: 1, msg: "missing #dim header".into() })?;
        let dim: usize = header
            .trim()
            .strip_prefix("#dim=")
            .and_then(|d| d.parse().ok())
            .ok_or(EmbeddingError::Parse { line: 1, msg: format!("bad header {header:?}") })?;
        let mut set = Self { dimension: dim, ..Self::default() };
        for (i, line) in lines {
            let line_no = i + 1;
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != dim + 2 {
                return Err(EmbeddingError::Parse {
                    line: line_no,
                    msg: format!("expected {} values, found {}", dim, fields.len().saturating_sub(2)),
                });
            }
            let values = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Parse { line: line_no, msg: e.to_string() })?;
            set.push(EmbeddingVector::new(fields[0], fields[1], values))
                .map_err(|e| EmbeddingError::Parse { line: line_no, msg: e.to_string() })?;
            set.dimension = dim;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a EmbeddingVector;
    type IntoIter = std::slice::Iter<'a, EmbeddingVector>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Component-wise mean; `None` for an empty input.
pub fn mean_vector<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut it = vectors.into_iter();
    let mut sum = it.next()?.to_vec();
    let mut n = 1usize;
    for v in it {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    Some(sum)
}

/// Arithmetic mean of a speaker's embeddings.
pub fn speaker_centroid(set: &EmbeddingSet, speaker_id: &str) -> Result<EmbeddingVector, EmbeddingError> {
    let members = set.iter().filter(|e| e.speaker_id == speaker_id).map(|e| e.values.as_slice());
    let mean = mean_vector(members).ok_or_else(|| EmbeddingError::UnknownSpeaker(speaker_id.to_string()))?;
    Ok(EmbeddingVector::new(format!("{speaker_id}#centroid"), speaker_id, mean))
}

pub const MEL_BANDS: usize = 80;
pub const STANDIN_DIM: usize = 2 * MEL_BANDS;
pub const MIN_STANDIN_SECONDS: f64 = 0.2;
/// Energies are taken on the 16-bit sample scale, which keeps log energies
/// of audible speech well above zero.
const PCM_POWER_SCALE: f64 = 32768.0 * 32768.0;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters (HTK scale) spanning 0 Hz to Nyquist, as
/// `bands × bins` weights.
pub fn mel_filterbank(bands: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Stand-in speaker embedding: 80 log mel-band energies per 25 ms frame
/// (10 ms shift), summarized by per-band mean and standard deviation and
/// L2-normalized to a 160-dim unit vector.
///
/// This is a deterministic substitute for a neural speaker encoder, good
/// enough to separate synthetic voices in tests; real evaluations should
/// load embeddings produced by a speaker-verification model from TSV.
pub fn extract_standin_embedding(clip: &AudioClip) -> Result<Vec<f64>, EmbeddingError> {
    if clip.duration_seconds() < MIN_STANDIN_SECONDS {
        return Err(EmbeddingError::ClipTooShort(clip.duration_seconds()));
    }
    let rate = clip.sample_rate as usize;
    let frame_length = rate * 25 / 1000;
    let frame_shift = rate / 100;
    let fft_size = frame_length.next_power_of_two();
    let params = StftParams::new(frame_length, frame_shift, fft_size).expect("valid analysis params");
    let spec = spectral::stft(clip, params).map_err(|e| EmbeddingError::NonFinite(e.to_string()))?;
    let filters = mel_filterbank(MEL_BANDS, fft_size, clip.sample_rate);

    let mut sum = vec![0.0; MEL_BANDS];
    let mut sum_sq = vec![0.0; MEL_BANDS];
    for f in 0..spec.frames {
        let power: Vec<f64> = spec.frame(f).iter().map(|c| c.norm_sqr() * PCM_POWER_SCALE).collect();
        for (b, filt) in filters.iter().enumerate() {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            let l = (e + 1e-10).ln();
            sum[b] += l;
            sum_sq[b] += l * l;
        }
    }
    let n = spec.frames as f64;
    let mut v = Vec::with_capacity(STANDIN_DIM);
    v.extend(sum.iter().map(|s| s / n));
    v.extend(sum.iter().zip(&sum_sq).map(|(s, q)| (q / n - (s / n).powi(2)).max(0.0).sqrt()));
    let len = norm(&v);
    if len == 0.0 || !len.is_finite() {
        return Err(EmbeddingError::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= len);
    Ok(v)
}
