//! Objective scores: equal error rate, speaker-verification loss terms, the
//! weighted composite loss, and word error rate.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{self, EmbeddingError, EmbeddingSet, EmbeddingVector};
use crate::rng;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid loss term: {0}")]
    InvalidTerm(String),
    #[error("length mismatch: {0} synthesized vs {1} natural")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least one genuine and one impostor pair ({genuine} genuine, {impostor} impostor)")]
    MissingClass { genuine: usize, impostor: usize },
    #[error("pair {0} -> {1} has no score")]
    Unscored(String, String),
    #[error("speaker {speaker} needs {needed} same- and different-speaker references, pool has {same} / {different}")]
    InsufficientReferences { speaker: String, needed: usize, same: usize, different: usize },
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty reference transcript")]
    EmptyReference,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// One verification trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub enroll_id: String,
    pub test_id: String,
    pub same_speaker: bool,
    pub score: Option<f64>,
}

impl ScoredPair {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, same_speaker: bool, score: Option<f64>) -> Self {
        Self { enroll_id: enroll_id.into(), test_id: test_id.into(), same_speaker, score }
    }
}

/// Pair list as TSV: `enroll_id<TAB>test_id<TAB>same|diff[<TAB>score]`.
pub fn pairs_to_tsv(pairs: &[ScoredPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.enroll_id);
        out.push('\t');
        out.push_str(&p.test_id);
        out.push_str(if p.same_speaker { "\tsame" } else { "\tdiff" });
        if let Some(s) = p.score {
            out.push('\t');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn pairs_from_tsv(text: &str) -> Result<Vec<ScoredPair>, MetricsError> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| MetricsError::Parse { line: n + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&f.len()) {
            return Err(bad("expected 3 or 4 tab-separated fields"));
        }
        let same_speaker = match f[2] {
            "same" => true,
            "diff" => false,
            _ => return Err(bad("label must be `same` or `diff`")),
        };
        let score = match f.get(3).filter(|s| !s.is_empty()) {
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| bad("unparsable score"))?;
                if !v.is_finite() {
                    return Err(bad("non-finite score"));
                }
                Some(v)
            }
            None => None,
        };
        pairs.push(ScoredPair::new(f[0], f[1], same_speaker, score));
    }
    Ok(pairs)
}

/// Fills missing scores with the cosine similarity of the two embeddings.
pub fn score_pairs(pairs: &mut [ScoredPair], embeddings: &EmbeddingSet) -> Result<(), MetricsError> {
    for p in pairs.iter_mut().filter(|p| p.score.is_none()) {
        let lookup = |id: &str| embeddings.get(id).ok_or_else(|| MetricsError::MissingEmbedding(id.to_string()));
        p.score = Some(embedding::cosine_similarity(lookup(&p.enroll_id)?, lookup(&p.test_id)?)?);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub genuine: usize,
    pub impostor: usize,
}

/// Equal error rate over scored trials; see [`eer_from_scores`].
pub fn equal_error_rate(pairs: &[ScoredPair]) -> Result<EerResult, MetricsError> {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for p in pairs {
        let s = p.score.ok_or_else(|| MetricsError::Unscored(p.enroll_id.clone(), p.test_id.clone()))?;
        if p.same_speaker {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    eer_from_scores(&genuine, &impostor)
}

/// Threshold sweep over the distinct scores.
///
/// At threshold `t`, FRR is the fraction of genuine scores below `t` and
/// FAR the fraction of impostor scores at or above `t`. Operating points
/// are taken at every distinct score plus one past the maximum (FRR = 1,
/// FAR = 0). The EER is read where FAR − FRR first reaches zero, linearly
/// interpolated between the two operating points that bracket the sign
/// change; the threshold is interpolated the same way (past the maximum it
/// stays at the maximum score).
pub fn eer_from_scores(genuine: &[f64], impostor: &[f64]) -> Result<EerResult, MetricsError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(MetricsError::MissingClass { genuine: genuine.len(), impostor: impostor.len() });
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite("score".into()));
    }
    let mut trials: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(impostor.iter().map(|&s| (s, false)))
        .collect();
    trials.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (g, i) = (genuine.len() as f64, impostor.len() as f64);

    // (threshold, frr, far) with counts of trials strictly below threshold
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut below_g = 0usize;
    let mut below_i = 0usize;
    let mut idx = 0;
    let finish = |prev: (f64, f64, f64), cur: (f64, f64, f64)| {
        let d0 = prev.2 - prev.1;
        let d1 = cur.2 - cur.1;
        let lambda = d0 / (d0 - d1);
        (prev.1 + lambda * (cur.1 - prev.1), prev.0 + lambda * (cur.0 - prev.0))
    };
    while idx < trials.len() {
        let t = trials[idx].0;
        let point = (t, below_g as f64 / g, (impostor.len() - below_i) as f64 / i);
        let d = point.2 - point.1;
        if d <= 0.0 {
            let (eer, threshold) = match prev {
                Some(p) if d < 0.0 => finish(p, point),
                _ => (point.1, t),
            };
            return Ok(EerResult { eer, threshold, genuine: genuine.len(), impostor: impostor.len() });
        }
        while idx < trials.len() && trials[idx].0 == t {
            if trials[idx].1 {
                below_g += 1;
            } else {
                below_i += 1;
            }
            idx += 1;
        }
        prev = Some(point);
    }
    let last = prev.expect("at least one trial");
    let (eer, _) = finish(last, (last.0, 1.0, 0.0));
    Ok(EerResult { eer, threshold: last.0, genuine: genuine.len(), impostor: impostor.len() })
}

/// EER per test speaker: trials are grouped by the speaker of `test_id`.
/// Speakers lacking either trial class are left out.
pub fn per_speaker_eer<'a>(
    pairs: &[ScoredPair],
    speaker_of: impl Fn(&str) -> Option<&'a str>,
) -> Result<BTreeMap<String, EerResult>, MetricsError> {
    let mut groups: BTreeMap<String, Vec<ScoredPair>> = BTreeMap::new();
    for p in pairs {
        if let Some(s) = speaker_of(&p.test_id) {
            groups.entry(s.to_string()).or_default().push(p.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (speaker, group) in groups {
        match equal_error_rate(&group) {
            Ok(r) => {
                out.insert(speaker, r);
            }
            Err(MetricsError::MissingClass { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Spectrogram L1, attention and speaker-verification loss values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_l1: f64,
    pub l_attention: f64,
    pub l_sv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    /// Placeholder weights; tune per experiment.
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.1 }
    }
}

/// `alpha * l_l1 + beta * l_attention + gamma * l_sv`.
pub fn combined_loss(terms: &LossTerms, weights: &LossWeights) -> Result<f64, MetricsError> {
    let all = [terms.l_l1, terms.l_attention, terms.l_sv, weights.alpha, weights.beta, weights.gamma];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(format!("{terms:?} / {weights:?}")));
    }
    if terms.l_l1 < 0.0 || terms.l_attention < 0.0 {
        return Err(MetricsError::InvalidTerm("l_l1 and l_attention must be non-negative".into()));
    }
    let loss = weights.alpha * terms.l_l1 + weights.beta * terms.l_attention + weights.gamma * terms.l_sv;
    if !loss.is_finite() {
        return Err(MetricsError::NonFinite("combined loss overflow".into()));
    }
    Ok(loss)
}

/// `1 - mean(cos(synth_i, natural_i))`; 0 when every pair is parallel,
/// at most 2.
pub fn batch_cs_loss(synth: &[EmbeddingVector], natural: &[EmbeddingVector]) -> Result<f64, MetricsError> {
    if synth.len() != natural.len() {
        return Err(MetricsError::LengthMismatch(synth.len(), natural.len()));
    }
    if synth.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut total = 0.0;
    for (s, n) in synth.iter().zip(natural) {
        total += embedding::cosine_similarity(s, n)?;
    }
    Ok(1.0 - total / synth.len() as f64)
}

/// EER-based loss for a batch: every synthesized embedding is scored by
/// cosine similarity against `per_utterance_refs` randomly drawn natural
/// references of its own speaker and as many from other speakers, and the
/// EER of the pooled trials is returned. Draws come from the `eer-loss`
/// stream of `seed`.
pub fn eer_loss(
    batch_synth: &EmbeddingSet,
    reference_pool: &EmbeddingSet,
    per_utterance_refs: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if batch_synth.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut rng = rng::stream(seed, "eer-loss");
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for s in batch_synth {
        let same: Vec<&EmbeddingVector> = reference_pool
            .iter()
            .filter(|r| r.speaker_id == s.speaker_id && r.utterance_id != s.utterance_id)
            .collect();
        let diff: Vec<&EmbeddingVector> = reference_pool.iter().filter(|r| r.speaker_id != s.speaker_id).collect();
        if same.len() < per_utterance_refs || diff.len() < per_utterance_refs || per_utterance_refs == 0 {
            return Err(MetricsError::InsufficientReferences {
                speaker: s.speaker_id.clone(),
                needed: per_utterance_refs,
                same: same.len(),
                different: diff.len(),
            });
        }
        for i in index::sample(&mut rng, same.len(), per_utterance_refs) {
            genuine.push(embedding::cosine_similarity(s, same[i])?);
        }
        for i in index::sample(&mut rng, diff.len(), per_utterance_refs) {
            impostor.push(embedding::cosine_similarity(s, diff[i])?);
        }
    }
    Ok(eer_from_scores(&genuine, &impostor)?.eer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Lowercases, drops `.,;:!?"` and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"'))
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Unit-cost Levenshtein alignment of token sequences. On equal cost the
/// backtrace prefers substitution (or match), then insertion, then
/// deletion.
pub fn word_error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerResult, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        cost[j] = j as u32;
    }
    for i in 1..=n {
        cost[i * w] = i as u32;
        for j in 1..=m {
            let sub = cost[(i - 1) * w + j - 1] + u32::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = cost[i * w + j - 1] + 1;
            let del = cost[(i - 1) * w + j] + 1;
            cost[i * w + j] = sub.min(ins).min(del);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = u32::from(reference[i - 1] != hypothesis[j - 1]);
            if cost[(i - 1) * w + j - 1] + mismatch == here {
                s += mismatch as usize;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * w + j - 1] + 1 == here {
            ins += 1;
            j -= 1;
        } else {
            d += 1;
            i -= 1;
        }
    }
    Ok(WerResult {
        wer: (s + d + ins) as f64 / n as f64,
        substitutions: s,
        deletions: d,
        insertions: ins,
        reference_words: n,
    })
}

/// Corpus-level WER: total edits over total reference words.
pub fn corpus_wer(results: &[WerResult]) -> Option<WerResult> {
    let words: usize = results.iter().map(|r| r.reference_words).sum();
    if words == 0 {
        return None;
    }
    let s = results.iter().map(|r| r.substitutions).sum::<usize>();
    let d = results.iter().map(|r| r.deletions).sum::<usize>();
    let i = results.iter().map(|r| r.insertions).sum::<usize>();
    Some(WerResult { wer: (s + d + i) as f64 / words as f64, substitutions: s, deletions: d, insertions: i, reference_words: words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eer(g: &[f64], i: &[f64]) -> f64 {
        eer_from_scores(g, i).unwrap().eer
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[0.9, 0.8], &[0.2, 0.1]), 0.0);
        assert_eq!(eer(&[0.1, 0.2], &[0.8, 0.9]), 1.0);
        assert_eq!(eer(&[0.9, 0.4], &[0.6, 0.1]), 0.5);
        // identical scores for everyone: halfway between accept-all and reject-all
        assert_eq!(eer(&[1.0, 1.0, 1.0], &[1.0, 1.0]), 0.5);
    }

    #[test]
    fn eer_threshold_sits_between_classes() {
        let r = eer_from_scores(&[0.9, 0.8], &[0.2, 0.1]).unwrap();
        assert!(r.threshold > 0.2 && r.threshold <= 0.8);
        assert_eq!((r.genuine, r.impostor), (2, 2));
    }

    #[test]
    fn eer_interpolates() {
        // FAR-FRR: t=.1 -> 1, t=.3 -> 2/3, t=.5 -> 0/3... worked by hand:
        // genuine {0.3, 0.5, 0.7}, impostor {0.1, 0.4}
        // t=0.1: frr 0, far 1
        // t=0.3: frr 0, far 1/2
        // t=0.4: frr 1/3, far 1/2   d=+1/6
        // t=0.5: frr 1/3, far 0     d=-1/3 -> lambda = 1/3, eer = 1/3
        let r = eer_from_scores(&[0.3, 0.5, 0.7], &[0.1, 0.4]).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.threshold - (0.4 + (0.5 - 0.4) / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eer_errors() {
        assert!(matches!(eer_from_scores(&[0.5], &[]), Err(MetricsError::MissingClass { .. })));
        assert!(matches!(eer_from_scores(&[], &[0.5]), Err(MetricsError::MissingClass { .. })));
        assert!(matches!(eer_from_scores(&[f64::NAN], &[0.5]), Err(MetricsError::NonFinite(_))));
        let unscored = [ScoredPair::new("a", "b", true, None)];
        assert!(matches!(equal_error_rate(&unscored), Err(MetricsError::Unscored(..))));
    }

    #[test]
    fn pair_tsv_round_trip() {
        let pairs = vec![
            ScoredPair::new("n1", "s1", true, Some(0.125)),
            ScoredPair::new("n2", "s1", false, None),
            ScoredPair::new("n3", "s2", false, Some(-0.3333333333333333)),
        ];
        assert_eq!(pairs_from_tsv(&pairs_to_tsv(&pairs)).unwrap(), pairs);
        assert!(matches!(pairs_from_tsv("a\tb\tmaybe\n"), Err(MetricsError::Parse { line: 1, .. })));
        assert!(matches!(pairs_from_tsv("a\tb\n"), Err(MetricsError::Parse { .. })));
        assert!(pairs_from_tsv("a\tb\tsame\tNaN\n").is_err());
    }

    #[test]
    fn scoring_fills_gaps_only() {
        let set = spk_set("n", &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let mut pairs = vec![ScoredPair::new("n0", "n1", false, None), ScoredPair::new("n0", "n1", false, Some(0.7))];
        score_pairs(&mut pairs, &set).unwrap();
        assert_eq!(pairs[0].score, Some(0.0));
        assert_eq!(pairs[1].score, Some(0.7));
        let mut missing = vec![ScoredPair::new("n0", "zz", true, None)];
        assert!(matches!(score_pairs(&mut missing, &set), Err(MetricsError::MissingEmbedding(_))));
    }

    #[test]
    fn flipping_labels_on_separable_data() {
        let g = [0.9, 0.85, 0.7];
        let i = [0.3, 0.1];
        assert_eq!(eer(&g, &i), 0.0);
        assert_eq!(eer(&i, &g), 1.0);
    }

    #[test]
    fn per_speaker_grouping() {
        let pairs = vec![
            ScoredPair::new("n1", "a1", true, Some(0.9)),
            ScoredPair::new("n2", "a1", false, Some(0.1)),
            ScoredPair::new("n3", "b1", true, Some(0.2)),
            ScoredPair::new("n4", "b1", false, Some(0.8)),
            ScoredPair::new("n5", "c1", true, Some(0.8)),
        ];
        let spk = |id: &str| Some(if id.starts_with('a') { "A" } else if id.starts_with('b') { "B" } else { "C" });
        let r = per_speaker_eer(&pairs, spk).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r["A"].eer, 0.0);
        assert_eq!(r["B"].eer, 1.0);
    }

    #[test]
    fn combined_loss_examples() {
        let t = LossTerms { l_l1: 0.5, l_attention: 0.25, l_sv: 0.1 };
        assert_eq!(combined_loss(&t, &LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.0 }).unwrap(), 0.75);
        assert!((combined_loss(&t, &LossWeights { alpha: 1.0, beta: 2.0, gamma: 10.0 }).unwrap() - 2.0).abs() < 1e-15);
        let t2 = LossTerms { l_l1: 3.0, l_attention: 7.0, l_sv: -0.4 };
        assert_eq!(combined_loss(&t2, &LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 }).unwrap(), -0.4);
        assert!(combined_loss(&LossTerms { l_l1: f64::NAN, ..t }, &LossWeights::default()).is_err());
        assert!(combined_loss(&LossTerms { l_l1: -1.0, ..t }, &LossWeights::default()).is_err());
    }

    #[test]
    fn cs_loss_examples() {
        let v = |id: &str, x: Vec<f64>| EmbeddingVector::new(id, "s", x);
        let a = vec![v("1", vec![1.0, 0.0]), v("2", vec![0.0, 2.0])];
        assert_eq!(batch_cs_loss(&a, &a).unwrap(), 0.0);
        let b = vec![v("1", vec![0.0, 1.0]), v("2", vec![3.0, 0.0])];
        assert_eq!(batch_cs_loss(&a, &b).unwrap(), 1.0);
        let c = vec![v("1", vec![5.0, 0.0]), v("2", vec![1.0, 0.0])];
        assert_eq!(batch_cs_loss(&a, &c).unwrap(), 0.5);
        assert!(matches!(batch_cs_loss(&a, &c[..1]), Err(MetricsError::LengthMismatch(2, 1))));
        assert!(matches!(batch_cs_loss(&[], &[]), Err(MetricsError::EmptyBatch)));
    }

    fn spk_set(prefix: &str, vectors: &[(&str, Vec<f64>)]) -> EmbeddingSet {
        EmbeddingSet::new(
            vectors
                .iter()
                .enumerate()
                .map(|(i, (s, x))| EmbeddingVector::new(format!("{prefix}{i}"), *s, x.clone()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn eer_loss_separable_and_degenerate() {
        let pool = spk_set(
            "n",
            &[("a", vec![1.0, 0.0]), ("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("b", vec![0.0, 1.0])],
        );
        let synth = spk_set("s", &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        assert_eq!(eer_loss(&synth, &pool, 1, 42).unwrap(), 0.0);
        assert_eq!(eer_loss(&synth, &pool, 2, 42).unwrap(), 0.0);

        let flat = spk_set("n", &[("a", vec![1.0, 1.0]), ("a", vec![1.0, 1.0]), ("b", vec![1.0, 1.0])]);
        let synth_flat = spk_set("s", &[("a", vec![2.0, 2.0]), ("b", vec![1.0, 1.0])]);
        let r = eer_loss(&synth_flat, &flat, 2, 1);
        // only one natural reference for speaker b
        assert!(matches!(r, Err(MetricsError::InsufficientReferences { .. })));
        let flat = spk_set("n", &[("a", vec![1.0, 1.0]), ("a", vec![1.0, 1.0]), ("b", vec![1.0, 1.0]), ("b", vec![3.0, 3.0])]);
        assert!((eer_loss(&synth_flat, &flat, 1, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_loss_is_seeded() {
        let pts: Vec<(&str, Vec<f64>)> = (0..12)
            .map(|i| (if i % 3 == 0 { "a" } else if i % 3 == 1 { "b" } else { "c" }, vec![1.0 + (i as f64).sin(), (i as f64 * 0.7).cos()]))
            .collect();
        let pool = spk_set("n", &pts);
        let synth = spk_set("s", &pts[..6]);
        let a = eer_loss(&synth, &pool, 2, 7).unwrap();
        assert_eq!(a, eer_loss(&synth, &pool, 2, 7).unwrap());
    }

    #[test]
    fn wer_examples() {
        let r = tokenize("the cat sat");
        assert_eq!(word_error_rate(&r, &r).unwrap().wer, 0.0);
        let res = word_error_rate(&r, &tokenize("the cat")).unwrap();
        assert!((res.wer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((res.substitutions, res.deletions, res.insertions), (0, 1, 0));
        let res = word_error_rate(&r, &tokenize("the cat sat down")).unwrap();
        assert_eq!((res.substitutions, res.deletions, res.insertions), (0, 0, 1));
        let res = word_error_rate(&r, &tokenize("a cat sat")).unwrap();
        assert_eq!((res.substitutions, res.deletions, res.insertions), (1, 0, 0));
        let empty: Vec<String> = vec![];
        assert_eq!(word_error_rate(&r, &empty).unwrap().wer, 1.0);
        assert!(matches!(word_error_rate(&empty, &r), Err(MetricsError::EmptyReference)));
    }

    #[test]
    fn wer_tie_prefers_substitution() {
        // "a b" vs "c": one substitution + one deletion either way; the
        // backtrace must report S=1, D=1 rather than D=2, I=1.
        let res = word_error_rate(&["a", "b"], &["c"]).unwrap();
        assert_eq!((res.substitutions, res.deletions, res.insertions), (1, 1, 0));
    }

    #[test]
    fn tokenizer_normalizes() {
        assert_eq!(tokenize("  Hello, World!  \"Yes\"; no: ok?"), ["hello", "world", "yes", "no", "ok"]);
    }

    #[test]
    fn corpus_wer_pools_counts() {
        let a = word_error_rate(&["a", "b"], &["a"]).unwrap();
        let b = word_error_rate(&["c", "d", "e", "f"], &["c", "d", "e", "f"]).unwrap();
        let c = corpus_wer(&[a, b]).unwrap();
        assert!((c.wer - 1.0 / 6.0).abs() < 1e-15);
        assert!(corpus_wer(&[]).is_none());
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            g in prop::collection::vec(-5.0f64..5.0, 1..40),
            i in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let f = |x: &f64| (x * 0.7).exp() + 3.0;
            let tg: Vec<f64> = g.iter().map(f).collect();
            let ti: Vec<f64> = i.iter().map(f).collect();
            prop_assert!((eer(&g, &i) - eer(&tg, &ti)).abs() < 1e-12);
        }

        #[test]
        fn eer_in_unit_interval(
            g in prop::collection::vec(-1.0f64..1.0, 1..30),
            i in prop::collection::vec(-1.0f64..1.0, 1..30),
        ) {
            let e = eer(&g, &i);
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn wer_of_subsequence_is_at_most_one(
            r in prop::collection::vec(0u8..5, 1..30),
            mask in prop::collection::vec(any::<bool>(), 30),
        ) {
            let h: Vec<u8> = r.iter().zip(&mask).filter(|(_, k)| **k).map(|(t, _)| *t).collect();
            let res = word_error_rate(&r, &h).unwrap();
            prop_assert!(res.wer <= 1.0);
            prop_assert_eq!(res.insertions + res.substitutions + res.deletions, r.len() - h.len());
        }

        #[test]
        fn combined_loss_is_linear_in_gamma(l1 in 0.0f64..10.0, att in 0.0f64..10.0, sv in -5.0f64..5.0, gamma in -4.0f64..4.0) {
            let t = LossTerms { l_l1: l1, l_attention: att, l_sv: sv };
            let base = combined_loss(&t, &LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.0 }).unwrap();
            let one = combined_loss(&t, &LossWeights { alpha: 1.0, beta: 1.0, gamma }).unwrap() - base;
            let two = combined_loss(&t, &LossWeights { alpha: 1.0, beta: 1.0, gamma: 2.0 * gamma }).unwrap() - base;
            prop_assert!((two - 2.0 * one).abs() <= 1e-9 * (1.0 + base.abs()));
        }

        #[test]
        fn cs_loss_in_range(
            a in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 4), 1..8),
            signs in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 4), 8),
        ) {
            let synth: Vec<_> = a.iter().enumerate().map(|(i, v)| EmbeddingVector::new(i.to_string(), "s", v.clone())).collect();
            let nat: Vec<_> = a
                .iter()
                .zip(&signs)
                .enumerate()
                .map(|(i, (v, s))| EmbeddingVector::new(i.to_string(), "s", v.iter().zip(s).map(|(x, neg)| if *neg { -x } else { *x }).collect()))
                .collect();
            let l = batch_cs_loss(&synth, &nat).unwrap();
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&l));
            prop_assert!(batch_cs_loss(&synth, &synth).unwrap().abs() < 1e-12);
        }
    }
}
