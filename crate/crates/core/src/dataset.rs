//! Corpus manifests, subset selection, augmentation planning and
//! execution, best-k selection and verification pair lists.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError};
use crate::embedding::{self, EmbeddingError, EmbeddingSet, EmbeddingVector};
use crate::metrics::ScoredPair;
use crate::psola::{PitchConfig, PsolaAnalysis, PsolaError};
use crate::rng;
use crate::synth::{self, Voice};

pub const MANIFEST_FORMAT: &str = "spkraug-manifest/1";

pub const UP_DOWN_RATIOS: [f64; 4] = [0.95, 0.975, 1.025, 1.05];
pub const PSOLA_DURATION_RATIOS: [f64; 7] = [0.85, 0.90, 0.95, 1.05, 1.10, 1.15, 1.20];
pub const PSOLA_F0_RATIOS: [f64; 7] = [0.70, 0.80, 0.90, 1.05, 1.10, 1.20, 1.50];
pub const PSOLA_MIX_DURATION_RATIOS: [f64; 2] = [1.3, 0.8];
pub const PSOLA_MIX_F0_RATIOS: [f64; 2] = [0.8, 1.2];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("speaker {speaker} has {available} usable utterances, {needed} requested")]
    InsufficientUtterances { speaker: String, needed: usize, available: usize },
    #[error("utterance id {0} does not end in an utterance number")]
    MissingUtteranceNumber(String),
    #[error("record {0} is not natural speech")]
    NonNaturalInput(String),
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("{parent}: k = {k} but only {available} augmented children")]
    KTooLarge { parent: String, k: usize, available: usize },
    #[error("insufficient natural pool: {0}")]
    InsufficientPool(String),
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("record {id} references unknown parent {parent}")]
    MissingParent { id: String, parent: String },
    #[error("invalid record {id}: {msg}")]
    InvalidRecord { id: String, msg: String },
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Psola(#[from] PsolaError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Natural,
    Resampled,
    PsolaDur,
    PsolaF0,
    PsolaMix,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Natural => "natural",
            Kind::Resampled => "resampled",
            Kind::PsolaDur => "psola_dur",
            Kind::PsolaF0 => "psola_f0",
            Kind::PsolaMix => "psola_mix",
        })
    }
}

/// One manifest line. For `resampled` records both ratios hold the speed
/// ratio `r`: the file lasts `1/r` of its parent and its pitch is scaled
/// by `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    /// Relative to the audio root.
    pub path: PathBuf,
    pub kind: Kind,
    pub duration_ratio: f64,
    pub f0_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl UtteranceRecord {
    pub fn natural(utterance_id: impl Into<String>, speaker_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            path: path.into(),
            kind: Kind::Natural,
            duration_ratio: 1.0,
            f0_ratio: 1.0,
            parent_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidRecord { id: self.utterance_id.clone(), msg: msg.into() });
        if self.utterance_id.is_empty() || self.speaker_id.is_empty() {
            return bad("empty id");
        }
        if self.utterance_id.contains(['\t', '\n']) || self.speaker_id.contains(['\t', '\n']) {
            return bad("ids may not contain tabs or newlines");
        }
        if !(self.duration_ratio.is_finite() && self.duration_ratio > 0.0 && self.f0_ratio.is_finite() && self.f0_ratio > 0.0)
        {
            return bad("ratios must be positive and finite");
        }
        let unit = self.duration_ratio == 1.0 && self.f0_ratio == 1.0;
        match (self.kind == Kind::Natural, unit, self.parent_id.is_some()) {
            (true, true, false) | (false, false, true) => Ok(()),
            (true, ..) => bad("natural records have unit ratios and no parent"),
            (false, _, false) => bad("augmented records need a parent"),
            (false, true, true) => bad("augmented record with unit ratios"),
        }
    }

    /// Trailing decimal digits of the utterance id.
    pub fn utterance_number(&self) -> Option<u64> {
        let id = &self.utterance_id;
        let start = id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        id[start..].parse().ok()
    }

    /// Expected duration relative to the parent.
    pub fn expected_length_ratio(&self) -> f64 {
        match self.kind {
            Kind::Resampled => 1.0 / self.duration_ratio,
            _ => self.duration_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub format: String,
    pub corpus: String,
    pub sample_rate: u32,
}

/// Records with unique ids. A manifest of augmented files may reference
/// parents kept in a separate naturals manifest; [`Manifest::check_parents`]
/// verifies the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub meta: ManifestMeta,
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(corpus: impl Into<String>, sample_rate: u32, records: Vec<UtteranceRecord>) -> Result<Self, DatasetError> {
        let meta = ManifestMeta { format: MANIFEST_FORMAT.to_string(), corpus: corpus.into(), sample_rate };
        Self::with_meta(meta, records)
    }

    pub fn with_meta(meta: ManifestMeta, records: Vec<UtteranceRecord>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(DatasetError::DuplicateId(r.utterance_id.clone()));
            }
        }
        Ok(Self { meta, records })
    }

    pub fn empty_like(&self) -> Self {
        Self { meta: self.meta.clone(), records: Vec::new() }
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn naturals(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(|r| r.kind == Kind::Natural)
    }

    /// Speakers in first-appearance order.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records.iter().map(|r| r.speaker_id.as_str()).filter(|s| seen.insert(*s)).collect()
    }

    pub fn count_by_speaker(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.speaker_id.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Every parent id must name a natural record here or in `naturals`.
    pub fn check_parents(&self, naturals: Option<&Manifest>) -> Result<(), DatasetError> {
        let mut known: HashSet<&str> = self.naturals().map(|r| r.utterance_id.as_str()).collect();
        if let Some(n) = naturals {
            known.extend(n.naturals().map(|r| r.utterance_id.as_str()));
        }
        for r in &self.records {
            if let Some(p) = &r.parent_id {
                if !known.contains(p.as_str()) {
                    return Err(DatasetError::MissingParent { id: r.utterance_id.clone(), parent: p.clone() });
                }
            }
        }
        Ok(())
    }

    /// Concatenation; ids must stay unique.
    pub fn merged(&self, other: &Manifest) -> Result<Manifest, DatasetError> {
        let records = self.records.iter().chain(&other.records).cloned().collect();
        Self::with_meta(self.meta.clone(), records)
    }

    /// JSON lines: a metadata object, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("metadata serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(DatasetError::Parse { line: 1, msg: "empty manifest".into() })?;
        let meta: ManifestMeta =
            serde_json::from_str(head).map_err(|e| DatasetError::Parse { line: 1, msg: e.to_string() })?;
        if meta.format != MANIFEST_FORMAT {
            return Err(DatasetError::Parse { line: 1, msg: format!("unknown format {:?}", meta.format) });
        }
        let records = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| DatasetError::Parse { line: n + 1, msg: e.to_string() }))
            .collect::<Result<Vec<UtteranceRecord>, _>>()?;
        Self::with_meta(meta, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_if_changed(path.as_ref(), self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Picks `per_speaker` natural utterances per speaker. With `parallel`,
/// one draw of utterance numbers (from those every speaker has) is shared
/// by all speakers; otherwise each speaker draws independently. Output
/// keeps manifest order.
pub fn select_subset(manifest: &Manifest, per_speaker: usize, seed: u64, parallel: bool) -> Result<Manifest, DatasetError> {
    if let Some(r) = manifest.records.iter().find(|r| r.kind != Kind::Natural) {
        return Err(DatasetError::NonNaturalInput(r.utterance_id.clone()));
    }
    let speakers = manifest.speakers();
    let keep: HashSet<&str> = if parallel {
        let mut numbers: Option<BTreeSet<u64>> = None;
        let mut per_spk: HashMap<&str, BTreeMap<u64, &str>> = HashMap::new();
        for r in &manifest.records {
            let n = r.utterance_number().ok_or_else(|| DatasetError::MissingUtteranceNumber(r.utterance_id.clone()))?;
            per_spk.entry(r.speaker_id.as_str()).or_default().insert(n, r.utterance_id.as_str());
        }
        for s in &speakers {
            let mine: BTreeSet<u64> = per_spk[s].keys().copied().collect();
            numbers = Some(match numbers {
                None => mine,
                Some(acc) => acc.intersection(&mine).copied().collect(),
            });
        }
        let shared: Vec<u64> = numbers.unwrap_or_default().into_iter().collect();
        if shared.len() < per_speaker {
            return Err(DatasetError::InsufficientUtterances {
                speaker: "(shared across speakers)".into(),
                needed: per_speaker,
                available: shared.len(),
            });
        }
        let mut rng = rng::stream(seed, "subset/parallel");
        let chosen: Vec<u64> = index::sample(&mut rng, shared.len(), per_speaker).into_iter().map(|i| shared[i]).collect();
        speakers.iter().flat_map(|s| chosen.iter().map(|n| per_spk[s][n])).collect()
    } else {
        let mut keep = HashSet::new();
        for s in &speakers {
            let ids: Vec<&str> =
                manifest.records.iter().filter(|r| r.speaker_id == *s).map(|r| r.utterance_id.as_str()).collect();
            if ids.len() < per_speaker {
                return Err(DatasetError::InsufficientUtterances {
                    speaker: s.to_string(),
                    needed: per_speaker,
                    available: ids.len(),
                });
            }
            let mut rng = rng::stream(seed, &format!("subset/speaker/{s}"));
            keep.extend(index::sample(&mut rng, ids.len(), per_speaker).into_iter().map(|i| ids[i]));
        }
        keep
    };
    let records = manifest.records.iter().filter(|r| keep.contains(r.utterance_id.as_str())).cloned().collect();
    Manifest::with_meta(manifest.meta.clone(), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    UpDown,
    PsolaDur,
    PsolaF0,
    PsolaMix,
}

impl Recipe {
    /// Augmented files kept per natural utterance in the final data set.
    pub fn kept_per_natural(self) -> usize {
        4
    }

    /// Whether the planned children must be thinned by best-k selection.
    pub fn needs_selection(self) -> bool {
        matches!(self, Recipe::PsolaDur | Recipe::PsolaF0)
    }

    /// (kind, duration ratio, F0 ratio) per job.
    pub fn jobs(self) -> Vec<(Kind, f64, f64)> {
        match self {
            Recipe::UpDown => UP_DOWN_RATIOS.iter().map(|&r| (Kind::Resampled, r, r)).collect(),
            Recipe::PsolaDur => PSOLA_DURATION_RATIOS.iter().map(|&d| (Kind::PsolaDur, d, 1.0)).collect(),
            Recipe::PsolaF0 => PSOLA_F0_RATIOS.iter().map(|&f| (Kind::PsolaF0, 1.0, f)).collect(),
            Recipe::PsolaMix => PSOLA_MIX_DURATION_RATIOS
                .iter()
                .map(|&d| (Kind::PsolaMix, d, 1.0))
                .chain(PSOLA_MIX_F0_RATIOS.iter().map(|&f| (Kind::PsolaMix, 1.0, f)))
                .collect(),
        }
    }
}

/// One file to produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub parent: UtteranceRecord,
    pub kind: Kind,
    pub duration_ratio: f64,
    pub f0_ratio: f64,
}

impl Job {
    pub fn utterance_id(&self) -> String {
        format!("{}__{}_{:.3}_{:.3}", self.parent.utterance_id, self.kind, self.duration_ratio, self.f0_ratio)
    }

    pub fn record(&self) -> UtteranceRecord {
        let id = self.utterance_id();
        UtteranceRecord {
            path: PathBuf::from(&self.parent.speaker_id).join(format!("{id}.wav")),
            utterance_id: id,
            speaker_id: self.parent.speaker_id.clone(),
            kind: self.kind,
            duration_ratio: self.duration_ratio,
            f0_ratio: self.f0_ratio,
            parent_id: Some(self.parent.utterance_id.clone()),
        }
    }
}

pub fn plan_augmentation(manifest: &Manifest, recipe: Recipe) -> Result<Vec<Job>, DatasetError> {
    let template = recipe.jobs();
    let mut plan = Vec::with_capacity(manifest.len() * template.len());
    for r in &manifest.records {
        if r.kind != Kind::Natural {
            return Err(DatasetError::NonNaturalInput(r.utterance_id.clone()));
        }
        plan.extend(template.iter().map(|&(kind, duration_ratio, f0_ratio)| Job {
            parent: r.clone(),
            kind,
            duration_ratio,
            f0_ratio,
        }));
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobFailure {
    pub utterance_id: String,
    pub parent_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExecutionReport {
    /// Records of the files that exist after the run, in plan order.
    pub manifest: Manifest,
    pub written: usize,
    pub unchanged: usize,
    pub failures: Vec<JobFailure>,
}

enum Outcome {
    Written(UtteranceRecord),
    Unchanged(UtteranceRecord),
    Failed(JobFailure),
}

/// Writes `bytes` unless the file already holds exactly them. Returns
/// whether anything was written.
fn write_if_changed(path: &Path, bytes: &[u8]) -> io::Result<bool> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(true)
}

fn render_group(jobs: &[&Job], audio_root: &Path, out_root: &Path, pitch: &PitchConfig) -> Vec<Outcome> {
    let parent = &jobs[0].parent;
    let fail_all = |e: String| {
        jobs.iter()
            .map(|j| {
                Outcome::Failed(JobFailure {
                    utterance_id: j.utterance_id(),
                    parent_id: parent.utterance_id.clone(),
                    error: e.clone(),
                })
            })
            .collect()
    };
    let clip = match audio::read_wav(audio_root.join(&parent.path)) {
        Ok(c) => c,
        Err(e) => return fail_all(e.to_string()),
    };
    let mut analysis: Option<Result<PsolaAnalysis, PsolaError>> = None;
    jobs.iter()
        .map(|job| {
            let rendered: Result<AudioClip, DatasetError> = match job.kind {
                Kind::Resampled => audio::speed_change(&clip, job.duration_ratio).map_err(Into::into),
                Kind::Natural => Err(DatasetError::NonNaturalInput(job.utterance_id())),
                _ => match analysis.get_or_insert_with(|| PsolaAnalysis::new(&clip, pitch)) {
                    Ok(a) => a.render(job.duration_ratio, job.f0_ratio).map_err(Into::into),
                    Err(e) => Err(e.clone().into()),
                },
            };
            let record = job.record();
            let result = rendered
                .and_then(|c| Ok(audio::encode_wav(&c)?))
                .and_then(|bytes| Ok(write_if_changed(&out_root.join(&record.path), &bytes)?));
            match result {
                Ok(true) => Outcome::Written(record),
                Ok(false) => Outcome::Unchanged(record),
                Err(e) => Outcome::Failed(JobFailure {
                    utterance_id: record.utterance_id,
                    parent_id: parent.utterance_id.clone(),
                    error: e.to_string(),
                }),
            }
        })
        .collect()
}

/// Runs `plan` on `workers` threads. Jobs sharing a parent run together so
/// the parent is decoded and pitch-analysed once. Parents are read from
/// `audio_root`, outputs written under `out_root`. Per-job failures are
/// collected rather than aborting the run.
pub fn execute_plan(
    plan: &[Job],
    audio_root: &Path,
    out_root: &Path,
    workers: usize,
    meta: &ManifestMeta,
) -> Result<ExecutionReport, DatasetError> {
    let mut groups: Vec<Vec<&Job>> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for job in plan {
        let i = *slot.entry(job.parent.utterance_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[i].push(job);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatasetError::Pool(e.to_string()))?;
    let pitch = PitchConfig::default();
    let outcomes: Vec<Vec<Outcome>> =
        pool.install(|| groups.par_iter().map(|g| render_group(g, audio_root, out_root, &pitch)).collect());

    // reassemble in plan order
    let mut by_id: HashMap<String, Outcome> = HashMap::new();
    for o in outcomes.into_iter().flatten() {
        let id = match &o {
            Outcome::Written(r) | Outcome::Unchanged(r) => r.utterance_id.clone(),
            Outcome::Failed(f) => f.utterance_id.clone(),
        };
        by_id.insert(id, o);
    }
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    let (mut written, mut unchanged) = (0, 0);
    for job in plan {
        match by_id.remove(&job.utterance_id()) {
            Some(Outcome::Written(r)) => {
                written += 1;
                records.push(r);
            }
            Some(Outcome::Unchanged(r)) => {
                unchanged += 1;
                records.push(r);
            }
            Some(Outcome::Failed(f)) => failures.push(f),
            // duplicate job in the plan, already accounted for
            None => {}
        }
    }
    log::info!("augmentation: {written} written, {unchanged} unchanged, {} failed", failures.len());
    Ok(ExecutionReport { manifest: Manifest::with_meta(meta.clone(), records)?, written, unchanged, failures })
}

/// Stand-in embeddings for every record, in manifest order.
pub fn embed_manifest(manifest: &Manifest, audio_root: &Path, workers: usize) -> Result<EmbeddingSet, DatasetError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatasetError::Pool(e.to_string()))?;
    let vectors: Vec<Result<EmbeddingVector, DatasetError>> = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let clip = audio::read_wav(audio_root.join(&r.path))?;
                let values = embedding::extract_standin_embedding(&clip)?;
                Ok(EmbeddingVector::new(r.utterance_id.clone(), r.speaker_id.clone(), values))
            })
            .collect()
    });
    Ok(EmbeddingSet::new(vectors.into_iter().collect::<Result<_, _>>()?)?)
}

/// Every natural record followed by its `k` augmented children nearest
/// to it (Euclidean) in `embeddings`.
pub fn select_best_augmented(
    naturals: &Manifest,
    augmented: &Manifest,
    embeddings: &EmbeddingSet,
    k: usize,
) -> Result<Manifest, DatasetError> {
    augmented.check_parents(Some(naturals))?;
    let mut children: HashMap<&str, Vec<&UtteranceRecord>> = HashMap::new();
    for r in augmented.records.iter().filter(|r| r.kind != Kind::Natural) {
        children.entry(r.parent_id.as_deref().expect("validated")).or_default().push(r);
    }
    let lookup = |id: &str| embeddings.get(id).ok_or_else(|| DatasetError::MissingEmbedding(id.to_string()));
    let mut out = Vec::new();
    for nat in naturals.records.iter().filter(|r| r.kind == Kind::Natural) {
        let query = lookup(&nat.utterance_id)?;
        let kids = children.get(nat.utterance_id.as_str()).map(Vec::as_slice).unwrap_or_default();
        if k > kids.len() {
            return Err(DatasetError::KTooLarge { parent: nat.utterance_id.clone(), k, available: kids.len() });
        }
        out.push(nat.clone());
        if k == 0 {
            continue;
        }
        let candidates = kids.iter().map(|c| lookup(&c.utterance_id)).collect::<Result<Vec<_>, _>>()?;
        let picked = embedding::select_k_nearest(query, candidates, k)?;
        let by_id: HashMap<&str, &UtteranceRecord> = kids.iter().map(|c| (c.utterance_id.as_str(), *c)).collect();
        out.extend(picked.iter().map(|id| by_id[id.as_str()].clone()));
    }
    Manifest::with_meta(naturals.meta.clone(), out)
}

/// Two unscored trials per evaluated utterance: a natural of the same
/// speaker (never the utterance itself) and a natural of a uniformly drawn
/// other speaker.
pub fn generate_eer_pairs(eval: &Manifest, pool: &Manifest, seed: u64) -> Result<Vec<ScoredPair>, DatasetError> {
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in pool.naturals() {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r.utterance_id.as_str());
    }
    if by_speaker.len() < 2 {
        return Err(DatasetError::InsufficientPool(format!("{} speaker(s) with natural speech, need 2", by_speaker.len())));
    }
    let speakers: Vec<&str> = by_speaker.keys().copied().collect();
    let mut rng = rng::stream(seed, "eer-pairs");
    let mut pairs = Vec::with_capacity(2 * eval.len());
    for r in &eval.records {
        let own: Vec<&str> = by_speaker
            .get(r.speaker_id.as_str())
            .map(|v| v.iter().copied().filter(|id| *id != r.utterance_id).collect())
            .unwrap_or_default();
        if own.is_empty() {
            return Err(DatasetError::InsufficientPool(format!("no natural reference for speaker {}", r.speaker_id)));
        }
        let same = own[rng.random_range(0..own.len())];
        let others: Vec<&str> = speakers.iter().copied().filter(|s| *s != r.speaker_id).collect();
        let other = others[rng.random_range(0..others.len())];
        let cands = &by_speaker[other];
        let diff = cands[rng.random_range(0..cands.len())];
        pairs.push(ScoredPair::new(same, r.utterance_id.clone(), true, None));
        pairs.push(ScoredPair::new(diff, r.utterance_id.clone(), false, None));
    }
    Ok(pairs)
}

/// Renders a synthetic parallel corpus under `root`: `speakers` voices ×
/// `per_speaker` utterances, ids `<speaker>_<number>`.
pub fn synthesize_corpus(
    root: &Path,
    speakers: usize,
    per_speaker: u32,
    seed: u64,
    sample_rate: u32,
    workers: usize,
) -> Result<Manifest, DatasetError> {
    let voices = Voice::panel(speakers);
    let jobs: Vec<(&Voice, u32)> = voices.iter().flat_map(|v| (1..=per_speaker).map(move |n| (v, n))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatasetError::Pool(e.to_string()))?;
    let records: Vec<Result<UtteranceRecord, DatasetError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(v, n)| {
                let id = format!("{}_{n:04}", v.name);
                let rec = UtteranceRecord::natural(&id, &v.name, PathBuf::from(&v.name).join(format!("{id}.wav")));
                let clip = synth::render_utterance(v, *n, seed, sample_rate);
                write_if_changed(&root.join(&rec.path), &audio::encode_wav(&clip)?)?;
                Ok(rec)
            })
            .collect()
    });
    Manifest::new("synthetic", sample_rate, records.into_iter().collect::<Result<_, _>>()?)
}
