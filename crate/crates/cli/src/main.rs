//! `spkraug`: batch pipeline for speaker-data augmentation and evaluation.
//!
//! Reports are JSON on stdout, progress goes to stderr. Exit status is 0 on
//! success, 1 on invalid input and 2 when some augmentation jobs failed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use spkraug::dataset::{self, Manifest, Recipe};
use spkraug::embedding::EmbeddingSet;
use spkraug::metrics::{self, LossTerms, LossWeights};
use spkraug::spectral::{self, StftParams};
use spkraug::tsne::{self, TsneConfig};
use spkraug::{audio, DEFAULT_SAMPLE_RATE};

#[derive(Parser, Debug)]
#[command(name = "spkraug", version, about = "Speaker-data augmentation and objective evaluation for multispeaker TTS")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (SPKRAUG_WORKERS takes precedence); defaults to the logical CPU count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic parallel corpus of WAV files plus its manifest.
    Synth {
        #[arg(long)]
        out_root: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 100)]
        per_speaker: u32,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
        sample_rate: u32,
        /// Manifest path (default: <out-root>/manifest.jsonl).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Select a per-speaker subset of natural utterances.
    Subset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        per_speaker: usize,
        /// Draw each speaker independently instead of sharing prompts.
        #[arg(long)]
        independent: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate augmented files for every natural utterance in a manifest.
    Augment {
        #[arg(value_enum)]
        recipe: RecipeArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        audio_root: PathBuf,
        /// Where augmented WAVs go (default: the audio root).
        #[arg(long)]
        out_root: Option<PathBuf>,
        /// Manifest of the augmented records.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stand-in speaker embeddings for one or more manifests.
    Embed {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        audio_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep each natural utterance plus its k nearest augmented children.
    SelectBest {
        #[arg(long)]
        naturals: PathBuf,
        #[arg(long)]
        augmented: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Space::Original)]
        space: Space,
        #[command(flatten)]
        tsne: TsneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Same-/different-speaker verification trials for evaluated utterances.
    Pairs {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Weighted composite loss.
    Loss {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long)]
        l1: f64,
        #[arg(long)]
        att: f64,
        #[arg(long, allow_negative_numbers = true)]
        sv: f64,
    },
    /// 2-D t-SNE layout of an embedding file.
    Tsne {
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        tsne: TsneArgs,
        /// Coordinates TSV: utterance_id, speaker_id, x, y.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Magnitude spectrogram of a WAV file in SPG1 format.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Griffin-Lim waveform from an SPG1 magnitude spectrogram.
    Vocode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = spectral::DEFAULT_GRIFFIN_LIM_ITERATIONS)]
        iterations: usize,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Equal error rate of a pair list.
    Eer {
        #[arg(long)]
        pairs: PathBuf,
        /// Scores missing pairs by cosine similarity; needed for --per-speaker.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        per_speaker: bool,
    },
    /// Batch cosine-similarity loss; synthesized ids are matched to natural
    /// ids directly or through their `<parent>__` prefix.
    Cs {
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        natural: PathBuf,
    },
    /// Word error rate of line-aligned transcripts.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct TsneArgs {
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
}

impl TsneArgs {
    fn config(&self, seed: u64) -> Result<TsneConfig> {
        let cfg = TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed,
            ..TsneConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum RecipeArg {
    Resample,
    PsolaDur,
    PsolaF0,
    PsolaMix,
}

impl From<RecipeArg> for Recipe {
    fn from(r: RecipeArg) -> Self {
        match r {
            RecipeArg::Resample => Recipe::UpDown,
            RecipeArg::PsolaDur => Recipe::PsolaDur,
            RecipeArg::PsolaF0 => Recipe::PsolaF0,
            RecipeArg::PsolaMix => Recipe::PsolaMix,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Space {
    Original,
    Tsne,
}

enum Status {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info })
        .parse_env("SPKRAUG_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn workers(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var("SPKRAUG_WORKERS") {
        let n: usize = v.trim().parse().with_context(|| format!("SPKRAUG_WORKERS={v:?} is not a count"))?;
        ensure!(n > 0, "SPKRAUG_WORKERS must be positive");
        return Ok(n);
    }
    match flag {
        Some(0) => bail!("--workers must be positive"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn report(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    EmbeddingSet::load(path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn run(cli: Cli) -> Result<Status> {
    let seed = cli.seed;
    let workers = workers(cli.workers)?;
    match cli.command {
        Command::Synth { out_root, speakers, per_speaker, sample_rate, manifest } => {
            ensure!(speakers >= 1 && per_speaker >= 1, "need at least one speaker and one utterance");
            ensure!(
                (audio::MIN_SAMPLE_RATE..=audio::MAX_SAMPLE_RATE).contains(&sample_rate),
                "sample rate {sample_rate} out of range"
            );
            log::info!("rendering {speakers} x {per_speaker} synthetic utterances");
            let m = dataset::synthesize_corpus(&out_root, speakers, per_speaker, seed, sample_rate, workers)?;
            let path = manifest.unwrap_or_else(|| out_root.join("manifest.jsonl"));
            m.save(&path)?;
            report(&json!({ "records": m.len(), "per_speaker": m.count_by_speaker() }))?;
        }
        Command::Subset { manifest, per_speaker, independent, out } => {
            ensure!(per_speaker >= 1, "--per-speaker must be positive");
            let m = load_manifest(&manifest)?;
            let s = dataset::select_subset(&m, per_speaker, seed, !independent)?;
            s.save(&out)?;
            report(&json!({ "records": s.len(), "parallel": !independent, "per_speaker": s.count_by_speaker() }))?;
        }
        Command::Augment { recipe, manifest, audio_root, out_root, out } => {
            let m = load_manifest(&manifest)?;
            let recipe = Recipe::from(recipe);
            let plan = dataset::plan_augmentation(&m, recipe)?;
            let out_root = out_root.unwrap_or_else(|| audio_root.clone());
            log::info!("{} jobs for {} natural utterances on {workers} workers", plan.len(), m.len());
            let r = dataset::execute_plan(&plan, &audio_root, &out_root, workers, &m.meta)?;
            r.manifest.save(&out)?;
            for f in &r.failures {
                log::warn!("{}: {}", f.utterance_id, f.error);
            }
            report(&json!({
                "jobs": plan.len(),
                "records": r.manifest.len(),
                "failed": r.failures.len(),
                "failures": r.failures,
            }))?;
            log::info!("{} written, {} already up to date", r.written, r.unchanged);
            if !r.failures.is_empty() {
                return Ok(Status::Partial);
            }
        }
        Command::Embed { manifests, audio_root, out } => {
            let mut merged: Option<Manifest> = None;
            for p in &manifests {
                let m = load_manifest(p)?;
                merged = Some(match merged {
                    None => m,
                    Some(acc) => acc.merged(&m)?,
                });
            }
            let m = merged.expect("clap requires one manifest");
            log::info!("embedding {} utterances", m.len());
            let set = dataset::embed_manifest(&m, &audio_root, workers)?;
            set.save(&out)?;
            report(&json!({ "embeddings": set.len(), "dimension": set.dimension() }))?;
        }
        Command::SelectBest { naturals, augmented, embeddings, k, space, tsne, out } => {
            let cfg = if space == Space::Tsne { Some(tsne.config(seed)?) } else { None };
            let nat = load_manifest(&naturals)?;
            let aug = load_manifest(&augmented)?;
            let mut set = load_embeddings(&embeddings)?;
            if let Some(cfg) = cfg {
                log::info!("projecting {} embeddings with t-SNE", set.len());
                set = tsne::project_set(&set, &cfg)?;
            }
            let best = dataset::select_best_augmented(&nat, &aug, &set, k)?;
            best.save(&out)?;
            report(&json!({ "records": best.len(), "k": k, "per_speaker": best.count_by_speaker() }))?;
        }
        Command::Pairs { eval, pool, out } => {
            let e = load_manifest(&eval)?;
            let p = load_manifest(&pool)?;
            let pairs = dataset::generate_eer_pairs(&e, &p, seed)?;
            write_text(&out, &metrics::pairs_to_tsv(&pairs))?;
            let genuine = pairs.iter().filter(|p| p.same_speaker).count();
            report(&json!({ "pairs": pairs.len(), "genuine": genuine, "impostor": pairs.len() - genuine }))?;
        }
        Command::Eval(cmd) => eval(cmd)?,
        Command::Loss { alpha, beta, gamma, l1, att, sv } => {
            let terms = LossTerms { l_l1: l1, l_attention: att, l_sv: sv };
            let weights = LossWeights { alpha, beta, gamma };
            let loss = metrics::combined_loss(&terms, &weights)?;
            report(&json!({ "loss": loss, "terms": terms, "weights": weights }))?;
        }
        Command::Tsne { embeddings, tsne, out, svg } => {
            let cfg = tsne.config(seed)?;
            ensure!(cfg.output_dim == 2, "plots are 2-D");
            let set = load_embeddings(&embeddings)?;
            log::info!("t-SNE on {} points", set.len());
            let y = tsne::run_tsne(&set, &cfg)?;
            let mut text = String::new();
            for (i, e) in set.iter().enumerate() {
                text.push_str(&format!("{}\t{}\t{}\t{}\n", e.utterance_id, e.speaker_id, y.get(i, 0), y.get(i, 1)));
            }
            write_text(&out, &text)?;
            if let Some(svg) = &svg {
                let labels: Vec<&str> = set.iter().map(|e| e.speaker_id.as_str()).collect();
                write_text(svg, &tsne::scatter_svg(&y, &labels))?;
            }
            report(&json!({ "points": set.len(), "perplexity": cfg.perplexity, "iterations": cfg.iterations }))?;
        }
        Command::Analyze { input, out } => {
            let clip = audio::read_wav(&input)?;
            let spec = spectral::magnitude_spectrogram(&clip, StftParams::vocoder_defaults(clip.sample_rate))?;
            spectral::save_spectrogram(&spec, &out)?;
            report(&json!({ "frames": spec.frames, "bins": spec.bins(), "sample_rate": spec.sample_rate }))?;
        }
        Command::Vocode { input, out, iterations } => {
            ensure!(iterations >= 1, "--iterations must be positive");
            let spec = spectral::load_spectrogram(&input)?;
            let r = spectral::griffin_lim_traced(&spec, iterations, seed)?;
            audio::write_wav(&r.clip, &out)?;
            report(&json!({
                "samples": r.clip.len(),
                "sample_rate": r.clip.sample_rate,
                "iterations": iterations,
                "initial_error": r.errors.first(),
                "final_error": r.errors.last(),
            }))?;
        }
    }
    Ok(Status::Done)
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Eer { pairs, embeddings, per_speaker } => {
            ensure!(!per_speaker || embeddings.is_some(), "--per-speaker needs --embeddings for speaker labels");
            let text = fs::read_to_string(&pairs).with_context(|| format!("reading {}", pairs.display()))?;
            let mut list = metrics::pairs_from_tsv(&text)?;
            let set = embeddings.as_deref().map(load_embeddings).transpose()?;
            if let Some(set) = &set {
                metrics::score_pairs(&mut list, set)?;
            }
            let r = metrics::equal_error_rate(&list)?;
            let mut out = json!({ "eer": r.eer, "threshold": r.threshold, "genuine": r.genuine, "impostor": r.impostor });
            if let (true, Some(set)) = (per_speaker, &set) {
                let by = metrics::per_speaker_eer(&list, |id| set.get(id).map(|e| e.speaker_id.as_str()))?;
                let by: BTreeMap<&String, f64> = by.iter().map(|(s, r)| (s, r.eer)).collect();
                out["per_speaker"] = json!(by);
            }
            report(&out)?;
        }
        EvalCommand::Cs { synth, natural } => {
            let s = load_embeddings(&synth)?;
            let n = load_embeddings(&natural)?;
            let mut xs = Vec::new();
            let mut ns = Vec::new();
            for e in &s {
                let target = n
                    .get(&e.utterance_id)
                    .or_else(|| e.utterance_id.split_once("__").and_then(|(p, _)| n.get(p)))
                    .with_context(|| format!("no natural counterpart for {}", e.utterance_id))?;
                xs.push(e.clone());
                ns.push(target.clone());
            }
            let loss = metrics::batch_cs_loss(&xs, &ns)?;
            report(&json!({ "cs_loss": loss, "mean_cosine": 1.0 - loss, "pairs": xs.len() }))?;
        }
        EvalCommand::Wer { reference, hyp } => {
            let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            let refs = read(&reference)?;
            let hyps = read(&hyp)?;
            let refs: Vec<&str> = refs.lines().collect();
            let hyps: Vec<&str> = hyps.lines().collect();
            ensure!(refs.len() == hyps.len(), "{} reference lines but {} hypothesis lines", refs.len(), hyps.len());
            let results = refs
                .iter()
                .zip(&hyps)
                .enumerate()
                .map(|(i, (r, h))| {
                    metrics::word_error_rate(&metrics::tokenize(r), &metrics::tokenize(h))
                        .with_context(|| format!("line {}", i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            let total = metrics::corpus_wer(&results).context("no transcripts")?;
            report(&json!({
                "wer": total.wer,
                "substitutions": total.substitutions,
                "deletions": total.deletions,
                "insertions": total.insertions,
                "reference_words": total.reference_words,
                "utterances": results.len(),
            }))?;
        }
    }
    Ok(())
}
