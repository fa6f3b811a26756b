//! Corpus-engineering toolkit for multispeaker TTS training data.
//!
//! The crate turns a manifest of mono speech recordings into augmented
//! training sets (speed change and TD-PSOLA duration/F0 modification), picks
//! the augmented samples that stay closest to their natural source in speaker
//! embedding space, and computes the objective scores used to compare
//! systems: equal error rate, batch cosine-similarity loss, the weighted
//! composite training loss and word error rate. Exact t-SNE and Griffin-Lim
//! phase reconstruction are included for visualization and waveform rendering.

pub mod audio;
pub mod dataset;
pub mod embedding;
pub mod metrics;
pub mod psola;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod tsne;

pub use audio::{AudioClip, AudioError, DEFAULT_SAMPLE_RATE};
pub use dataset::{DatasetError, Kind, Manifest, Recipe, UtteranceRecord};
pub use embedding::{EmbeddingError, EmbeddingSet, EmbeddingVector};
pub use metrics::{LossTerms, LossWeights, MetricsError, ScoredPair};


