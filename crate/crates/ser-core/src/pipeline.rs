//! End-to-end feature extraction: resample, trim endpoints, then emit frames
//! in one of the three feature modes. Batch extraction fans out across a
//! rayon pool and collects per-utterance failures instead of aborting.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{self, AudioClip, CANONICAL_RATE_HZ};
use crate::corpus::{FeatureCacheEntry, UtteranceRecord};
use crate::embed::{self, EMBEDDING_DIM};
use crate::fusion;
use crate::lld::{self, LLD_DIM};
use crate::mat::Matrix;
use crate::preprocess;
use crate::tensor::NamedTensorStore;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Feature(#[from] lld::FeatureError),
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error("feature mode {0:?} needs embedder weights")]
    MissingWeights(String),
    #[error("unknown feature mode {0:?}")]
    UnknownMode(String),
}

/// The three feature combinations compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Llds,
    Vggishs,
    LldsVggishs,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Llds => "llds",
            FeatureMode::Vggishs => "vggishs",
            FeatureMode::LldsVggishs => "llds+vggishs",
        }
    }

    /// Frame width this mode produces.
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::Llds => LLD_DIM,
            FeatureMode::Vggishs => EMBEDDING_DIM,
            FeatureMode::LldsVggishs => LLD_DIM + EMBEDDING_DIM,
        }
    }

    pub fn needs_embedder(self) -> bool {
        !matches!(self, FeatureMode::Llds)
    }
}

impl FromStr for FeatureMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llds" => Ok(FeatureMode::Llds),
            "vggishs" => Ok(FeatureMode::Vggishs),
            "llds+vggishs" => Ok(FeatureMode::LldsVggishs),
            other => Err(PipelineError::UnknownMode(other.to_string())),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Features for one clip: canonical-rate resampling, endpoint trimming, then
/// the mode's frame matrix. All three modes share the 24-rows-per-patch
/// geometry, so caches are interchangeable up to frame width.
pub fn extract_utterance_features(
    clip: &AudioClip,
    mode: FeatureMode,
    weights: Option<&NamedTensorStore>,
) -> Result<Matrix, PipelineError> {
    let clip = audio::resample(clip, CANONICAL_RATE_HZ);
    let trimmed = preprocess::detect_endpoints(&clip);
    if trimmed.no_speech {
        log::debug!("no speech frames found; keeping the whole clip");
    }
    let clip = trimmed.clip;

    match mode {
        FeatureMode::Llds => {
            let llds = lld::extract_lld_sequence(&clip)?;
            Ok(fusion::subsample_llds(&llds))
        }
        FeatureMode::Vggishs => {
            let weights =
                weights.ok_or_else(|| PipelineError::MissingWeights(mode.as_str().into()))?;
            let embs = embed::extract_embedding_sequence(&clip, weights)?;
            Ok(fusion::replicate_embeddings(&embs))
        }
        FeatureMode::LldsVggishs => {
            let weights =
                weights.ok_or_else(|| PipelineError::MissingWeights(mode.as_str().into()))?;
            let llds = lld::extract_lld_sequence(&clip)?;
            let embs = embed::extract_embedding_sequence(&clip, weights)?;
            Ok(fusion::fuse_utterance(&llds, &embs)?.into_matrix())
        }
    }
}

/// Result of a batch extraction: entries in input order plus the failures,
/// each as `(utterance id, error message)`.
#[derive(Debug)]
pub struct ExtractionOutcome {
    pub entries: Vec<FeatureCacheEntry>,
    pub failures: Vec<(String, String)>,
}

/// Extracts features for labeled records, reading each `audio_path` from
/// disk (relative paths resolve against `audio_root` when given). Runs on a
/// rayon pool sized by `workers` (0 = default); output order follows input
/// order regardless of scheduling.
pub fn extract_records(
    records: &[(UtteranceRecord, usize)],
    mode: FeatureMode,
    weights: Option<&NamedTensorStore>,
    audio_root: Option<&Path>,
    workers: usize,
) -> ExtractionOutcome {
    let run = || -> Vec<Result<FeatureCacheEntry, (String, String)>> {
        records
            .par_iter()
            .map(|(record, label)| {
                let path = match audio_root {
                    Some(root) if !Path::new(&record.audio_path).is_absolute() => {
                        root.join(&record.audio_path)
                    }
                    _ => Path::new(&record.audio_path).to_path_buf(),
                };
                let result = audio::load_wav(&path)
                    .map_err(PipelineError::from)
                    .and_then(|clip| extract_utterance_features(&clip, mode, weights));
                match result {
                    Ok(features) => Ok(FeatureCacheEntry {
                        id: record.id.clone(),
                        corpus: record.corpus.clone(),
                        language: record.language.clone(),
                        label_index: *label,
                        features,
                    }),
                    Err(e) => Err((record.id.clone(), e.to_string())),
                }
            })
            .collect()
    };

    let results = if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("rayon pool")
            .install(run)
    } else {
        run()
    };

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(f) => failures.push(f),
        }
    }
    ExtractionOutcome { entries, failures }
}

/// In-memory extraction for synthesized corpora: no disk, same pipeline.
pub fn extract_synthetic(
    records: &[UtteranceRecord],
    language: &crate::synth::SynthLanguage,
    options: &crate::synth::SynthOptions,
    mode: FeatureMode,
    weights: Option<&NamedTensorStore>,
    seed: u64,
) -> Result<Vec<FeatureCacheEntry>, PipelineError> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let clip = crate::synth::synth_clip(
                crate::synth::class_of(record),
                language,
                options,
                crate::synth::utterance_seed(seed, i as u64),
            );
            let features = extract_utterance_features(&clip, mode, weights)?;
            Ok(FeatureCacheEntry {
                id: record.id.clone(),
                corpus: record.corpus.clone(),
                language: record.language.clone(),
                label_index: crate::synth::class_of(record),
                features,
            })
        })
        .collect()
}
