//! Manifest-driven dataset ingestion, cross-corpus label unification,
//! multi-lingual mixing, and the binary feature cache.
//!
//! Manifests are JSON-lines with fields `id`, `audio_path`, `corpus`,
//! `language`, `label`, `split`. Cache files (all integers little-endian):
//!
//! ```text
//! magic "SERF" | version u32 | entry count u32 | dim u32
//! per entry: id u16+utf8 | corpus u16+utf8 | language u16+utf8
//!            | label index u32 | n_frames u32 | f32 row-major frames
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Matrix;

const CACHE_MAGIC: &[u8; 4] = b"SERF";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate utterance id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("label {raw:?} from corpus {corpus:?} has no mapping")]
    UnmappedLabel { raw: String, corpus: String },
    #[error("bad magic, not a feature cache file")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    UnsupportedVersion(u32),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache file truncated mid-entry")]
    TruncatedFile,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dataset split, as written in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// One labeled recording in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: String,
    pub corpus: String,
    pub language: String,
    pub label: String,
    pub split: Split,
}

/// Reads a JSON-lines manifest, in file order. Blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
        if seen.insert(record.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Where a raw corpus label lands: a class name, or dropped from the subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelTarget {
    Class(String),
    Drop,
}

/// Ordered class set plus per-corpus alias tables. Resolution order for a raw
/// label: the corpus table, then the default table, then an identity match
/// against the class names.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
    default_aliases: HashMap<String, LabelTarget>,
    corpus_aliases: HashMap<String, HashMap<String, LabelTarget>>,
}

impl LabelMap {
    pub fn new(classes: &[&str]) -> Self {
        let classes: Vec<String> = classes.iter().map(|s| s.to_string()).collect();
        let class_index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self {
            classes,
            class_index,
            default_aliases: HashMap::new(),
            corpus_aliases: HashMap::new(),
        }
    }

    /// The four-emotion subset shared across the usual corpora, with aliases
    /// for common synonym labels and DROP entries for the classes outside it.
    pub fn four_class_default() -> Self {
        let mut map = Self::new(&["angry", "happy", "sad", "neutral"]);
        for (raw, class) in [
            ("anger", "angry"),
            ("happiness", "happy"),
            ("joy", "happy"),
            ("excited", "happy"),
            ("sadness", "sad"),
            ("neutral state", "neutral"),
            ("calm", "neutral"),
        ] {
            map.add_default_alias(raw, LabelTarget::Class(class.to_string()));
        }
        for dropped in [
            "surprise", "surprised", "fear", "fearful", "disgust", "disgusted", "worry",
            "worried", "anxiety", "anxious", "frustrated", "frustration", "bored", "boredom",
            "other",
        ] {
            map.add_default_alias(dropped, LabelTarget::Drop);
        }
        map
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_index.get(name).copied()
    }

    pub fn add_default_alias(&mut self, raw: &str, target: LabelTarget) {
        self.default_aliases.insert(raw.to_string(), target);
    }

    pub fn add_corpus_alias(&mut self, corpus: &str, raw: &str, target: LabelTarget) {
        self.corpus_aliases
            .entry(corpus.to_string())
            .or_default()
            .insert(raw.to_string(), target);
    }

    /// Resolves a raw label. `Ok(None)` means the record is dropped.
    pub fn resolve(&self, corpus: &str, raw: &str) -> Result<Option<usize>, CorpusError> {
        let target = self
            .corpus_aliases
            .get(corpus)
            .and_then(|t| t.get(raw))
            .or_else(|| self.default_aliases.get(raw));
        match target {
            Some(LabelTarget::Drop) => Ok(None),
            Some(LabelTarget::Class(name)) => {
                self.class_index(name).map(Some).ok_or_else(|| CorpusError::UnmappedLabel {
                    raw: raw.to_string(),
                    corpus: corpus.to_string(),
                })
            }
            None => self
                .class_index(raw)
                .map(Some)
                .ok_or_else(|| CorpusError::UnmappedLabel {
                    raw: raw.to_string(),
                    corpus: corpus.to_string(),
                }),
        }
    }
}

/// Tags records with class indices; records whose label resolves to DROP are
/// removed. Fails on the first label with no mapping at all.
pub fn unify_labels(
    records: &[UtteranceRecord],
    map: &LabelMap,
) -> Result<Vec<(UtteranceRecord, usize)>, CorpusError> {
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        if let Some(class) = map.resolve(&record.corpus, &record.label)? {
            out.push((record.clone(), class));
        }
    }
    Ok(out)
}

/// Concatenates the sets, then applies a seeded Fisher-Yates permutation.
/// Deterministic for a given seed.
pub fn merge_and_shuffle<T>(sets: Vec<Vec<T>>, seed: u64) -> Vec<T> {
    let mut merged: Vec<T> = sets.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..merged.len()).rev() {
        let j = rng.gen_range(0..=i);
        merged.swap(i, j);
    }
    merged
}

/// One utterance's cached features plus the metadata evaluation groups by.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCacheEntry {
    pub id: String,
    pub corpus: String,
    pub language: String,
    pub label_index: usize,
    pub features: Matrix,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    assert!(bytes.len() <= u16::MAX as usize, "string field too long");
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Writes a cache file. All entries must share one feature dimension.
pub fn write_feature_cache(
    entries: &[FeatureCacheEntry],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let dim = entries.first().map_or(0, |e| e.features.cols());
    for e in entries {
        if e.features.cols() != dim {
            return Err(CorpusError::DimensionMismatch {
                expected: dim,
                got: e.features.cols(),
            });
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in entries {
        write_str(&mut out, &e.id);
        write_str(&mut out, &e.corpus);
        write_str(&mut out, &e.language);
        out.extend_from_slice(&(e.label_index as u32).to_le_bytes());
        out.extend_from_slice(&(e.features.rows() as u32).to_le_bytes());
        for &v in e.features.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Vec<FeatureCacheEntry>, CorpusError> {
    parse_feature_cache(&fs::read(path)?)
}

pub fn parse_feature_cache(bytes: &[u8]) -> Result<Vec<FeatureCacheEntry>, CorpusError> {
    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], CorpusError> {
            if self.pos + n > self.bytes.len() {
                return Err(CorpusError::TruncatedFile);
            }
            let out = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(out)
        }
        fn u16(&mut self) -> Result<u16, CorpusError> {
            let b = self.take(2)?;
            Ok(u16::from_le_bytes([b[0], b[1]]))
        }
        fn u32(&mut self) -> Result<u32, CorpusError> {
            let b = self.take(4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }
        fn string(&mut self) -> Result<String, CorpusError> {
            let len = self.u16()? as usize;
            String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CorpusError::TruncatedFile)
        }
    }

    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).map_err(|_| CorpusError::BadMagic)? != CACHE_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let version = cur.u32()?;
    if version != CACHE_VERSION {
        return Err(CorpusError::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id = cur.string()?;
        let corpus = cur.string()?;
        let language = cur.string()?;
        let label_index = cur.u32()? as usize;
        let n_frames = cur.u32()? as usize;
        let bytes_needed = n_frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(CorpusError::TruncatedFile)?;
        let raw = cur.take(bytes_needed)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        entries.push(FeatureCacheEntry {
            id,
            corpus,
            language,
            label_index,
            features: Matrix::from_vec(n_frames, dim, data),
        });
    }
    Ok(entries)
}

/// Per-language record counts, handy for checking that mixing preserves them.
pub fn language_counts(records: &[UtteranceRecord]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for r in records {
        *counts.entry(r.language.clone()).or_insert(0) += 1;
    }
    counts
}
