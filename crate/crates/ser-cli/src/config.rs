//! TOML run configuration and its merge with command-line overrides.
//! Relative paths inside the file resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ser_core::corpus::{LabelMap, LabelTarget};
use ser_core::pipeline::FeatureMode;
use ser_core::training::TrainConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub feature_mode: Option<String>,
    pub embedder_weights: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub corpora: BTreeMap<String, CorpusSection>,
    pub labels: Option<LabelsSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub classes: Vec<String>,
    #[serde(default)]
    pub default_aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub corpus_aliases: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub fc_dims: [usize; 2],
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub attn_window: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            fc_dims: [256, 256],
            lstm_hidden: 100,
            lstm_layers: 2,
            attn_window: 5,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub standardize: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            clip_norm: d.clip_norm,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            standardize: d.standardize,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default)]
    pub corpora: Vec<SynthCorpusSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCorpusSection {
    pub name: String,
    /// Language code; "zh" and "en" select the built-in timbres.
    pub language: String,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub dev: usize,
    #[serde(default)]
    pub test: usize,
}

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub feature_mode: Option<String>,
    pub attn_window: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Fully resolved settings: config file merged with flag overrides.
#[derive(Debug)]
pub struct Settings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: FeatureMode,
    pub workers: usize,
    pub embedder_weights: Option<PathBuf>,
    /// `(corpus name, manifest path)` in name order.
    pub corpora: Vec<(String, PathBuf)>,
    pub label_map: LabelMap,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: Vec<SynthCorpusSection>,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_label_map(section: Option<&LabelsSection>) -> Result<LabelMap> {
    let Some(section) = section else {
        return Ok(LabelMap::four_class_default());
    };
    if section.classes.is_empty() {
        bail!("labels.classes must not be empty");
    }
    let class_refs: Vec<&str> = section.classes.iter().map(String::as_str).collect();
    let mut map = LabelMap::new(&class_refs);
    let target_of = |name: &str| -> LabelTarget {
        if name == "DROP" {
            LabelTarget::Drop
        } else {
            LabelTarget::Class(name.to_string())
        }
    };
    for (raw, target) in &section.default_aliases {
        map.add_default_alias(raw, target_of(target));
    }
    for (corpus, table) in &section.corpus_aliases {
        for (raw, target) in table {
            map.add_corpus_alias(corpus, raw, target_of(target));
        }
    }
    Ok(map)
}

pub fn load_settings(config_path: &Path, overrides: &Overrides) -> Result<Settings> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let config: RunConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", config_path.display()))?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));

    let mode_str = overrides
        .feature_mode
        .clone()
        .or(config.feature_mode)
        .unwrap_or_else(|| "llds+vggishs".to_string());
    let mode: FeatureMode = mode_str
        .parse()
        .map_err(|e| anyhow::anyhow!("{e} (expected llds, vggishs or llds+vggishs)"))?;

    let out_dir = overrides
        .out
        .clone()
        .or(config.out_dir)
        .unwrap_or_else(|| PathBuf::from("runs/default"));
    let out_dir = resolve_path(base, &out_dir);

    let mut model = config.model;
    if let Some(window) = overrides.attn_window {
        model.attn_window = window;
    }
    if model.attn_window.is_multiple_of(2) {
        bail!("attention window must be odd, got {}", model.attn_window);
    }

    let seed = overrides.seed.or(config.seed).unwrap_or(0);
    let train = TrainConfig {
        learning_rate: config.train.learning_rate,
        beta1: config.train.beta1,
        beta2: config.train.beta2,
        eps: config.train.eps,
        clip_norm: config.train.clip_norm,
        batch_size: config.train.batch_size,
        max_epochs: config.train.max_epochs,
        seed,
        standardize: config.train.standardize,
    };

    let corpora = config
        .corpora
        .iter()
        .map(|(name, c)| (name.clone(), resolve_path(base, &c.manifest)))
        .collect();

    Ok(Settings {
        seed,
        out_dir,
        mode,
        workers: overrides.workers.or(config.workers).unwrap_or(0),
        embedder_weights: config.embedder_weights.map(|p| resolve_path(base, &p)),
        corpora,
        label_map: build_label_map(config.labels.as_ref())?,
        model,
        train,
        synth: config.synth.corpora,
    })
}

impl Settings {
    pub fn class_names(&self) -> Vec<String> {
        self.label_map.classes().to_vec()
    }

    pub fn cache_path(&self, corpus: &str, split: ser_core::corpus::Split) -> PathBuf {
        self.out_dir
            .join("features")
            .join(format!("{corpus}.{}.{}.serf", split.as_str(), self.mode.as_str()))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.ntsr")
    }
}
