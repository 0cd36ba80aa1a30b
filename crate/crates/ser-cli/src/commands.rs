//! The five subcommands: synth, extract, train, eval, predict.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use ser_core::corpus::{self, FeatureCacheEntry, Split, UtteranceRecord};
use ser_core::eval;
use ser_core::model::{Checkpoint, ModelConfig};
use ser_core::pipeline;
use ser_core::synth::{SplitSizes, SynthLanguage, SynthOptions};
use ser_core::tensor::NamedTensorStore;
use ser_core::training;

use crate::config::Settings;
use crate::CliError;

fn data(e: anyhow::Error) -> CliError {
    CliError::Data(e)
}

fn numeric(e: anyhow::Error) -> CliError {
    CliError::Numeric(e)
}

fn timbre_of(language: &str) -> Result<SynthLanguage> {
    match language {
        "zh" => Ok(SynthLanguage::mandarin_like()),
        "en" => Ok(SynthLanguage::english_like()),
        other => bail!("no built-in timbre for language {other:?} (use \"zh\" or \"en\")"),
    }
}

/// Generates the configured synthetic corpora: WAV files plus manifests
/// under `<out>/data/<name>/`.
pub fn cmd_synth(settings: &Settings) -> Result<(), CliError> {
    if settings.synth.is_empty() {
        return Err(CliError::Usage(anyhow!(
            "config has no [[synth.corpora]] entries"
        )));
    }
    let data_dir = settings.out_dir.join("data");
    for (i, c) in settings.synth.iter().enumerate() {
        let lang = timbre_of(&c.language).map_err(data)?;
        let sizes = SplitSizes {
            train: c.train,
            dev: c.dev,
            test: c.test,
        };
        let manifest = ser_core::synth::write_corpus(
            &data_dir,
            &c.name,
            &lang,
            sizes,
            &SynthOptions::default(),
            settings.seed.wrapping_add(i as u64),
        )
        .with_context(|| format!("writing corpus {}", c.name))
        .map_err(data)?;
        println!(
            "synth {}: {} train / {} dev / {} test -> {}",
            c.name,
            c.train,
            c.dev,
            c.test,
            manifest.display()
        );
    }
    Ok(())
}

fn load_embedder(settings: &Settings) -> Result<Option<NamedTensorStore>, CliError> {
    if !settings.mode.needs_embedder() {
        return Ok(None);
    }
    let path = settings.embedder_weights.as_ref().ok_or_else(|| {
        CliError::Usage(anyhow!(
            "feature mode {} needs embedder_weights in the config",
            settings.mode
        ))
    })?;
    let store = ser_core::tensor::load_named_tensors(path)
        .with_context(|| format!("loading embedder weights {}", path.display()))
        .map_err(data)?;
    Ok(Some(store))
}

/// Extracts features for every corpus and split into cache files. Individual
/// utterance failures are logged and summarized; any failure makes the
/// command exit with a data error after the rest have been cached.
pub fn cmd_extract(settings: &Settings) -> Result<(), CliError> {
    if settings.corpora.is_empty() {
        return Err(CliError::Usage(anyhow!("config lists no [corpora.*]")));
    }
    let weights = load_embedder(settings)?;
    std::fs::create_dir_all(settings.out_dir.join("features"))
        .context("creating features directory")
        .map_err(data)?;

    let mut total_failures = 0usize;
    for (name, manifest_path) in &settings.corpora {
        let records = corpus::load_manifest(manifest_path)
            .with_context(|| format!("loading manifest {}", manifest_path.display()))
            .map_err(data)?;
        let labeled = corpus::unify_labels(&records, &settings.label_map)
            .with_context(|| format!("unifying labels for corpus {name}"))
            .map_err(data)?;
        let audio_root = manifest_path.parent().map(Path::to_path_buf);

        for split in [Split::Train, Split::Dev, Split::Test] {
            let subset: Vec<(UtteranceRecord, usize)> = labeled
                .iter()
                .filter(|(r, _)| r.split == split)
                .cloned()
                .collect();
            if subset.is_empty() {
                continue;
            }
            let outcome = pipeline::extract_records(
                &subset,
                settings.mode,
                weights.as_ref(),
                audio_root.as_deref(),
                settings.workers,
            );
            for (id, message) in &outcome.failures {
                log::warn!("{name}/{}: {id}: {message}", split.as_str());
            }
            total_failures += outcome.failures.len();
            let path = settings.cache_path(name, split);
            corpus::write_feature_cache(&outcome.entries, &path)
                .with_context(|| format!("writing cache {}", path.display()))
                .map_err(data)?;
            println!(
                "extract {name}/{}: {} ok, {} failed -> {}",
                split.as_str(),
                outcome.entries.len(),
                outcome.failures.len(),
                path.display()
            );
        }
    }
    if total_failures > 0 {
        return Err(data(anyhow!("{total_failures} utterances failed extraction")));
    }
    Ok(())
}

fn read_split(settings: &Settings, split: Split) -> Result<Vec<Vec<FeatureCacheEntry>>, CliError> {
    let mut sets = Vec::new();
    for (name, _) in &settings.corpora {
        let path = settings.cache_path(name, split);
        if path.exists() {
            let entries = corpus::read_feature_cache(&path)
                .with_context(|| format!("reading cache {}", path.display()))
                .map_err(data)?;
            sets.push(entries);
        }
    }
    Ok(sets)
}

/// Trains on the merged train caches, writes the best checkpoint and a
/// JSON-lines epoch log.
pub fn cmd_train(settings: &Settings) -> Result<(), CliError> {
    let train_sets = read_split(settings, Split::Train)?;
    if train_sets.iter().map(Vec::len).sum::<usize>() == 0 {
        return Err(data(anyhow!(
            "no train caches under {} (run `ser extract` first)",
            settings.out_dir.join("features").display()
        )));
    }
    // Multi-corpus mixing: concatenate and reorder, deterministically.
    let train_set = corpus::merge_and_shuffle(train_sets, settings.seed);
    let dev_set: Vec<FeatureCacheEntry> = read_split(settings, Split::Dev)?
        .into_iter()
        .flatten()
        .collect();

    let model_config = ModelConfig {
        d_in: settings.mode.dim(),
        fc_dims: settings.model.fc_dims,
        lstm_hidden: settings.model.lstm_hidden,
        lstm_layers: settings.model.lstm_layers,
        attn_window: settings.model.attn_window,
        n_classes: settings.label_map.num_classes(),
    };
    println!(
        "train: {} utterances ({} dev), mode {}, window L={}, seed {}",
        train_set.len(),
        dev_set.len(),
        settings.mode,
        model_config.attn_window,
        settings.seed
    );

    let log_path = settings.out_dir.join("train_log.jsonl");
    std::fs::create_dir_all(&settings.out_dir)
        .context("creating output directory")
        .map_err(data)?;
    let mut log_file = std::fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))
        .map_err(data)?;

    let outcome = training::train(&train_set, &dev_set, &model_config, &settings.train, |r| {
        println!(
            "epoch {:>3}: loss {:.4}  dev WA {:.4}  dev UA {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.dev_wa, r.dev_ua, r.seconds
        );
        let line = serde_json::to_string(r).expect("epoch record serializes");
        writeln!(log_file, "{line}").expect("writing train log");
    })
    .map_err(|e| numeric(anyhow!(e)))?;

    let ckpt_path = settings.checkpoint_path();
    outcome
        .checkpoint
        .save(&ckpt_path)
        .map_err(|e| data(anyhow!("saving checkpoint: {e}")))?;
    println!(
        "best epoch {:?} (dev UA {:.4}) -> {}",
        outcome.best_epoch,
        outcome.best_dev_ua,
        ckpt_path.display()
    );
    Ok(())
}

/// Evaluates a checkpoint on the test caches; prints the report and writes a
/// JSON copy next to the checkpoint.
pub fn cmd_eval(settings: &Settings, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.checkpoint_path());
    let ckpt = Checkpoint::load(&ckpt_path)
        .map_err(|e| data(anyhow!("loading checkpoint {}: {e}", ckpt_path.display())))?;
    let test_set: Vec<FeatureCacheEntry> = read_split(settings, Split::Test)?
        .into_iter()
        .flatten()
        .collect();
    if test_set.is_empty() {
        return Err(data(anyhow!("no test caches to evaluate")));
    }
    let report = eval::evaluate(
        &ckpt,
        &test_set,
        &settings.class_names(),
        settings.train.batch_size,
    )
    .map_err(|e| numeric(anyhow!(e)))?;

    print!("{}", report.render_text());
    let report_path = settings.out_dir.join("eval_report.json");
    std::fs::write(&report_path, report.to_json())
        .with_context(|| format!("writing {}", report_path.display()))
        .map_err(data)?;
    println!("report -> {}", report_path.display());
    Ok(())
}

/// Classifies a single WAV file and prints per-class probabilities.
pub fn cmd_predict(
    settings: &Settings,
    wav: &Path,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.checkpoint_path());
    let ckpt = Checkpoint::load(&ckpt_path)
        .map_err(|e| data(anyhow!("loading checkpoint {}: {e}", ckpt_path.display())))?;
    let weights = load_embedder(settings)?;

    let clip = ser_core::audio::load_wav(wav)
        .map_err(|e| data(anyhow!("loading {}: {e}", wav.display())))?;
    let features = pipeline::extract_utterance_features(&clip, settings.mode, weights.as_ref())
        .map_err(|e| data(anyhow!("extracting features from {}: {e}", wav.display())))?;
    if features.cols() != ckpt.config.d_in {
        return Err(data(anyhow!(
            "feature mode {} gives width {}, checkpoint expects {}",
            settings.mode,
            features.cols(),
            ckpt.config.d_in
        )));
    }

    let standardized = match (&ckpt.feature_mean, &ckpt.feature_std) {
        (Some(mean), Some(std)) => {
            training::Standardizer::from_checkpoint(mean, std).apply(&features)
        }
        _ => features,
    };
    let batch = training::pad_batch(&[&standardized]).map_err(|e| numeric(anyhow!(e)))?;
    let (logits, _) =
        ser_core::model::forward(&ckpt.params, &ckpt.config, &batch).map_err(|e| numeric(anyhow!(e)))?;
    let row = logits.row(0);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let norm: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / norm).collect();

    let class_names = settings.class_names();
    let best = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    println!("prediction: {}", class_names.get(best).cloned().unwrap_or_else(|| best.to_string()));
    for (i, p) in probs.iter().enumerate() {
        let name = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        println!("  {name:<10} {p:.4}");
    }
    Ok(())
}

/// A ready-to-run demonstration config, written by `--init-config`.
/// Writes freshly initialized embedder weights in the named-tensor container.
pub fn write_random_embedder(path: &PathBuf, seed: u64) -> Result<(), CliError> {
    let store = ser_core::embed::ConvNet::vggish().random_weights(seed);
    ser_core::tensor::save_named_tensors(&store, path)
        .map_err(|e| data(anyhow!("writing {}: {e}", path.display())))?;
    println!("wrote {} ({} tensors, seed {seed})", path.display(), store.len());
    Ok(())
}

pub fn write_example_config(path: &PathBuf) -> Result<(), CliError> {
    let text = r#"# Speech emotion recognition run configuration.
seed = 7
out_dir = "runs/demo"
feature_mode = "llds"          # llds | vggishs | llds+vggishs
# embedder_weights = "weights/vggish.ntsr"   # needed for the vggish modes

[corpora.synthzh]
manifest = "runs/demo/data/synthzh/manifest.jsonl"

[corpora.synthen]
manifest = "runs/demo/data/synthen/manifest.jsonl"

[model]
fc_dims = [256, 256]
lstm_hidden = 100
lstm_layers = 2
attn_window = 5

[train]
learning_rate = 1e-3
batch_size = 32
max_epochs = 20
clip_norm = 5.0
standardize = true

[[synth.corpora]]
name = "synthzh"
language = "zh"
train = 200
dev = 40
test = 80

[[synth.corpora]]
name = "synthen"
language = "en"
train = 80
dev = 24
test = 48
"#;
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)?;
    println!("wrote {}", path.display());
    Ok(())
}
