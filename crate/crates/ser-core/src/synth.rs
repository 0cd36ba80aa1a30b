//! Parametric synthetic speech-emotion corpora: four classes told apart by
//! pitch contour and energy envelope, with a per-"language" timbre (harmonic
//! mix). Used by the `synth` CLI command and the end-to-end test harnesses.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, CANONICAL_RATE_HZ};
use crate::corpus::{Split, UtteranceRecord};

pub const CLASS_NAMES: [&str; 4] = ["angry", "happy", "sad", "neutral"];

/// Timbre of a synthetic "language": relative harmonic amplitudes.
#[derive(Debug, Clone)]
pub struct SynthLanguage {
    pub code: String,
    pub harmonics: Vec<f64>,
}

impl SynthLanguage {
    pub fn mandarin_like() -> Self {
        Self {
            code: "zh".into(),
            harmonics: vec![1.0, 0.35, 0.15],
        }
    }

    pub fn english_like() -> Self {
        Self {
            code: "en".into(),
            harmonics: vec![1.0, 0.12, 0.45, 0.2],
        }
    }
}

/// Within-class variability knobs.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Relative f0 jitter, e.g. 0.06 for +/-6%.
    pub f0_jitter: f64,
    /// Relative amplitude jitter.
    pub amp_jitter: f64,
    /// Additive uniform noise amplitude.
    pub noise: f64,
    /// Voiced duration bounds in seconds.
    pub duration_s: (f64, f64),
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            f0_jitter: 0.06,
            amp_jitter: 0.12,
            noise: 0.01,
            duration_s: (0.9, 1.3),
        }
    }
}

struct ClassRecipe {
    f0_start: f64,
    f0_end: f64,
    vibrato_hz: f64,
    vibrato_depth: f64,
    amplitude: f64,
    /// Amplitude modulation (tremolo) rate and depth.
    am_hz: f64,
    am_depth: f64,
    /// Envelope decay toward the end, 0 = flat.
    decay: f64,
}

fn recipe(class: usize) -> ClassRecipe {
    match class {
        // angry: high rising pitch, loud, hard tremolo
        0 => ClassRecipe {
            f0_start: 230.0,
            f0_end: 310.0,
            vibrato_hz: 0.0,
            vibrato_depth: 0.0,
            amplitude: 0.62,
            am_hz: 9.0,
            am_depth: 0.35,
            decay: 0.0,
        },
        // happy: high pitch with vibrato, bright
        1 => ClassRecipe {
            f0_start: 290.0,
            f0_end: 290.0,
            vibrato_hz: 5.5,
            vibrato_depth: 0.10,
            amplitude: 0.45,
            am_hz: 3.0,
            am_depth: 0.10,
            decay: 0.0,
        },
        // sad: low falling pitch, quiet, dying away
        2 => ClassRecipe {
            f0_start: 150.0,
            f0_end: 105.0,
            vibrato_hz: 0.0,
            vibrato_depth: 0.0,
            amplitude: 0.16,
            am_hz: 0.0,
            am_depth: 0.0,
            decay: 0.75,
        },
        // neutral: mid flat pitch, moderate level
        3 => ClassRecipe {
            f0_start: 190.0,
            f0_end: 185.0,
            vibrato_hz: 0.0,
            vibrato_depth: 0.0,
            amplitude: 0.33,
            am_hz: 0.0,
            am_depth: 0.0,
            decay: 0.1,
        },
        _ => panic!("class index {class} out of range"),
    }
}

/// Synthesizes one utterance: leading/trailing silence around a harmonic tone
/// whose pitch contour and energy envelope encode the class.
pub fn synth_clip(class: usize, language: &SynthLanguage, options: &SynthOptions, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = recipe(class);
    let rate = CANONICAL_RATE_HZ as f64;

    let f0_scale = 1.0 + rng.gen_range(-options.f0_jitter..options.f0_jitter);
    let amp_scale = 1.0 + rng.gen_range(-options.amp_jitter..options.amp_jitter);
    let duration = rng.gen_range(options.duration_s.0..options.duration_s.1);
    let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let pad = (0.08 * rate) as usize;
    let voiced = (duration * rate) as usize;
    let harm_norm: f64 = language.harmonics.iter().sum();

    let mut samples = vec![0.0; pad];
    let mut phase = phase0;
    for i in 0..voiced {
        let t = i as f64 / rate;
        let progress = i as f64 / voiced as f64;
        let mut f0 = (r.f0_start + (r.f0_end - r.f0_start) * progress) * f0_scale;
        if r.vibrato_depth > 0.0 {
            f0 *= 1.0 + r.vibrato_depth * (std::f64::consts::TAU * r.vibrato_hz * t).sin();
        }
        phase += std::f64::consts::TAU * f0 / rate;
        let mut tone = 0.0;
        for (k, &h) in language.harmonics.iter().enumerate() {
            tone += h * ((k + 1) as f64 * phase).sin();
        }
        tone /= harm_norm;
        let mut env = 1.0 - r.decay * progress;
        if r.am_depth > 0.0 {
            env *= 1.0 + r.am_depth * (std::f64::consts::TAU * r.am_hz * t).sin();
        }
        // Short attack/release ramps avoid clicks at the silence boundaries.
        let ramp = 0.02 * rate;
        let edge = (i as f64 / ramp).min((voiced - i) as f64 / ramp).min(1.0);
        let noise = rng.gen_range(-options.noise..options.noise);
        let s = r.amplitude * amp_scale * env * edge * tone + noise;
        samples.push(s.clamp(-1.0, 1.0));
    }
    samples.extend(std::iter::repeat_n(0.0, pad));
    AudioClip::new(samples, CANONICAL_RATE_HZ)
}

/// Split sizes for a generated corpus.
#[derive(Debug, Clone, Copy)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Deterministic per-utterance seed, decoupled from generation order.
pub fn utterance_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Plans a corpus: round-robin classes within each split, stable ids, one
/// record per utterance. Pure metadata; audio is synthesized on demand.
pub fn plan_corpus(corpus: &str, language: &str, sizes: SplitSizes) -> Vec<UtteranceRecord> {
    let mut records = Vec::new();
    for (split, n) in [
        (Split::Train, sizes.train),
        (Split::Dev, sizes.dev),
        (Split::Test, sizes.test),
    ] {
        for i in 0..n {
            let class = i % CLASS_NAMES.len();
            let id = format!("{corpus}-{}-{i:04}", split.as_str());
            records.push(UtteranceRecord {
                id: id.clone(),
                audio_path: format!("{id}.wav"),
                corpus: corpus.to_string(),
                language: language.to_string(),
                label: CLASS_NAMES[class].to_string(),
                split,
            });
        }
    }
    records
}

/// Class index encoded in a planned record (by label).
pub fn class_of(record: &UtteranceRecord) -> usize {
    CLASS_NAMES
        .iter()
        .position(|&c| c == record.label)
        .expect("synthetic labels come from CLASS_NAMES")
}

/// Writes WAV files plus a `manifest.jsonl` for a planned corpus under
/// `dir/<corpus>/`. The manifest's `audio_path` entries stay relative to the
/// manifest itself, so the corpus directory can be moved wholesale. Returns
/// the manifest path.
pub fn write_corpus(
    dir: &Path,
    corpus: &str,
    language: &SynthLanguage,
    sizes: SplitSizes,
    options: &SynthOptions,
    seed: u64,
) -> std::io::Result<std::path::PathBuf> {
    let corpus_dir = dir.join(corpus);
    std::fs::create_dir_all(&corpus_dir)?;
    let records = plan_corpus(corpus, &language.code, sizes);
    let mut manifest = String::new();
    for (i, record) in records.iter().enumerate() {
        let clip = synth_clip(class_of(record), language, options, utterance_seed(seed, i as u64));
        let wav_path = corpus_dir.join(&record.audio_path);
        crate::audio::save_wav(&clip, &wav_path).map_err(|e| match e {
            crate::audio::AudioError::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        })?;
        manifest.push_str(&serde_json::to_string(record).expect("record serializes"));
        manifest.push('\n');
    }
    let manifest_path = corpus_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}
