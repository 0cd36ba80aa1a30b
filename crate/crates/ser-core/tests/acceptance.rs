//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them). Oracles here are written
//! independently of the library code paths they check.

// Oracles use explicit index loops on purpose.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ser_core::audio::AudioClip;
use ser_core::corpus::{merge_and_shuffle, FeatureCacheEntry};
use ser_core::embed::{ConvNet, Layer};
use ser_core::eval::{compute_wa_ua, ConfusionMatrix};
use ser_core::lld;
use ser_core::mat::Matrix;
use ser_core::model::{self, Batch, ModelConfig, ModelParams};
use ser_core::pipeline::{self, FeatureMode};
use ser_core::synth::{self, SplitSizes, SynthLanguage, SynthOptions};
use ser_core::tensor::NamedTensorStore;
use ser_core::training::{self, TrainConfig};

fn sine_clip(freq: f64, seconds: f64, amp: f64) -> AudioClip {
    let n = (seconds * 16_000.0).round() as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
        .collect();
    AudioClip::new(samples, 16_000)
}

/// Full-size VGGish weights shared by the tests that need them.
fn vggish_weights() -> &'static NamedTensorStore {
    static WEIGHTS: OnceLock<NamedTensorStore> = OnceLock::new();
    WEIGHTS.get_or_init(|| ConvNet::vggish().random_weights(2024))
}

// ----------------------------------------------------------------------
// 1. Gradient correctness on the toy configuration.
// ----------------------------------------------------------------------
#[test]
fn acceptance_01_gradient_correctness() {
    let started = Instant::now();
    let config = ModelConfig {
        d_in: 6,
        fc_dims: [5, 5],
        lstm_hidden: 4,
        lstm_layers: 2,
        attn_window: 3,
        n_classes: 3,
    };
    let mut params = model::init_params(&config, 77);
    let lengths = [7usize, 5];
    let mut batch = Batch::zeros(2, 7, config.d_in, lengths.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for b in 0..2 {
        for t in 0..lengths[b] {
            for v in batch.frame_mut(b, t) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let targets = [2usize, 0];

    let loss_of = |p: &ModelParams| -> f64 {
        let (logits, _) = model::forward(p, &config, &batch).unwrap();
        let (loss, _) = training::cross_entropy(&logits, &targets).unwrap();
        loss
    };

    let (logits, trace) = model::forward(&params, &config, &batch).unwrap();
    let (_, grad_logits) = training::cross_entropy(&logits, &targets).unwrap();
    let grads = model::backward(&trace, &params, &config, &grad_logits).unwrap();

    let names: Vec<String> = params.store.iter().map(|t| t.name.clone()).collect();
    let step = 1e-5;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for name in names {
        let n = params.store.get(&name).unwrap().data.len();
        for idx in 0..n {
            let orig = params.store.get(&name).unwrap().data[idx];
            params.store.get_mut(&name).unwrap().data[idx] = orig + step;
            let up = loss_of(&params);
            params.store.get_mut(&name).unwrap().data[idx] = orig - step;
            let down = loss_of(&params);
            params.store.get_mut(&name).unwrap().data[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = grads.get(&name).unwrap().data[idx];
            // Central differences carry ~eps*|loss|/step ~ 1e-11 of
            // cancellation noise; below that floor the oracle itself is
            // meaningless, so the relative bound applies above it.
            let abs = (an - fd).abs();
            if abs > 1e-8 {
                let rel = abs / an.abs().max(fd.abs());
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-4,
                    "{name}[{idx}]: analytic {an} vs finite difference {fd} (rel {rel:.2e})"
                );
            }
            checked += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient check took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 01 gradient-correctness: PASS ({checked} entries, worst rel {worst:.2e}, {elapsed:.1}s)"
    );
}

// ----------------------------------------------------------------------
// 2. DSP oracle equivalence: FFT+filterbank+DCT vs direct summation.
// ----------------------------------------------------------------------

/// Direct O(N^2) magnitude spectrum, written independently of the library FFT.
fn oracle_dft_magnitudes(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut padded = vec![0.0; n_fft];
    padded[..frame.len()].copy_from_slice(frame);
    (0..=n_fft / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &x) in padded.iter().enumerate() {
                let ang = -2.0 * PI * k as f64 * n as f64 / n_fft as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Independent mel filterbank: same definition, separate code.
fn oracle_mel_log(frame: &[f64], rate: f64, n_mels: usize, n_fft: usize) -> Vec<f64> {
    let mags = oracle_dft_magnitudes(frame, n_fft);
    let to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let to_hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let top_mel = to_mel(rate / 2.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| to_hz(top_mel * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let mut acc = 0.0;
            for (k, &mag) in mags.iter().enumerate() {
                let f = k as f64 * rate / n_fft as f64;
                let w = if f >= left && f <= center && center > left {
                    (f - left) / (center - left)
                } else if f > center && f <= right && right > center {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                acc += w * mag;
            }
            acc.max(1e-10).ln()
        })
        .collect()
}

/// Full O(M^2) orthonormal DCT-II, truncated afterwards.
fn oracle_dct_13(input: &[f64]) -> Vec<f64> {
    let m = input.len();
    let full: Vec<f64> = (0..m)
        .map(|k| {
            let s = if k == 0 {
                (1.0 / m as f64).sqrt()
            } else {
                (2.0 / m as f64).sqrt()
            };
            s * input
                .iter()
                .enumerate()
                .map(|(j, &x)| x * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos())
                .sum::<f64>()
        })
        .collect();
    full[..13].to_vec()
}

#[test]
fn acceptance_02_dsp_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for n_mels in [26usize, 64] {
            let got = lld::mel_filterbank_energies(&frame, 16_000, n_mels);
            let want = oracle_mel_log(&frame, 16_000.0, n_mels, 512);
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs());
                assert!((a - b).abs() < 1e-6, "mel({n_mels}): {a} vs {b}");
            }
        }
        let mel26 = lld::mel_filterbank_energies(&frame, 16_000, 26);
        let got = lld::mfcc(&mel26).unwrap();
        let want = oracle_dct_13(&oracle_mel_log(&frame, 16_000.0, 26, 512));
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
            assert!((a - b).abs() < 1e-6, "mfcc: {a} vs {b}");
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "dsp oracle check took {elapsed:.1}s");
    println!("ACCEPTANCE 02 dsp-oracle-equivalence: PASS (worst abs {worst:.2e}, {elapsed:.1}s)");
}

// ----------------------------------------------------------------------
// 3. Pitch accuracy on pure tones, silence, and noise.
// ----------------------------------------------------------------------
#[test]
fn acceptance_03_pitch_accuracy() {
    for freq in [100.0, 150.0, 200.0, 300.0, 400.0] {
        let clip = sine_clip(freq, 0.5, 0.8);
        // Check an interior analysis frame directly.
        let frame = &clip.samples()[1600..2000];
        let (f0, voiced) = lld::estimate_f0(frame, 16_000);
        assert!(voiced, "{freq} Hz tone unvoiced");
        assert!((f0 - freq).abs() <= 5.0, "{freq} Hz estimated as {f0}");
    }

    let (f0, voiced) = lld::estimate_f0(&[0.0; 400], 16_000);
    assert_eq!((f0, voiced), (0.0, false), "silence must be unvoiced");

    let mut voiced_count = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if lld::estimate_f0(&frame, 16_000).1 {
            voiced_count += 1;
        }
    }
    assert!(voiced_count <= 1, "{voiced_count}/100 noise frames voiced");
    println!("ACCEPTANCE 03 pitch-accuracy: PASS (noise voiced {voiced_count}/100)");
}

// ----------------------------------------------------------------------
// 4. Fusion arithmetic: frame counts 24/24/48 at width 145.
// ----------------------------------------------------------------------
#[test]
fn acceptance_04_fusion_arithmetic() {
    let weights = vggish_weights();
    for (seconds, want_frames) in [(0.5, 24usize), (1.0, 24), (2.0, 48)] {
        let clip = sine_clip(220.0, seconds, 0.6);
        let features =
            pipeline::extract_utterance_features(&clip, FeatureMode::LldsVggishs, Some(weights))
                .unwrap();
        assert_eq!(
            (features.rows(), features.cols()),
            (want_frames, 145),
            "{seconds}s clip"
        );
    }
    println!("ACCEPTANCE 04 fusion-arithmetic: PASS (24/24/48 x 145)");
}

// ----------------------------------------------------------------------
// 5. Attention contracts: simplex weights, masking, L=1 equivalence,
//    padding invariance.
// ----------------------------------------------------------------------
#[test]
fn acceptance_05_attention_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    for case in 0..100 {
        let t = rng.gen_range(1..24usize);
        let pad = rng.gen_range(0..6usize);
        let d = rng.gen_range(1..10usize);
        let rows: Vec<Vec<f64>> = (0..t + pad)
            .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let h = Matrix::from_rows(&rows);
        let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let window = [1usize, 3, 5, 7][case % 4];
        let (_, weights) = model::local_attention(&h, &u, window, t).unwrap();
        assert!(weights.iter().all(|&w| w >= 0.0), "negative weight");
        for w in &weights[t..] {
            assert_eq!(*w, 0.0, "padding weight not exactly zero");
        }
        let sum: f64 = weights[..t].iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6, "weights sum to {sum}");

        if window == 1 {
            // Unpooled original formulation, computed from scratch.
            let scores: Vec<f64> = (0..t)
                .map(|i| rows[i].iter().zip(&u).map(|(a, b)| a * b).sum())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let norm: f64 = exps.iter().sum();
            for (i, e) in exps.iter().enumerate() {
                assert_eq!(weights[i], e / norm, "L=1 deviates from unpooled attention");
            }
        }
    }

    // Padding extension must leave logits bit-identical.
    let config = ModelConfig {
        d_in: 5,
        fc_dims: [6, 6],
        lstm_hidden: 4,
        lstm_layers: 2,
        attn_window: 5,
        n_classes: 4,
    };
    let params = model::init_params(&config, 502);
    let lengths = vec![9usize, 4];
    let mut batch = Batch::zeros(2, 9, 5, lengths.clone());
    for b in 0..2 {
        for t in 0..lengths[b] {
            for (j, v) in batch.frame_mut(b, t).iter_mut().enumerate() {
                *v = ((b + 2) as f64 * 0.3 + t as f64 * 0.11 + j as f64 * 0.07).sin();
            }
        }
    }
    let (logits_a, _) = model::forward(&params, &config, &batch).unwrap();
    let mut extended = Batch::zeros(2, 16, 5, lengths.clone());
    for b in 0..2 {
        for t in 0..lengths[b] {
            extended.frame_mut(b, t).copy_from_slice(batch.frame(b, t));
        }
        for t in lengths[b]..16 {
            extended.frame_mut(b, t).fill(7.7);
        }
    }
    let (logits_b, _) = model::forward(&params, &config, &extended).unwrap();
    assert_eq!(logits_a.data(), logits_b.data(), "padding changed logits");

    println!("ACCEPTANCE 05 attention-contracts: PASS");
}

// ----------------------------------------------------------------------
// 6. Synthetic four-class end-to-end run.
// ----------------------------------------------------------------------

fn compact_model(n_classes: usize) -> ModelConfig {
    ModelConfig {
        d_in: 17,
        fc_dims: [32, 32],
        lstm_hidden: 24,
        lstm_layers: 2,
        attn_window: 5,
        n_classes,
    }
}

#[test]
fn acceptance_06_synthetic_end_to_end() {
    let started = Instant::now();
    let lang = SynthLanguage::mandarin_like();
    let options = SynthOptions::default();
    let records = synth::plan_corpus("synth6", "zh", SplitSizes { train: 200, dev: 0, test: 80 });
    let entries =
        pipeline::extract_synthetic(&records, &lang, &options, FeatureMode::Llds, None, 600)
            .unwrap();
    let (train_set, test_set): (Vec<FeatureCacheEntry>, Vec<FeatureCacheEntry>) = {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (entry, record) in entries.into_iter().zip(&records) {
            match record.split {
                ser_core::corpus::Split::Train => train.push(entry),
                _ => test.push(entry),
            }
        }
        (train, test)
    };
    assert_eq!(train_set.len(), 200);
    assert_eq!(test_set.len(), 80);

    let mcfg = compact_model(4);
    let tcfg = TrainConfig {
        max_epochs: 30,
        seed: 601,
        ..TrainConfig::default()
    };
    let outcome = training::train(&train_set, &test_set, &mcfg, &tcfg, |_| {}).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        outcome.best_dev_ua >= 0.95,
        "test UA {:.3} below 0.95 (best epoch {:?})",
        outcome.best_dev_ua,
        outcome.best_epoch
    );
    assert!(elapsed < 300.0, "end-to-end run took {elapsed:.0}s");
    println!(
        "ACCEPTANCE 06 synthetic-end-to-end: PASS (test UA {:.3} at epoch {:?}, {elapsed:.0}s)",
        outcome.best_dev_ua, outcome.best_epoch
    );
}

// ----------------------------------------------------------------------
// 7. Multi-lingual fusion trend: mixing a large foreign corpus into a
//    small one must not hurt the small corpus (median over 5 seeds).
// ----------------------------------------------------------------------
#[test]
fn acceptance_07_multilingual_fusion_trend() {
    let started = Instant::now();
    let harder = SynthOptions {
        f0_jitter: 0.13,
        amp_jitter: 0.35,
        noise: 0.02,
        duration_s: (0.9, 1.3),
    };
    let zh = SynthLanguage::mandarin_like();
    let en = SynthLanguage::english_like();
    let mcfg = compact_model(4);

    let mut ua_small = Vec::new();
    let mut ua_fused = Vec::new();
    for seed in 0..5u64 {
        let zh_records =
            synth::plan_corpus("synthzh", "zh", SplitSizes { train: 400, dev: 0, test: 0 });
        let en_records =
            synth::plan_corpus("synthen", "en", SplitSizes { train: 80, dev: 24, test: 48 });
        let zh_entries = pipeline::extract_synthetic(
            &zh_records,
            &zh,
            &harder,
            FeatureMode::Llds,
            None,
            7000 + seed,
        )
        .unwrap();
        let en_entries = pipeline::extract_synthetic(
            &en_records,
            &en,
            &harder,
            FeatureMode::Llds,
            None,
            8000 + seed,
        )
        .unwrap();
        let mut en_train = Vec::new();
        let mut en_dev = Vec::new();
        let mut en_test = Vec::new();
        for (entry, record) in en_entries.into_iter().zip(&en_records) {
            match record.split {
                ser_core::corpus::Split::Train => en_train.push(entry),
                ser_core::corpus::Split::Dev => en_dev.push(entry),
                ser_core::corpus::Split::Test => en_test.push(entry),
            }
        }

        let tcfg = TrainConfig {
            max_epochs: 10,
            seed,
            ..TrainConfig::default()
        };
        let small = training::train(&en_train, &en_dev, &mcfg, &tcfg, |_| {}).unwrap();
        let fused_train = merge_and_shuffle(vec![zh_entries, en_train.clone()], 9000 + seed);
        let fused = training::train(&fused_train, &en_dev, &mcfg, &tcfg, |_| {}).unwrap();

        let class_names: Vec<String> = synth::CLASS_NAMES.iter().map(|s| s.to_string()).collect();
        let small_report =
            ser_core::eval::evaluate(&small.checkpoint, &en_test, &class_names, 32).unwrap();
        let fused_report =
            ser_core::eval::evaluate(&fused.checkpoint, &en_test, &class_names, 32).unwrap();
        ua_small.push(small_report.overall.ua);
        ua_fused.push(fused_report.overall.ua);
    }

    let median = |xs: &[f64]| -> f64 {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let m_small = median(&ua_small);
    let m_fused = median(&ua_fused);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        m_fused >= m_small,
        "fused median UA {m_fused:.3} below small-only {m_small:.3} (small {ua_small:?}, fused {ua_fused:?})"
    );
    assert!(elapsed < 1200.0, "fusion trend run took {elapsed:.0}s");
    println!(
        "ACCEPTANCE 07 multilingual-fusion-trend: PASS (median UA fused {m_fused:.3} >= small {m_small:.3}, {elapsed:.0}s)"
    );
}

// ----------------------------------------------------------------------
// 8. Metric correctness.
// ----------------------------------------------------------------------
#[test]
fn acceptance_08_metric_correctness() {
    let cm = ConfusionMatrix::from_counts(&[vec![16, 2], vec![1, 1]]);
    let scores = compute_wa_ua(&cm).unwrap();
    assert!((scores.wa - 0.85).abs() < 1e-9, "wa {}", scores.wa);
    let ua_expected = (16.0 / 18.0 + 1.0 / 2.0) / 2.0; // 0.694444...
    assert!((scores.ua - ua_expected).abs() < 1e-9, "ua {}", scores.ua);

    let mut rng = ChaCha8Rng::seed_from_u64(801);
    for _ in 0..20 {
        let classes = rng.gen_range(2..6usize);
        let per_class = rng.gen_range(1..40u64);
        let mut rows = Vec::new();
        for _ in 0..classes {
            // Random row that sums to the shared per-class total.
            let mut row = vec![0u64; classes];
            let mut remaining = per_class;
            for j in 0..classes - 1 {
                let v = rng.gen_range(0..=remaining);
                row[j] = v;
                remaining -= v;
            }
            row[classes - 1] = remaining;
            rows.push(row);
        }
        let cm = ConfusionMatrix::from_counts(&rows);
        let scores = compute_wa_ua(&cm).unwrap();
        assert!(
            (scores.wa - scores.ua).abs() < 1e-12,
            "balanced confusion: wa {} vs ua {}",
            scores.wa,
            scores.ua
        );
    }
    println!("ACCEPTANCE 08 metric-correctness: PASS");
}

// ----------------------------------------------------------------------
// 9. Determinism and file formats.
// ----------------------------------------------------------------------
#[test]
fn acceptance_09_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let lang = SynthLanguage::mandarin_like();
    let options = SynthOptions::default();
    let records = synth::plan_corpus("synth9", "zh", SplitSizes { train: 32, dev: 16, test: 0 });
    let entries =
        pipeline::extract_synthetic(&records, &lang, &options, FeatureMode::Llds, None, 900)
            .unwrap();
    let train_set: Vec<_> = entries[..32].to_vec();
    let dev_set: Vec<_> = entries[32..].to_vec();

    let mcfg = compact_model(4);
    let tcfg = TrainConfig {
        max_epochs: 3,
        seed: 901,
        ..TrainConfig::default()
    };
    let a = training::train(&train_set, &dev_set, &mcfg, &tcfg, |_| {}).unwrap();
    let b = training::train(&train_set, &dev_set, &mcfg, &tcfg, |_| {}).unwrap();

    // Logs must agree bit-for-bit on everything except wall-clock timing.
    let strip = |log: &[training::EpochRecord]| -> Vec<String> {
        log.iter()
            .map(|r| {
                let mut r = r.clone();
                r.seconds = 0.0;
                serde_json::to_string(&r).unwrap()
            })
            .collect()
    };
    assert_eq!(strip(&a.log), strip(&b.log), "training logs differ");

    let path_a = dir.path().join("a.ntsr");
    let path_b = dir.path().join("b.ntsr");
    a.checkpoint.save(&path_a).unwrap();
    b.checkpoint.save(&path_b).unwrap();
    let bytes_a = std::fs::read(&path_a).unwrap();
    let bytes_b = std::fs::read(&path_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "checkpoints differ between identical runs");

    // Feature cache: write -> read -> write is byte-stable, and the reread
    // entries match exactly.
    let cache_a = dir.path().join("f1.serf");
    let cache_b = dir.path().join("f2.serf");
    ser_core::corpus::write_feature_cache(&train_set, &cache_a).unwrap();
    let back = ser_core::corpus::read_feature_cache(&cache_a).unwrap();
    ser_core::corpus::write_feature_cache(&back, &cache_b).unwrap();
    assert_eq!(
        std::fs::read(&cache_a).unwrap(),
        std::fs::read(&cache_b).unwrap(),
        "cache not byte-stable over a round trip"
    );

    // Named-tensor container: reread checkpoint is byte-stable too.
    let store = ser_core::tensor::load_named_tensors(&path_a).unwrap();
    let path_c = dir.path().join("c.ntsr");
    ser_core::tensor::save_named_tensors(&store, &path_c).unwrap();
    assert_eq!(bytes_a, std::fs::read(&path_c).unwrap());

    // Corrupted files produce the specified errors.
    assert!(matches!(
        ser_core::tensor::parse_named_tensors(&bytes_a[..bytes_a.len() - 2]),
        Err(ser_core::tensor::TensorError::TruncatedFile)
    ));
    let mut bad = bytes_a.clone();
    bad[0] = b'X';
    assert!(matches!(
        ser_core::tensor::parse_named_tensors(&bad),
        Err(ser_core::tensor::TensorError::BadMagic)
    ));
    let cache_bytes = std::fs::read(&cache_a).unwrap();
    assert!(matches!(
        ser_core::corpus::parse_feature_cache(&cache_bytes[..cache_bytes.len() - 5]),
        Err(ser_core::corpus::CorpusError::TruncatedFile)
    ));
    let mut bad_cache = cache_bytes.clone();
    bad_cache[1] = b'0';
    assert!(matches!(
        ser_core::corpus::parse_feature_cache(&bad_cache),
        Err(ser_core::corpus::CorpusError::BadMagic)
    ));

    println!("ACCEPTANCE 09 determinism-and-formats: PASS");
}

// ----------------------------------------------------------------------
// 10. Embedder equivalence on toy shapes, 128-wide output at full size.
// ----------------------------------------------------------------------
#[test]
fn acceptance_10_embedder_equivalence() {
    // Toy reduction of the layer pattern against direct summation.
    let net = ConvNet::new(
        4,
        4,
        vec![
            Layer::Conv { name: "c1", out_channels: 2 },
            Layer::MaxPool,
            Layer::Conv { name: "c2", out_channels: 3 },
            Layer::MaxPool,
            Layer::Dense { name: "d1", units: 5, relu: true },
            Layer::Dense { name: "d2", units: 4, relu: false },
        ],
    );
    let weights = net.random_weights(1010);
    let mut rng = ChaCha8Rng::seed_from_u64(1011);
    let input: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let got = net.forward(&input, &weights).unwrap();

    // Direct-summation oracle over channel-major arrays.
    let grid = |data: &[f64], h: usize, w: usize, c: usize| -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![vec![vec![0.0; w]; h]; c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[ch][y][x] = data[(y * w + x) * c + ch];
                }
            }
        }
        out
    };
    fn conv(x: &[Vec<Vec<f64>>], wt: &[f64], b: &[f64], c_out: usize) -> Vec<Vec<Vec<f64>>> {
        let (c_in, h, w) = (x.len(), x[0].len(), x[0][0].len());
        let mut y = vec![vec![vec![0.0; w]; h]; c_out];
        for oc in 0..c_out {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = b[oc];
                    for ic in 0..c_in {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (iy, ix) = (yy as i64 + ky - 1, xx as i64 + kx - 1);
                                if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                    acc += x[ic][iy as usize][ix as usize]
                                        * wt[((oc * c_in + ic) * 3 + ky as usize) * 3 + kx as usize];
                                }
                            }
                        }
                    }
                    y[oc][yy][xx] = acc.max(0.0);
                }
            }
        }
        y
    }
    fn pool(x: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
        let (c, h, w) = (x.len(), x[0].len() / 2, x[0][0].len() / 2);
        let mut y = vec![vec![vec![0.0; w]; h]; c];
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    y[ch][yy][xx] = x[ch][2 * yy][2 * xx]
                        .max(x[ch][2 * yy][2 * xx + 1])
                        .max(x[ch][2 * yy + 1][2 * xx])
                        .max(x[ch][2 * yy + 1][2 * xx + 1]);
                }
            }
        }
        y
    }
    let a = conv(&grid(&input, 4, 4, 1), &weights.get("c1/w").unwrap().data, &weights.get("c1/b").unwrap().data, 2);
    let a = pool(&a);
    let a = conv(&a, &weights.get("c2/w").unwrap().data, &weights.get("c2/b").unwrap().data, 3);
    let a = pool(&a);
    let mut flat = Vec::new();
    for ch in 0..3 {
        flat.push(a[ch][0][0]);
    }
    let dense = |x: &[f64], w: &[f64], b: &[f64], units: usize, relu: bool| -> Vec<f64> {
        (0..units)
            .map(|u| {
                let mut acc = b[u];
                for (i, v) in x.iter().enumerate() {
                    acc += v * w[u * x.len() + i];
                }
                if relu {
                    acc.max(0.0)
                } else {
                    acc
                }
            })
            .collect()
    };
    let h1 = dense(&flat, &weights.get("d1/w").unwrap().data, &weights.get("d1/b").unwrap().data, 5, true);
    let expect = dense(&h1, &weights.get("d2/w").unwrap().data, &weights.get("d2/b").unwrap().data, 4, false);
    for (x, y) in got.iter().zip(&expect) {
        assert!((x - y).abs() < 1e-5, "toy embedder: {x} vs {y}");
    }

    // Full-size forward produces exactly 128 values.
    let clip = sine_clip(300.0, 1.0, 0.5);
    let patches = ser_core::embed::log_mel_patches(&clip).unwrap();
    let embedding = ser_core::embed::embed_patch(&patches[0], vggish_weights()).unwrap();
    assert_eq!(embedding.len(), 128);
    assert!(embedding.iter().any(|&v| v != 0.0), "embedding collapsed to zero");

    println!("ACCEPTANCE 10 embedder-equivalence: PASS");
}
