//! Handcrafted low-level descriptors: zero-crossing rate, short-time energy,
//! pitch, MFCC, plus utterance-level statistical functionals.
//!
//! Every frame yields a 17-dimensional vector laid out as
//! `[zcr, log_energy, f0_hz, voiced, mfcc[0..13]]`.

use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp;
use crate::mat::Matrix;
use crate::preprocess;

/// Dimensionality of one LLD frame.
pub const LLD_DIM: usize = 17;
/// Cepstral coefficients kept per frame.
pub const N_MFCC: usize = 13;
/// Mel filters feeding the cepstrum.
pub const N_MELS: usize = 26;

pub const COL_ZCR: usize = 0;
pub const COL_LOG_ENERGY: usize = 1;
pub const COL_F0: usize = 2;
pub const COL_VOICED: usize = 3;
pub const COL_MFCC: usize = 4;

/// Pitch search band in Hz.
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 500.0;
/// Normalized-autocorrelation threshold separating voiced from unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;

const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cannot extract features from an empty signal")]
    EmptySignal,
    #[error("mel vector of length {got} is too small for {need} cepstra")]
    DimensionTooSmall { got: usize, need: usize },
}

impl From<preprocess::PreprocessError> for FeatureError {
    fn from(_: preprocess::PreprocessError) -> Self {
        FeatureError::EmptySignal
    }
}

/// Fraction of adjacent sample pairs whose sign differs; zero counts as positive.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let crossings = frame
        .windows(2)
        .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
        .count();
    crossings as f64 / (frame.len() - 1) as f64
}

/// `ln(max(sum s^2, 1e-10))`.
pub fn short_time_log_energy(frame: &[f64]) -> f64 {
    frame.iter().map(|s| s * s).sum::<f64>().max(ENERGY_FLOOR).ln()
}

/// Pitch by normalized autocorrelation: `r(tau) = sum x[n] x[n+tau] / sum x[n]^2`
/// maximized over lags covering 50–500 Hz. Returns `(f0, voiced)`; frames whose
/// best peak stays under the voicing threshold come back as `(0.0, false)`.
pub fn estimate_f0(frame: &[f64], rate_hz: u32) -> (f64, bool) {
    let w = frame.len();
    if w < 2 {
        return (0.0, false);
    }
    let energy: f64 = frame.iter().map(|s| s * s).sum();
    if energy <= 1e-12 {
        return (0.0, false);
    }
    let rate = rate_hz as f64;
    // ceil keeps rate/lag inside the 50-500 Hz band at any sample rate.
    let lag_min = ((rate / F0_MAX_HZ).ceil() as usize).max(1);
    let lag_max = ((rate / F0_MIN_HZ).floor() as usize).min(w - 1);
    if lag_min > lag_max {
        return (0.0, false);
    }

    let mut best_lag = 0usize;
    let mut best_r = f64::NEG_INFINITY;
    for lag in lag_min..=lag_max {
        let mut acc = 0.0;
        for n in 0..w - lag {
            acc += frame[n] * frame[n + lag];
        }
        let r = acc / energy;
        if r > best_r {
            best_r = r;
            best_lag = lag;
        }
    }
    if best_r >= VOICING_THRESHOLD {
        (rate / best_lag as f64, true)
    } else {
        (0.0, false)
    }
}

/// Mel scale: `2595 log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel axis between 0 Hz and the
/// Nyquist frequency, evaluated at FFT bin centers.
pub struct MelFilterbank {
    n_mels: usize,
    // Per filter: first bin index plus the triangle weight per covered bin.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, rate_hz: u32, n_mels: usize) -> Self {
        assert!(n_mels >= 1, "need at least one mel filter");
        let n_bins = n_fft / 2 + 1;
        let bin_hz = rate_hz as f64 / n_fft as f64;
        let mel_max = hz_to_mel(rate_hz as f64 / 2.0);
        let points_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
            let first_bin = (left / bin_hz).ceil() as usize;
            let last_bin = ((right / bin_hz).floor() as usize).min(n_bins - 1);
            let mut weights = Vec::new();
            if first_bin <= last_bin {
                for bin in first_bin..=last_bin {
                    let f = bin as f64 * bin_hz;
                    let wgt = if f <= center {
                        if center > left { (f - left) / (center - left) } else { 0.0 }
                    } else if right > center {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    weights.push(wgt.max(0.0));
                }
            }
            filters.push((first_bin, weights));
        }
        Self { n_mels, filters }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    /// Log filter outputs over a magnitude spectrum, floored at `1e-10`.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, weights)| {
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    if let Some(mag) = spectrum.get(first + i) {
                        acc += mag * w;
                    }
                }
                acc.max(ENERGY_FLOOR).ln()
            })
            .collect()
    }
}

/// Log mel-filterbank energies of one (already windowed) frame.
pub fn mel_filterbank_energies(frame: &[f64], rate_hz: u32, n_mels: usize) -> Vec<f64> {
    let spectrum = dsp::magnitude_spectrum(frame, dsp::N_FFT);
    MelFilterbank::new(dsp::N_FFT, rate_hz, n_mels).apply(&spectrum)
}

/// First 13 coefficients of the orthonormal DCT-II of the mel log energies.
pub fn mfcc(mel_log_energies: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if mel_log_energies.len() < N_MFCC {
        return Err(FeatureError::DimensionTooSmall {
            got: mel_log_energies.len(),
            need: N_MFCC,
        });
    }
    Ok(dsp::dct2_orthonormal(mel_log_energies, N_MFCC))
}

/// Per-frame LLD matrix, aligned one-to-one with the source frames.
#[derive(Debug, Clone)]
pub struct LldSequence {
    mat: Matrix,
}

impl LldSequence {
    /// Wraps an existing per-frame feature matrix (17 columns).
    pub fn from_matrix(mat: Matrix) -> Self {
        assert_eq!(mat.cols(), LLD_DIM, "LLD frames must have {LLD_DIM} columns");
        Self { mat }
    }

    pub fn num_frames(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.mat.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }
}

/// Full handcrafted front end: pre-emphasis, 25/10 ms framing, then per frame
/// ZCR, log-energy and pitch on the raw frame and MFCC on the windowed frame.
pub fn extract_lld_sequence(clip: &AudioClip) -> Result<LldSequence, FeatureError> {
    if clip.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    let emphasized = preprocess::pre_emphasis(clip, preprocess::DEFAULT_PRE_EMPHASIS);
    let frames = preprocess::frame_signal(&emphasized, preprocess::FRAME_MS, preprocess::HOP_MS)?;
    let rate = frames.sample_rate_hz();
    let w = frames.frame_len();
    assert!(w <= dsp::N_FFT, "frame of {w} samples exceeds the {} point transform", dsp::N_FFT);

    let window = preprocess::hamming_window(w);
    let filterbank = MelFilterbank::new(dsp::N_FFT, rate, N_MELS);
    let mut mat = Matrix::zeros(frames.num_frames(), LLD_DIM);
    let mut windowed = vec![0.0; w];
    for t in 0..frames.num_frames() {
        let frame = frames.frame(t);
        let (f0, voiced) = estimate_f0(frame, rate);
        for (dst, (s, win)) in windowed.iter_mut().zip(frame.iter().zip(&window)) {
            *dst = s * win;
        }
        let mels = filterbank.apply(&dsp::magnitude_spectrum(&windowed, dsp::N_FFT));
        let ceps = mfcc(&mels)?;

        let row = mat.row_mut(t);
        row[COL_ZCR] = zero_crossing_rate(frame);
        row[COL_LOG_ENERGY] = short_time_log_energy(frame);
        row[COL_F0] = f0;
        row[COL_VOICED] = if voiced { 1.0 } else { 0.0 };
        row[COL_MFCC..].copy_from_slice(&ceps);
    }
    Ok(LldSequence { mat })
}

/// Population statistics of one channel over the utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    /// Central moments of orders 2..=4.
    pub central: [f64; 3],
    /// Origin moments of orders 1..=4.
    pub origin: [f64; 4],
}

impl ChannelStats {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "need at least one frame");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut central = [0.0; 3];
        let mut origin = [0.0; 4];
        for &v in values {
            let d = v - mean;
            let mut dp = d * d;
            let mut vp = v;
            for k in 0..4 {
                if k >= 1 {
                    central[k - 1] += dp;
                    dp *= d;
                }
                origin[k] += vp;
                vp *= v;
            }
        }
        for c in &mut central {
            *c /= n;
        }
        for o in &mut origin {
            *o /= n;
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            variance: central[0],
            min,
            max,
            central,
            origin,
        }
    }
}

/// Utterance-level functionals over the prosodic channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceStats {
    pub log_energy: ChannelStats,
    pub f0: ChannelStats,
    pub zcr: ChannelStats,
}

pub fn utterance_statistics(seq: &LldSequence) -> UtteranceStats {
    let column = |c: usize| -> Vec<f64> { (0..seq.num_frames()).map(|t| seq.frame(t)[c]).collect() };
    UtteranceStats {
        log_energy: ChannelStats::from_values(&column(COL_LOG_ENERGY)),
        f0: ChannelStats::from_values(&column(COL_F0)),
        zcr: ChannelStats::from_values(&column(COL_ZCR)),
    }
}
