//! Pre-emphasis, framing, windowing and endpoint detection — everything that
//! happens between the raw clip and feature extraction.

use thiserror::Error;

use crate::audio::AudioClip;
use crate::lld;

/// Default pre-emphasis coefficient for speech.
pub const DEFAULT_PRE_EMPHASIS: f64 = 0.97;
/// Analysis window length in milliseconds (400 samples at 16 kHz).
pub const FRAME_MS: f64 = 25.0;
/// Hop in milliseconds; 25 ms windows with a 15 ms overlap.
pub const HOP_MS: f64 = 10.0;

const ZCR_THRESHOLD: f64 = 0.25;
const NOISE_FLOOR_FRAMES: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("cannot frame an empty signal")]
    EmptySignal,
}

/// Frames of a signal, one per row. Row `t` starts at sample `t * hop` of the
/// source; a signal shorter than one window yields a single zero-padded frame.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    data: Vec<f64>,
    frame_len: usize,
    hop: usize,
    num_frames: usize,
    sample_rate_hz: u32,
}

impl FrameMatrix {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.frame_len..(t + 1) * self.frame_len]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.frame_len..(t + 1) * self.frame_len]
    }
}

/// First-order high-pass filter: `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
/// The output may exceed `[-1, 1]`; it feeds feature extraction, not playback.
pub fn pre_emphasis(clip: &AudioClip, alpha: f64) -> AudioClip {
    assert!((0.0..1.0).contains(&alpha), "alpha must lie in [0, 1)");
    let x = clip.samples();
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
        for n in 1..x.len() {
            y.push(x[n] - alpha * x[n - 1]);
        }
    }
    AudioClip::new(y, clip.sample_rate_hz())
}

/// Splits a clip into overlapping frames. With `N >= W` the frame count is
/// `floor((N - W)/H) + 1` and any trailing partial window is dropped; with
/// `N < W` the single frame is zero-padded on the right.
pub fn frame_signal(clip: &AudioClip, frame_ms: f64, hop_ms: f64) -> Result<FrameMatrix, PreprocessError> {
    assert!(
        (10.0..=30.0).contains(&frame_ms),
        "frame length must lie in [10, 30] ms"
    );
    assert!(hop_ms > 0.0 && hop_ms <= frame_ms, "hop must lie in (0, frame_ms]");
    let x = clip.samples();
    if x.is_empty() {
        return Err(PreprocessError::EmptySignal);
    }
    let rate = clip.sample_rate_hz();
    let frame_len = (frame_ms / 1000.0 * rate as f64).round() as usize;
    let hop = (hop_ms / 1000.0 * rate as f64).round() as usize;

    if x.len() < frame_len {
        let mut data = vec![0.0; frame_len];
        data[..x.len()].copy_from_slice(x);
        return Ok(FrameMatrix {
            data,
            frame_len,
            hop,
            num_frames: 1,
            sample_rate_hz: rate,
        });
    }

    let num_frames = (x.len() - frame_len) / hop + 1;
    let mut data = Vec::with_capacity(num_frames * frame_len);
    for t in 0..num_frames {
        data.extend_from_slice(&x[t * hop..t * hop + frame_len]);
    }
    Ok(FrameMatrix {
        data,
        frame_len,
        hop,
        num_frames,
        sample_rate_hz: rate,
    })
}

/// Hamming window of the given length: `0.54 - 0.46 cos(2 pi n / (W - 1))`.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Multiplies every frame elementwise by a Hamming window.
pub fn apply_window(mut frames: FrameMatrix) -> FrameMatrix {
    let window = hamming_window(frames.frame_len());
    for t in 0..frames.num_frames() {
        for (s, w) in frames.frame_mut(t).iter_mut().zip(&window) {
            *s *= w;
        }
    }
    frames
}

/// Outcome of endpoint detection: the trimmed clip, plus a flag set when no
/// frame cleared either threshold (in which case the input is returned whole).
#[derive(Debug, Clone)]
pub struct EndpointResult {
    pub clip: AudioClip,
    pub no_speech: bool,
}

/// Double-threshold endpoint detection. A frame counts as speech when its
/// short-time energy exceeds `max(4 * noise_floor, 1e-4 * W)` — the noise
/// floor being the mean energy of the first five frames — or its
/// zero-crossing rate exceeds 0.25. Returns the sub-clip spanning the first
/// through last speech frame; the flag path never fails so batch pipelines
/// keep going.
pub fn detect_endpoints(clip: &AudioClip) -> EndpointResult {
    let frames = match frame_signal(clip, FRAME_MS, HOP_MS) {
        Ok(f) => f,
        Err(PreprocessError::EmptySignal) => {
            return EndpointResult {
                clip: clip.clone(),
                no_speech: true,
            }
        }
    };
    let t_total = frames.num_frames();
    let w = frames.frame_len();

    let energy: Vec<f64> = (0..t_total)
        .map(|t| frames.frame(t).iter().map(|s| s * s).sum())
        .collect();
    let noise_floor =
        energy[..NOISE_FLOOR_FRAMES.min(t_total)].iter().sum::<f64>() / NOISE_FLOOR_FRAMES.min(t_total) as f64;
    let energy_threshold = (noise_floor * 4.0).max(1e-4 * w as f64);

    let speech: Vec<bool> = (0..t_total)
        .map(|t| energy[t] > energy_threshold || lld::zero_crossing_rate(frames.frame(t)) > ZCR_THRESHOLD)
        .collect();

    let first = speech.iter().position(|&s| s);
    let last = speech.iter().rposition(|&s| s);
    match (first, last) {
        (Some(first), Some(last)) => {
            let start = first * frames.hop();
            let end = if last == t_total - 1 {
                clip.len()
            } else {
                last * frames.hop() + w
            };
            EndpointResult {
                clip: AudioClip::new(clip.samples()[start..end].to_vec(), clip.sample_rate_hz()),
                no_speech: false,
            }
        }
        _ => EndpointResult {
            clip: clip.clone(),
            no_speech: true,
        },
    }
}
