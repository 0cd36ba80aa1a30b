//! WAV ingestion, normalization and resampling into the canonical mono
//! floating-point representation used by every downstream stage.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Canonical internal rate. 25 ms frames are exactly 400 samples here.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

const I16_SCALE: f64 = 32_768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed wav header: {0}")]
    MalformedHeader(String),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono sample sequence with its sample rate. Amplitudes produced by this
/// module stay within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Loads a RIFF/WAVE file holding 16-bit integer PCM. Samples are scaled by
/// `1/32768`; multi-channel input is down-mixed by the per-sample mean. The
/// clip keeps the file's native rate.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::MalformedHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::MalformedHeader(format!(
            "bad magic {:?}, expected \"RIFF\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader("missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| AudioError::MalformedHeader("chunk size overflow".into()))?;
        if body_end > bytes.len() {
            return Err(AudioError::MalformedHeader(format!(
                "chunk {:?} of {} bytes overruns file",
                String::from_utf8_lossy(id),
                size
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::MalformedHeader("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some((
                    read_u16(body, 0),
                    read_u16(body, 2),
                    read_u32(body, 4),
                    read_u16(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::MalformedHeader("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedHeader("missing data chunk".into()))?;

    if format != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "audio_format={format}, only PCM (1) is supported"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "bits_per_sample={bits}, only 16-bit PCM is supported"
        )));
    }
    if channels == 0 {
        return Err(AudioError::MalformedHeader("zero channels".into()));
    }
    if rate == 0 {
        return Err(AudioError::MalformedHeader("zero sample rate".into()));
    }

    let frame_bytes = 2 * channels as usize;
    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0.0f64;
        for c in 0..channels as usize {
            let at = f * frame_bytes + 2 * c;
            let v = i16::from_le_bytes([data[at], data[at + 1]]);
            acc += v as f64 / I16_SCALE;
        }
        samples.push(acc / channels as f64);
    }
    Ok(AudioClip::new(samples, rate))
}

/// Writes a clip in canonical form: mono 16-bit PCM, little-endian.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * I16_SCALE).round().clamp(-32_768.0, 32_767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Linear-interpolation resampling. Output sample `i` reads source position
/// `i * src/target`; positions past the last sample clamp to it. Output length
/// is `round(n * target/src)`. Same-rate input is returned unchanged.
pub fn resample(clip: &AudioClip, target_hz: u32) -> AudioClip {
    assert!(target_hz > 0, "target rate must be positive");
    if clip.sample_rate_hz == target_hz {
        return clip.clone();
    }
    if clip.samples.is_empty() {
        return AudioClip::new(Vec::new(), target_hz);
    }
    let n_in = clip.samples.len();
    let ratio = target_hz as f64 / clip.sample_rate_hz as f64;
    let n_out = (n_in as f64 * ratio).round() as usize;
    let step = clip.sample_rate_hz as f64 / target_hz as f64;
    let last = n_in - 1;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as f64 * step;
        let idx = pos.floor() as usize;
        let v = if idx >= last {
            clip.samples[last]
        } else {
            let frac = pos - idx as f64;
            clip.samples[idx] * (1.0 - frac) + clip.samples[idx + 1] * frac
        };
        out.push(v.clamp(-1.0, 1.0));
    }
    AudioClip::new(out, target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, rate: u32, interleaved: &[i16]) -> Vec<u8> {
        let data_len = (interleaved.len() * 2) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for &v in interleaved {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn mono_samples_scale_by_fixed_point_step() {
        let clip = parse_wav(&wav_bytes(1, 16_000, &[0, 16_384, -32_768])).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate_hz(), 16_000);
    }

    #[test]
    fn stereo_downmix_is_per_sample_mean() {
        let l = (0.2 * I16_SCALE).round() as i16;
        let r = (0.4 * I16_SCALE).round() as i16;
        let clip = parse_wav(&wav_bytes(2, 8_000, &[l, r])).unwrap();
        assert_eq!(clip.len(), 1);
        assert!((clip.samples()[0] - 0.3).abs() < 1.0 / I16_SCALE);
    }

    #[test]
    fn downmix_preserves_amplitude_bound() {
        let clip = parse_wav(&wav_bytes(2, 16_000, &[i16::MIN, i16::MIN, i16::MAX, i16::MAX])).unwrap();
        assert!(clip.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
        assert_eq!(clip.samples()[0], -1.0);
    }

    #[test]
    fn rifx_magic_is_rejected() {
        let mut bytes = wav_bytes(1, 16_000, &[0]);
        bytes[3] = b'X';
        match parse_wav(&bytes) {
            Err(AudioError::MalformedHeader(_)) => {}
            other => panic!("expected MalformedHeader, got {other:?}"),
        }
    }

    #[test]
    fn float_pcm_is_unsupported() {
        let mut bytes = wav_bytes(1, 16_000, &[0]);
        bytes[20] = 3; // IEEE float tag
        match parse_wav(&bytes) {
            Err(AudioError::UnsupportedFormat(_)) => {}
            other => panic!("expected UnsupportedFormat, got {other:?}"),
        }
    }

    #[test]
    fn truncated_data_chunk_is_malformed() {
        let mut bytes = wav_bytes(1, 16_000, &[1, 2, 3]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_wav(&bytes), Err(AudioError::MalformedHeader(_))));
    }

    #[test]
    fn save_then_load_round_trips_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let samples: Vec<f64> = (0..777).map(|i| ((i as f64) * 0.013).sin() * 0.9).collect();
        let clip = AudioClip::new(samples.clone(), 16_000);
        save_wav(&clip, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / I16_SCALE, "{a} vs {b}");
        }
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 16_000);
        let out = resample(&clip, 16_000);
        assert_eq!(out.samples(), clip.samples());
    }

    #[test]
    fn resample_constant_doubles_length() {
        let clip = AudioClip::new(vec![0.5; 800], 8_000);
        let out = resample(&clip, 16_000);
        assert!((out.len() as i64 - 1600).abs() <= 1);
        assert!(out.samples().iter().all(|&s| (s - 0.5).abs() < 1e-12));
        assert_eq!(out.sample_rate_hz(), 16_000);
    }

    #[test]
    fn resample_ramp_interpolates_and_clamps_tail() {
        // Two-sample ramp doubled: positions 0, 0.5, 1.0, 1.5; the final
        // position lies past the last sample and clamps to it.
        let clip = AudioClip::new(vec![0.0, 1.0], 8_000);
        let out = resample(&clip, 16_000);
        let expect = [0.0, 0.5, 1.0, 1.0];
        assert_eq!(out.len(), expect.len());
        for (a, b) in out.samples().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn down_up_round_trip_recovers_linear_signals() {
        let n = 2_000;
        let ramp: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let clip = AudioClip::new(ramp.clone(), 16_000);
        let up = resample(&clip, 32_000);
        let back = resample(&up, 16_000);
        assert_eq!(back.len(), n);
        for (a, b) in ramp.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
