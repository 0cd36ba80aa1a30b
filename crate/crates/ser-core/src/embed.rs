//! Deep feature extractor: log-mel patches pushed through a VGGish-style
//! convolutional stack, yielding one 128-d embedding per 96-frame patch.
//!
//! The embedder is forward-only; weights arrive through a [`NamedTensorStore`]
//! and are never trained here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp;
use crate::lld::MelFilterbank;
use crate::mat::Matrix;
use crate::preprocess;
use crate::tensor::NamedTensorStore;

/// Frames per patch; 0.96 s at the 25/10 ms framing.
pub const PATCH_FRAMES: usize = 96;
/// Mel bands per patch frame.
pub const PATCH_BANDS: usize = 64;
/// Output width of the embedder.
pub const EMBEDDING_DIM: usize = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmbedError {
    #[error("cannot extract patches from an empty signal")]
    EmptySignal,
    #[error("weight shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl From<preprocess::PreprocessError> for EmbedError {
    fn from(_: preprocess::PreprocessError) -> Self {
        EmbedError::EmptySignal
    }
}

/// One 96x64 block of log-mel energies.
#[derive(Debug, Clone)]
pub struct MelPatch {
    mat: Matrix,
}

impl MelPatch {
    pub fn new(mat: Matrix) -> Self {
        assert_eq!(mat.rows(), PATCH_FRAMES);
        assert_eq!(mat.cols(), PATCH_BANDS);
        Self { mat }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.mat.row(t)
    }

    pub fn values(&self) -> &[f64] {
        self.mat.data()
    }
}

/// One 128-d embedding per patch.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    mat: Matrix,
}

impl EmbeddingSequence {
    pub fn from_matrix(mat: Matrix) -> Self {
        assert_eq!(mat.cols(), EMBEDDING_DIM);
        Self { mat }
    }

    pub fn num_patches(&self) -> usize {
        self.mat.rows()
    }

    pub fn embedding(&self, p: usize) -> &[f64] {
        self.mat.row(p)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }
}

/// Symmetric reflection of an out-of-range frame index back into `[0, len)`.
fn reflect_index(i: usize, len: usize) -> usize {
    debug_assert!(len >= 1);
    let period = 2 * len;
    let p = i % period;
    if p < len {
        p
    } else {
        period - 1 - p
    }
}

/// Cuts a clip into non-overlapping 96-frame log-mel patches (64 mel bands,
/// 25/10 ms Hamming frames, no pre-emphasis). A trailing block shorter than
/// 96 frames is dropped unless it is the only block, in which case its frames
/// are reflection-padded up to a full patch.
pub fn log_mel_patches(clip: &AudioClip) -> Result<Vec<MelPatch>, EmbedError> {
    if clip.is_empty() {
        return Err(EmbedError::EmptySignal);
    }
    let frames = preprocess::frame_signal(clip, preprocess::FRAME_MS, preprocess::HOP_MS)?;
    let frames = preprocess::apply_window(frames);
    let filterbank = MelFilterbank::new(dsp::N_FFT, frames.sample_rate_hz(), PATCH_BANDS);

    let t_total = frames.num_frames();
    let mel_rows: Vec<Vec<f64>> = (0..t_total)
        .map(|t| filterbank.apply(&dsp::magnitude_spectrum(frames.frame(t), dsp::N_FFT)))
        .collect();

    let n_patches = (t_total / PATCH_FRAMES).max(1);
    let mut patches = Vec::with_capacity(n_patches);
    for p in 0..n_patches {
        let mut mat = Matrix::zeros(PATCH_FRAMES, PATCH_BANDS);
        for r in 0..PATCH_FRAMES {
            let src = p * PATCH_FRAMES + r;
            let src = if src < t_total { src } else { reflect_index(src, t_total) };
            mat.row_mut(r).copy_from_slice(&mel_rows[src]);
        }
        patches.push(MelPatch::new(mat));
    }
    Ok(patches)
}

/// A layer of the convolutional embedder.
#[derive(Debug, Clone)]
pub enum Layer {
    /// 3x3 convolution, stride 1, zero same-padding, ReLU.
    Conv { name: &'static str, out_channels: usize },
    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool,
    /// Fully connected layer over the flattened activations.
    Dense { name: &'static str, units: usize, relu: bool },
}

/// Feed-forward convolutional network over a single-channel input image.
/// Activations are laid out height x width x channels.
#[derive(Debug, Clone)]
pub struct ConvNet {
    input_h: usize,
    input_w: usize,
    layers: Vec<Layer>,
}

impl ConvNet {
    pub fn new(input_h: usize, input_w: usize, layers: Vec<Layer>) -> Self {
        Self { input_h, input_w, layers }
    }

    /// The VGGish layer pattern over a 96x64 patch.
    pub fn vggish() -> Self {
        Self::new(
            PATCH_FRAMES,
            PATCH_BANDS,
            vec![
                Layer::Conv { name: "conv1", out_channels: 64 },
                Layer::MaxPool,
                Layer::Conv { name: "conv2", out_channels: 128 },
                Layer::MaxPool,
                Layer::Conv { name: "conv3_1", out_channels: 256 },
                Layer::Conv { name: "conv3_2", out_channels: 256 },
                Layer::MaxPool,
                Layer::Conv { name: "conv4_1", out_channels: 512 },
                Layer::Conv { name: "conv4_2", out_channels: 512 },
                Layer::MaxPool,
                Layer::Dense { name: "fc1", units: 4096, relu: true },
                Layer::Dense { name: "fc2", units: 4096, relu: true },
                Layer::Dense { name: "embedding", units: EMBEDDING_DIM, relu: false },
            ],
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Expected weight tensors, in layer order: `(name, shape)` pairs for
    /// `<layer>/w` and `<layer>/b`.
    pub fn weight_spec(&self) -> Vec<(String, Vec<usize>)> {
        let mut spec = Vec::new();
        let (mut h, mut w, mut c) = (self.input_h, self.input_w, 1usize);
        let mut flat = false;
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, out_channels } => {
                    assert!(!flat, "conv after flatten");
                    spec.push((format!("{name}/w"), vec![*out_channels, c, 3, 3]));
                    spec.push((format!("{name}/b"), vec![*out_channels]));
                    c = *out_channels;
                }
                Layer::MaxPool => {
                    h /= 2;
                    w /= 2;
                }
                Layer::Dense { name, units, .. } => {
                    let in_dim = if flat { c } else { h * w * c };
                    flat = true;
                    spec.push((format!("{name}/w"), vec![*units, in_dim]));
                    spec.push((format!("{name}/b"), vec![*units]));
                    c = *units;
                }
            }
        }
        spec
    }

    pub fn output_dim(&self) -> usize {
        self.weight_spec().last().map(|(_, s)| s[0]).unwrap_or(0)
    }

    /// Random Glorot-uniform weights for this architecture (biases zero).
    /// Values are quantized to f32 so they survive the container format
    /// bit-exactly.
    pub fn random_weights(&self, seed: u64) -> NamedTensorStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = NamedTensorStore::new();
        for (name, shape) in self.weight_spec() {
            let numel: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                let (fan_out, fan_in) = match shape.len() {
                    2 => (shape[0], shape[1]),
                    4 => (shape[0] * shape[2] * shape[3], shape[1] * shape[2] * shape[3]),
                    _ => unreachable!(),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| (rng.gen_range(-a..a) as f32) as f64).collect()
            };
            store.insert(&name, shape, data).unwrap();
        }
        store
    }

    fn tensor<'a>(
        store: &'a NamedTensorStore,
        name: &str,
        shape: &[usize],
    ) -> Result<&'a [f64], EmbedError> {
        let t = store
            .get(name)
            .ok_or_else(|| EmbedError::ShapeMismatch(format!("missing tensor {name:?}")))?;
        if t.shape != shape {
            return Err(EmbedError::ShapeMismatch(format!(
                "{name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    /// Runs the forward pass over a flat HxWx1 input.
    pub fn forward(&self, input: &[f64], weights: &NamedTensorStore) -> Result<Vec<f64>, EmbedError> {
        if input.len() != self.input_h * self.input_w {
            return Err(EmbedError::ShapeMismatch(format!(
                "input of {} values, expected {}x{}",
                input.len(),
                self.input_h,
                self.input_w
            )));
        }
        let (mut h, mut w, mut c) = (self.input_h, self.input_w, 1usize);
        let mut act = input.to_vec();
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, out_channels } => {
                    let wt = Self::tensor(weights, &format!("{name}/w"), &[*out_channels, c, 3, 3])?;
                    let bias = Self::tensor(weights, &format!("{name}/b"), &[*out_channels])?;
                    act = conv3x3_same_relu(&act, h, w, c, wt, bias, *out_channels);
                    c = *out_channels;
                }
                Layer::MaxPool => {
                    act = maxpool2(&act, h, w, c);
                    h /= 2;
                    w /= 2;
                }
                Layer::Dense { name, units, relu } => {
                    let in_dim = act.len();
                    let wt = Self::tensor(weights, &format!("{name}/w"), &[*units, in_dim])?;
                    let bias = Self::tensor(weights, &format!("{name}/b"), &[*units])?;
                    let mut out = Vec::with_capacity(*units);
                    for u in 0..*units {
                        let row = &wt[u * in_dim..(u + 1) * in_dim];
                        let mut acc = bias[u];
                        for (x, k) in act.iter().zip(row) {
                            acc += x * k;
                        }
                        out.push(if *relu { acc.max(0.0) } else { acc });
                    }
                    act = out;
                    h = 1;
                    w = 1;
                    c = act.len();
                }
            }
        }
        Ok(act)
    }
}

/// 3x3 same-padded convolution with ReLU. Weights arrive as
/// `[out][in][ky][kx]` and are repacked to `[out][ky][kx][in]` so the inner
/// product runs over contiguous memory.
fn conv3x3_same_relu(
    input: &[f64],
    h: usize,
    w: usize,
    c_in: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let mut packed = vec![0.0; weights.len()];
    for oc in 0..c_out {
        for ic in 0..c_in {
            for ky in 0..3 {
                for kx in 0..3 {
                    let src = ((oc * c_in + ic) * 3 + ky) * 3 + kx;
                    let dst = ((oc * 3 + ky) * 3 + kx) * c_in + ic;
                    packed[dst] = weights[src];
                }
            }
        }
    }

    let mut out = vec![0.0; h * w * c_out];
    for y in 0..h {
        for x in 0..w {
            let out_base = (y * w + x) * c_out;
            for oc in 0..c_out {
                let mut acc = bias[oc];
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = x as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let in_base = (iy as usize * w + ix as usize) * c_in;
                        let w_base = ((oc * 3 + ky) * 3 + kx) * c_in;
                        let px = &input[in_base..in_base + c_in];
                        let kw = &packed[w_base..w_base + c_in];
                        for (p, k) in px.iter().zip(kw) {
                            acc += p * k;
                        }
                    }
                }
                out[out_base + oc] = acc.max(0.0);
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2; trailing odd row/column is dropped.
fn maxpool2(input: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            let out_base = (y * ow + x) * c;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let in_base = ((2 * y + dy) * w + (2 * x + dx)) * c;
                for ch in 0..c {
                    let v = input[in_base + ch];
                    if v > out[out_base + ch] {
                        out[out_base + ch] = v;
                    }
                }
            }
        }
    }
    out
}

/// Embeds one patch with the VGGish architecture. Deterministic: identical
/// patch and weights give a bit-identical embedding.
pub fn embed_patch(patch: &MelPatch, weights: &NamedTensorStore) -> Result<Vec<f64>, EmbedError> {
    ConvNet::vggish().forward(patch.values(), weights)
}

/// Full deep stream for a clip: patches, then one embedding per patch.
pub fn extract_embedding_sequence(
    clip: &AudioClip,
    weights: &NamedTensorStore,
) -> Result<EmbeddingSequence, EmbedError> {
    let patches = log_mel_patches(clip)?;
    let net = ConvNet::vggish();
    let mut mat = Matrix::zeros(patches.len(), EMBEDDING_DIM);
    for (p, patch) in patches.iter().enumerate() {
        let emb = net.forward(patch.values(), weights)?;
        mat.row_mut(p).copy_from_slice(&emb);
    }
    Ok(EmbeddingSequence::from_matrix(mat))
}
