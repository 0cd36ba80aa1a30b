//! The classifier: two fully connected layers, a stacked (double) BiLSTM, and
//! windowed local attention over the top-layer states, ending in a linear
//! class projection. Includes the exact reverse-mode backward pass.
//!
//! Gate blocks inside every `4H`-wide LSTM tensor are ordered
//! `[input, forget, cell, output]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mat::Matrix;
use crate::tensor::{NamedTensorStore, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence {index} has length {length}, valid range is 1..={t_max}")]
    LengthOutOfRange { index: usize, length: usize, t_max: usize },
    #[error("attention window {window} is not odd")]
    EvenWindow { window: usize },
    #[error("trace does not match this call: {0}")]
    TraceMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Input feature width (17, 128 or 145 depending on feature mode).
    pub d_in: usize,
    /// Widths of the two fully connected layers in front of the recurrence.
    pub fc_dims: [usize; 2],
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
    /// Stacked BiLSTM layers.
    pub lstm_layers: usize,
    /// Local attention window `L = 2k + 1`; `L = 1` recovers plain per-frame
    /// attention.
    pub attn_window: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Defaults: FC 256/256, hidden 100, two BiLSTM layers, window 5.
    pub fn new(d_in: usize, n_classes: usize) -> Self {
        Self {
            d_in,
            fc_dims: [256, 256],
            lstm_hidden: 100,
            lstm_layers: 2,
            attn_window: 5,
            n_classes,
        }
    }

    /// Width of the concatenated bidirectional state.
    pub fn bi_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.attn_window.is_multiple_of(2) {
            return Err(ModelError::EvenWindow { window: self.attn_window });
        }
        for (what, v) in [
            ("d_in", self.d_in),
            ("fc_dims[0]", self.fc_dims[0]),
            ("fc_dims[1]", self.fc_dims[1]),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("attn_window", self.attn_window),
            ("n_classes", self.n_classes),
        ] {
            if v == 0 {
                return Err(ModelError::ShapeMismatch(format!("{what} must be positive")));
            }
        }
        Ok(())
    }

    /// LSTM input width at a given layer (0-based).
    fn lstm_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.fc_dims[1]
        } else {
            self.bi_dim()
        }
    }

    /// Expected parameter tensors in their canonical (insertion) order.
    pub fn param_spec(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.lstm_hidden;
        let mut spec = vec![
            ("fc1/w".to_string(), vec![self.fc_dims[0], self.d_in]),
            ("fc1/b".to_string(), vec![self.fc_dims[0]]),
            ("fc2/w".to_string(), vec![self.fc_dims[1], self.fc_dims[0]]),
            ("fc2/b".to_string(), vec![self.fc_dims[1]]),
        ];
        for layer in 0..self.lstm_layers {
            let d_in = self.lstm_in(layer);
            for dir in ["fwd", "bwd"] {
                let base = format!("lstm{}_{dir}", layer + 1);
                spec.push((format!("{base}/wx"), vec![4 * h, d_in]));
                spec.push((format!("{base}/wh"), vec![4 * h, h]));
                spec.push((format!("{base}/b"), vec![4 * h]));
            }
        }
        spec.push(("attn/u".to_string(), vec![self.bi_dim()]));
        spec.push(("out/w".to_string(), vec![self.n_classes, self.bi_dim()]));
        spec.push(("out/b".to_string(), vec![self.n_classes]));
        spec
    }
}

/// Named parameter tensors for the whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub store: NamedTensorStore,
}

impl ModelParams {
    fn tensor<'a>(&'a self, name: &str) -> Result<&'a [f64], ModelError> {
        self.store
            .get(name)
            .map(|t| t.data.as_slice())
            .ok_or_else(|| ModelError::ShapeMismatch(format!("missing parameter {name:?}")))
    }

    /// Checks that every expected tensor exists with the right shape.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ModelError> {
        for (name, shape) in config.param_spec() {
            let t = self
                .store
                .get(&name)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("missing parameter {name:?}")))?;
            if t.shape != shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name:?} has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights (`a = sqrt(6/(fan_in + fan_out))` per tensor),
/// zero biases except the LSTM forget-gate block, which starts at 1.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    config.validate().expect("invalid model config");
    let h = config.lstm_hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = NamedTensorStore::new();
    for (name, shape) in config.param_spec() {
        let numel: usize = shape.iter().product();
        let data = if shape.len() == 2 {
            let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..numel).map(|_| rng.gen_range(-a..a)).collect()
        } else if name == "attn/u" {
            let a = (6.0 / (shape[0] + 1) as f64).sqrt();
            (0..numel).map(|_| rng.gen_range(-a..a)).collect()
        } else {
            let mut bias = vec![0.0; numel];
            if name.starts_with("lstm") && name.ends_with("/b") {
                bias[h..2 * h].fill(1.0);
            }
            bias
        };
        store.insert(&name, shape, data).unwrap();
    }
    ModelParams { store }
}

/// A padded batch: `B x T_max x D` plus the true frame counts.
#[derive(Debug, Clone)]
pub struct Batch {
    data: Vec<f64>,
    pub batch: usize,
    pub t_max: usize,
    pub dim: usize,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn zeros(batch: usize, t_max: usize, dim: usize, lengths: Vec<usize>) -> Self {
        assert_eq!(lengths.len(), batch);
        Self {
            data: vec![0.0; batch * t_max * dim],
            batch,
            t_max,
            dim,
            lengths,
        }
    }

    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let at = (b * self.t_max + t) * self.dim;
        &self.data[at..at + self.dim]
    }

    pub fn frame_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let at = (b * self.t_max + t) * self.dim;
        &mut self.data[at..at + self.dim]
    }
}

/// States of one LSTM direction, indexed by original frame time.
#[derive(Debug, Clone)]
pub struct DirTrace {
    /// Post-activation gate values per frame, `[i f g o]` blocks of width H.
    pub gates: Matrix,
    pub cell: Matrix,
    pub cell_tanh: Matrix,
    pub hidden: Matrix,
}

/// Everything the backward pass needs for one sequence.
#[derive(Debug, Clone)]
pub struct SeqTrace {
    pub len: usize,
    pub input: Matrix,
    pub fc1_out: Matrix,
    pub fc2_out: Matrix,
    /// Input rows seen by each LSTM layer (layer 0 input equals `fc2_out`).
    pub lstm_inputs: Vec<Matrix>,
    /// Per layer: `[forward, backward]` direction traces.
    pub directions: Vec<[DirTrace; 2]>,
    /// Window means the attention scores were taken against.
    pub attn_pooled: Matrix,
    pub attn_scores: Vec<f64>,
    pub attn_weights: Vec<f64>,
    pub context: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Forward activations for a whole batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub config: ModelConfig,
    pub seqs: Vec<SeqTrace>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `rows x cols` weight block.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, slot) in out.iter_mut().enumerate().take(rows) {
        *slot = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += W^T y`.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (slot, wv) in out.iter_mut().zip(row) {
            *slot += wv * yr;
        }
    }
}

/// `A += y (x)^T`, with `A` stored row-major as `y.len() x x.len()`.
fn outer_add(a: &mut [f64], y: &[f64], x: &[f64]) {
    debug_assert_eq!(a.len(), y.len() * x.len());
    for (r, &yv) in y.iter().enumerate() {
        if yv == 0.0 {
            continue;
        }
        let row = &mut a[r * x.len()..(r + 1) * x.len()];
        for (slot, xv) in row.iter_mut().zip(x) {
            *slot += yv * xv;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs one LSTM direction over the valid frames of `input`. `reverse` walks
/// the frames back to front; states are stored at their original frame index
/// either way.
pub(crate) fn run_lstm_direction(
    wx: &[f64],
    wh: &[f64],
    bias: &[f64],
    input: &Matrix,
    hidden: usize,
    reverse: bool,
) -> DirTrace {
    let len = input.rows();
    let d_in = input.cols();
    let h4 = 4 * hidden;
    let mut trace = DirTrace {
        gates: Matrix::zeros(len, h4),
        cell: Matrix::zeros(len, hidden),
        cell_tanh: Matrix::zeros(len, hidden),
        hidden: Matrix::zeros(len, hidden),
    };
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    let mut z = vec![0.0; h4];
    let times: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in times {
        matvec(wx, h4, d_in, input.row(t), &mut z);
        for r in 0..h4 {
            z[r] += dot(&wh[r * hidden..(r + 1) * hidden], &h_prev) + bias[r];
        }
        let gates = trace.gates.row_mut(t);
        for j in 0..hidden {
            gates[j] = sigmoid(z[j]); // input gate
            gates[hidden + j] = sigmoid(z[hidden + j]); // forget gate
            gates[2 * hidden + j] = z[2 * hidden + j].tanh(); // cell candidate
            gates[3 * hidden + j] = sigmoid(z[3 * hidden + j]); // output gate
        }
        for j in 0..hidden {
            let c = gates[hidden + j] * c_prev[j] + gates[j] * gates[2 * hidden + j];
            let tc = c.tanh();
            trace.cell.row_mut(t)[j] = c;
            trace.cell_tanh.row_mut(t)[j] = tc;
            trace.hidden.row_mut(t)[j] = gates[3 * hidden + j] * tc;
        }
        h_prev.copy_from_slice(trace.hidden.row(t));
        c_prev.copy_from_slice(trace.cell.row(t));
    }
    trace
}

/// Backpropagation through time for one direction. Returns the gradient
/// contribution w.r.t. this layer's input rows.
#[allow(clippy::too_many_arguments)]
fn backward_lstm_direction(
    trace: &DirTrace,
    wx: &[f64],
    wh: &[f64],
    input: &Matrix,
    dh_ext: &Matrix,
    hidden: usize,
    reverse: bool,
    dwx: &mut [f64],
    dwh: &mut [f64],
    db: &mut [f64],
) -> Matrix {
    let len = input.rows();
    let d_in = input.cols();
    let h4 = 4 * hidden;
    let mut dinput = Matrix::zeros(len, d_in);
    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    // Walk the reverse of the forward processing order.
    let times: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..len)
    } else {
        Box::new((0..len).rev())
    };
    let zeros = vec![0.0; hidden];
    for t in times {
        let prev: Option<usize> = if reverse {
            if t + 1 < len { Some(t + 1) } else { None }
        } else {
            t.checked_sub(1)
        };
        let c_prev = prev.map_or(zeros.as_slice(), |p| trace.cell.row(p));
        let h_prev = prev.map_or(zeros.as_slice(), |p| trace.hidden.row(p));
        let gates = trace.gates.row(t);
        let tc = trace.cell_tanh.row(t);
        for j in 0..hidden {
            let (ig, fg, gg, og) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            let dh = dh_ext.row(t)[j] + dh_carry[j];
            let d_og = dh * tc[j];
            let dc = dh * og * (1.0 - tc[j] * tc[j]) + dc_carry[j];
            let d_fg = dc * c_prev[j];
            let d_ig = dc * gg;
            let d_gg = dc * ig;
            dz[j] = d_ig * ig * (1.0 - ig);
            dz[hidden + j] = d_fg * fg * (1.0 - fg);
            dz[2 * hidden + j] = d_gg * (1.0 - gg * gg);
            dz[3 * hidden + j] = d_og * og * (1.0 - og);
            dc_carry[j] = dc * fg;
        }
        outer_add(dwx, &dz, input.row(t));
        outer_add(dwh, &dz, h_prev);
        for (slot, v) in db.iter_mut().zip(&dz) {
            *slot += v;
        }
        matvec_t_add(wx, h4, d_in, &dz, dinput.row_mut(t));
        dh_carry.fill(0.0);
        matvec_t_add(wh, h4, hidden, &dz, &mut dh_carry);
    }
    dinput
}

/// `(context, weights, scores, pooled)` of one attention pass.
type AttentionParts = (Vec<f64>, Vec<f64>, Vec<f64>, Matrix);

fn local_attention_full(
    h: &Matrix,
    attn_u: &[f64],
    window: usize,
    valid_len: usize,
) -> Result<AttentionParts, ModelError> {
    if window.is_multiple_of(2) {
        return Err(ModelError::EvenWindow { window });
    }
    assert!(valid_len >= 1 && valid_len <= h.rows(), "valid_len out of range");
    assert_eq!(attn_u.len(), h.cols(), "attention vector width mismatch");
    let k = (window - 1) / 2;

    let mut pooled = Matrix::zeros(valid_len, h.cols());
    let mut scores = vec![0.0; h.rows()];
    for t in 0..valid_len {
        let lo = t.saturating_sub(k);
        let hi = (t + k).min(valid_len - 1);
        let n = (hi - lo + 1) as f64;
        for s in lo..=hi {
            for (slot, v) in pooled.row_mut(t).iter_mut().zip(h.row(s)) {
                *slot += v / n;
            }
        }
        scores[t] = dot(attn_u, pooled.row(t));
    }

    let max = scores[..valid_len]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; h.rows()];
    let mut norm = 0.0;
    for t in 0..valid_len {
        let e = (scores[t] - max).exp();
        weights[t] = e;
        norm += e;
    }
    for w in &mut weights[..valid_len] {
        *w /= norm;
    }

    let mut context = vec![0.0; h.cols()];
    for t in 0..valid_len {
        let wt = weights[t];
        for (slot, v) in context.iter_mut().zip(h.row(t)) {
            *slot += wt * v;
        }
    }
    Ok((context, weights, scores, pooled))
}

/// Windowed local attention. Per frame the score is the attention vector
/// against the mean of `h` over `[t-k, t+k]` clipped to the valid range;
/// weights are a softmax over valid frames (exact zeros on padding) and the
/// context aggregates the raw `h_t`.
pub fn local_attention(
    h: &Matrix,
    attn_u: &[f64],
    window: usize,
    valid_len: usize,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    local_attention_full(h, attn_u, window, valid_len).map(|(c, w, _, _)| (c, w))
}

/// Full forward pass over a padded batch. Frames beyond each sequence's
/// length are never read, so extra padding cannot change the logits.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<(Matrix, ForwardTrace), ModelError> {
    config.validate()?;
    params.validate(config)?;
    if batch.dim != config.d_in {
        return Err(ModelError::ShapeMismatch(format!(
            "batch feature width {} does not match d_in {}",
            batch.dim, config.d_in
        )));
    }

    let (fc0, fc1) = (config.fc_dims[0], config.fc_dims[1]);
    let h = config.lstm_hidden;
    let w1 = params.tensor("fc1/w")?;
    let b1 = params.tensor("fc1/b")?;
    let w2 = params.tensor("fc2/w")?;
    let b2 = params.tensor("fc2/b")?;
    let attn_u = params.tensor("attn/u")?;
    let out_w = params.tensor("out/w")?;
    let out_b = params.tensor("out/b")?;

    let mut logits = Matrix::zeros(batch.batch, config.n_classes);
    let mut seqs = Vec::with_capacity(batch.batch);
    for b in 0..batch.batch {
        let len = batch.lengths[b];
        if len == 0 || len > batch.t_max {
            return Err(ModelError::LengthOutOfRange {
                index: b,
                length: len,
                t_max: batch.t_max,
            });
        }

        let mut input = Matrix::zeros(len, config.d_in);
        let mut fc1_out = Matrix::zeros(len, fc0);
        let mut fc2_out = Matrix::zeros(len, fc1);
        for t in 0..len {
            input.row_mut(t).copy_from_slice(batch.frame(b, t));
            matvec(w1, fc0, config.d_in, input.row(t), fc1_out.row_mut(t));
            for (j, slot) in fc1_out.row_mut(t).iter_mut().enumerate() {
                *slot = (*slot + b1[j]).max(0.0);
            }
            matvec(w2, fc1, fc0, fc1_out.row(t), fc2_out.row_mut(t));
            for (j, slot) in fc2_out.row_mut(t).iter_mut().enumerate() {
                *slot = (*slot + b2[j]).max(0.0);
            }
        }

        let mut lstm_inputs = Vec::with_capacity(config.lstm_layers);
        let mut directions = Vec::with_capacity(config.lstm_layers);
        let mut layer_input = fc2_out.clone();
        for layer in 0..config.lstm_layers {
            let base = format!("lstm{}", layer + 1);
            let fwd = run_lstm_direction(
                params.tensor(&format!("{base}_fwd/wx"))?,
                params.tensor(&format!("{base}_fwd/wh"))?,
                params.tensor(&format!("{base}_fwd/b"))?,
                &layer_input,
                h,
                false,
            );
            let bwd = run_lstm_direction(
                params.tensor(&format!("{base}_bwd/wx"))?,
                params.tensor(&format!("{base}_bwd/wh"))?,
                params.tensor(&format!("{base}_bwd/b"))?,
                &layer_input,
                h,
                true,
            );
            let mut next = Matrix::zeros(len, 2 * h);
            for t in 0..len {
                next.row_mut(t)[..h].copy_from_slice(fwd.hidden.row(t));
                next.row_mut(t)[h..].copy_from_slice(bwd.hidden.row(t));
            }
            lstm_inputs.push(layer_input);
            directions.push([fwd, bwd]);
            layer_input = next;
        }

        let (context, weights, scores, pooled) =
            local_attention_full(&layer_input, attn_u, config.attn_window, len)?;
        let row = logits.row_mut(b);
        matvec(out_w, config.n_classes, config.bi_dim(), &context, row);
        for (slot, bias) in row.iter_mut().zip(out_b) {
            *slot += bias;
        }

        seqs.push(SeqTrace {
            len,
            input,
            fc1_out,
            fc2_out,
            lstm_inputs,
            directions,
            attn_pooled: pooled,
            attn_scores: scores,
            attn_weights: weights,
            context,
            logits: logits.row(b).to_vec(),
        });
    }

    Ok((
        logits,
        ForwardTrace {
            config: config.clone(),
            seqs,
        },
    ))
}

/// Exact gradients of `sum(logits * grad_logits)` with respect to every
/// parameter. Padded frames contribute nothing.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    config: &ModelConfig,
    grad_logits: &Matrix,
) -> Result<NamedTensorStore, ModelError> {
    if trace.config != *config {
        return Err(ModelError::TraceMismatch(
            "trace was produced under a different model config".into(),
        ));
    }
    if grad_logits.rows() != trace.seqs.len() || grad_logits.cols() != config.n_classes {
        return Err(ModelError::TraceMismatch(format!(
            "grad_logits is {}x{}, expected {}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            trace.seqs.len(),
            config.n_classes
        )));
    }
    params.validate(config)?;

    let h = config.lstm_hidden;
    let bi = config.bi_dim();
    let (fc0, fc1) = (config.fc_dims[0], config.fc_dims[1]);
    let k = (config.attn_window - 1) / 2;
    let w2 = params.tensor("fc2/w")?;
    let attn_u = params.tensor("attn/u")?;
    let out_w = params.tensor("out/w")?;
    // wx/wh per layer and direction, hoisted out of the batch loop.
    let mut lstm_weights: Vec<[(&[f64], &[f64]); 2]> = Vec::with_capacity(config.lstm_layers);
    for layer in 0..config.lstm_layers {
        let base = format!("lstm{}", layer + 1);
        lstm_weights.push([
            (
                params.tensor(&format!("{base}_fwd/wx"))?,
                params.tensor(&format!("{base}_fwd/wh"))?,
            ),
            (
                params.tensor(&format!("{base}_bwd/wx"))?,
                params.tensor(&format!("{base}_bwd/wh"))?,
            ),
        ]);
    }

    let mut grads = params.store.zeros_like();

    for (b, seq) in trace.seqs.iter().enumerate() {
        let len = seq.len;
        let dlogits = grad_logits.row(b);

        // Output projection.
        {
            let g = grads.get_mut("out/w").unwrap();
            outer_add(&mut g.data, dlogits, &seq.context);
        }
        {
            let g = grads.get_mut("out/b").unwrap();
            for (slot, v) in g.data.iter_mut().zip(dlogits) {
                *slot += v;
            }
        }
        let mut dcontext = vec![0.0; bi];
        matvec_t_add(out_w, config.n_classes, bi, dlogits, &mut dcontext);

        // Rebuild the top-layer bidirectional states.
        let top = &seq.directions[config.lstm_layers - 1];
        let mut h_top = Matrix::zeros(len, bi);
        for t in 0..len {
            h_top.row_mut(t)[..h].copy_from_slice(top[0].hidden.row(t));
            h_top.row_mut(t)[h..].copy_from_slice(top[1].hidden.row(t));
        }

        // Attention backward: context -> weights -> scores -> pooled windows.
        let weights = &seq.attn_weights;
        let mut dh_top = Matrix::zeros(len, bi);
        let mut dalpha = vec![0.0; len];
        for t in 0..len {
            dalpha[t] = dot(&dcontext, h_top.row(t));
            let wt = weights[t];
            for (slot, v) in dh_top.row_mut(t).iter_mut().zip(&dcontext) {
                *slot += wt * v;
            }
        }
        let mean_dalpha: f64 = (0..len).map(|t| weights[t] * dalpha[t]).sum();
        for t in 0..len {
            let de = weights[t] * (dalpha[t] - mean_dalpha);
            let lo = t.saturating_sub(k);
            let hi = (t + k).min(len - 1);
            let n = (hi - lo + 1) as f64;
            {
                // du += de * pooled_t
                let g = grads.get_mut("attn/u").unwrap();
                for (slot, p) in g.data.iter_mut().zip(seq.attn_pooled.row(t)) {
                    *slot += de * p;
                }
            }
            // dh_s += (de / n) * u for every frame in the window
            let scale = de / n;
            if scale != 0.0 {
                for s in lo..=hi {
                    for (slot, u) in dh_top.row_mut(s).iter_mut().zip(attn_u) {
                        *slot += scale * u;
                    }
                }
            }
        }

        // BPTT down the stack. d_out holds the gradient w.r.t. the current
        // layer's concatenated output.
        let mut d_out = dh_top;
        for layer in (0..config.lstm_layers).rev() {
            let base = format!("lstm{}", layer + 1);
            let layer_input = &seq.lstm_inputs[layer];
            let mut d_input_total = Matrix::zeros(len, layer_input.cols());
            for (d, dir_name) in ["fwd", "bwd"].iter().enumerate() {
                let mut dh_ext = Matrix::zeros(len, h);
                let range = if d == 0 { 0..h } else { h..2 * h };
                for t in 0..len {
                    dh_ext.row_mut(t).copy_from_slice(&d_out.row(t)[range.clone()]);
                }
                let (wx, wh) = lstm_weights[layer][d];
                let mut dwx = vec![0.0; wx.len()];
                let mut dwh = vec![0.0; wh.len()];
                let mut db = vec![0.0; 4 * h];
                let d_input = backward_lstm_direction(
                    &seq.directions[layer][d],
                    wx,
                    wh,
                    layer_input,
                    &dh_ext,
                    h,
                    d == 1,
                    &mut dwx,
                    &mut dwh,
                    &mut db,
                );
                for t in 0..len {
                    for (slot, v) in d_input_total.row_mut(t).iter_mut().zip(d_input.row(t)) {
                        *slot += v;
                    }
                }
                for (name, local) in [("wx", dwx), ("wh", dwh), ("b", db)] {
                    let g = grads.get_mut(&format!("{base}_{dir_name}/{name}")).unwrap();
                    for (slot, v) in g.data.iter_mut().zip(&local) {
                        *slot += v;
                    }
                }
            }
            d_out = d_input_total;
        }

        // FC backward; d_out is now the gradient w.r.t. fc2 activations.
        let mut dz2 = vec![0.0; fc1];
        let mut da1 = vec![0.0; fc0];
        let mut dz1 = vec![0.0; fc0];
        for t in 0..len {
            let a2 = seq.fc2_out.row(t);
            for j in 0..fc1 {
                dz2[j] = if a2[j] > 0.0 { d_out.row(t)[j] } else { 0.0 };
            }
            let a1 = seq.fc1_out.row(t);
            {
                let g = grads.get_mut("fc2/w").unwrap();
                outer_add(&mut g.data, &dz2, a1);
            }
            {
                let g = grads.get_mut("fc2/b").unwrap();
                for (slot, v) in g.data.iter_mut().zip(&dz2) {
                    *slot += v;
                }
            }
            da1.fill(0.0);
            matvec_t_add(w2, fc1, fc0, &dz2, &mut da1);
            for j in 0..fc0 {
                dz1[j] = if a1[j] > 0.0 { da1[j] } else { 0.0 };
            }
            {
                let g = grads.get_mut("fc1/w").unwrap();
                outer_add(&mut g.data, &dz1, seq.input.row(t));
            }
            {
                let g = grads.get_mut("fc1/b").unwrap();
                for (slot, v) in g.data.iter_mut().zip(&dz1) {
                    *slot += v;
                }
            }
        }
    }

    Ok(grads)
}

/// A trained model bundle: config, parameters, and the feature
/// standardization statistics baked in at training time.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub feature_mean: Option<Vec<f64>>,
    pub feature_std: Option<Vec<f64>>,
}

const CONFIG_TENSOR: &str = "__config";
const MEAN_TENSOR: &str = "__feature_mean";
const STD_TENSOR: &str = "__feature_std";

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ModelError> {
        let mut store = NamedTensorStore::new();
        let c = &self.config;
        store
            .insert(
                CONFIG_TENSOR,
                vec![7],
                vec![
                    c.d_in as f64,
                    c.fc_dims[0] as f64,
                    c.fc_dims[1] as f64,
                    c.lstm_hidden as f64,
                    c.lstm_layers as f64,
                    c.attn_window as f64,
                    c.n_classes as f64,
                ],
            )
            .map_err(ModelError::Tensor)?;
        if let Some(mean) = &self.feature_mean {
            store
                .insert(MEAN_TENSOR, vec![mean.len()], mean.clone())
                .map_err(ModelError::Tensor)?;
        }
        if let Some(std) = &self.feature_std {
            store
                .insert(STD_TENSOR, vec![std.len()], std.clone())
                .map_err(ModelError::Tensor)?;
        }
        for t in self.params.store.iter() {
            store
                .insert(&t.name, t.shape.clone(), t.data.clone())
                .map_err(ModelError::Tensor)?;
        }
        crate::tensor::save_named_tensors(&store, path).map_err(ModelError::Tensor)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let store = crate::tensor::load_named_tensors(path).map_err(ModelError::Tensor)?;
        let raw = store
            .get(CONFIG_TENSOR)
            .ok_or_else(|| ModelError::ShapeMismatch("checkpoint missing config tensor".into()))?;
        if raw.data.len() != 7 {
            return Err(ModelError::ShapeMismatch("config tensor must have 7 entries".into()));
        }
        let v: Vec<usize> = raw.data.iter().map(|&x| x.round() as usize).collect();
        let config = ModelConfig {
            d_in: v[0],
            fc_dims: [v[1], v[2]],
            lstm_hidden: v[3],
            lstm_layers: v[4],
            attn_window: v[5],
            n_classes: v[6],
        };
        let feature_mean = store.get(MEAN_TENSOR).map(|t| t.data.clone());
        let feature_std = store.get(STD_TENSOR).map(|t| t.data.clone());
        for (what, stats) in [("mean", &feature_mean), ("std", &feature_std)] {
            if let Some(v) = stats {
                if v.len() != config.d_in {
                    return Err(ModelError::ShapeMismatch(format!(
                        "feature {what} has {} entries, d_in is {}",
                        v.len(),
                        config.d_in
                    )));
                }
            }
        }
        let mut params = NamedTensorStore::new();
        for t in store.iter() {
            if !t.name.starts_with("__") {
                params
                    .insert(&t.name, t.shape.clone(), t.data.clone())
                    .map_err(ModelError::Tensor)?;
            }
        }
        let params = ModelParams { store: params };
        params.validate(&config)?;
        Ok(Self {
            config,
            params,
            feature_mean,
            feature_std,
        })
    }
}
