//! Multi-feature fusion: align LLD frames with per-patch deep embeddings in a
//! 1:4 ratio — 24 of the 96 LLD frames under each patch get the patch's
//! embedding concatenated on.

use thiserror::Error;

use crate::embed::{EmbeddingSequence, EMBEDDING_DIM};
use crate::lld::LldSequence;
use crate::mat::Matrix;

/// Fused frames emitted per patch.
pub const FRAMES_PER_PATCH: usize = 24;
/// LLD frames spanned by one patch.
pub const PATCH_SPAN: usize = 96;
/// Subsample stride inside a patch: 24 of 96.
pub const SUBSAMPLE_STRIDE: usize = PATCH_SPAN / FRAMES_PER_PATCH;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("embedding sequence has {got} patches, LLD frame count implies {expected}")]
    PatchMismatch { expected: usize, got: usize },
}

/// Concatenated `[lld || embedding]` frames, LLD columns first.
#[derive(Debug, Clone)]
pub struct FusedSequence {
    mat: Matrix,
    d_lld: usize,
}

impl FusedSequence {
    pub fn num_frames(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn d_lld(&self) -> usize {
        self.d_lld
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.mat.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }
}

/// LLD frame indices selected for patch `p`: uniform stride 4 starting at the
/// patch head, `{96 p + 4 j : j = 0..24}`.
pub fn subsample_indices(patch_index: usize) -> [usize; FRAMES_PER_PATCH] {
    let mut out = [0usize; FRAMES_PER_PATCH];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = patch_index * PATCH_SPAN + SUBSAMPLE_STRIDE * j;
    }
    out
}

/// Patch count implied by an LLD frame count.
pub fn expected_patches(t_lld: usize) -> usize {
    (t_lld / PATCH_SPAN).max(1)
}

/// Fuses the two streams: for each patch `p` and subsample index `i` (clamped
/// to the last LLD frame when the final patch was reflection-padded), emits
/// `[llds[i] || embs[p]]`. Rows are ordered by `(p, j)`.
pub fn fuse_utterance(
    llds: &LldSequence,
    embs: &EmbeddingSequence,
) -> Result<FusedSequence, FusionError> {
    let t_lld = llds.num_frames();
    let expected = expected_patches(t_lld);
    if embs.num_patches() != expected {
        return Err(FusionError::PatchMismatch {
            expected,
            got: embs.num_patches(),
        });
    }
    let d_lld = llds.dim();
    let dim = d_lld + EMBEDDING_DIM;
    let mut mat = Matrix::zeros(expected * FRAMES_PER_PATCH, dim);
    for p in 0..expected {
        let emb = embs.embedding(p);
        for (j, &idx) in subsample_indices(p).iter().enumerate() {
            let src = idx.min(t_lld - 1);
            let row = mat.row_mut(p * FRAMES_PER_PATCH + j);
            row[..d_lld].copy_from_slice(llds.frame(src));
            row[d_lld..].copy_from_slice(emb);
        }
    }
    Ok(FusedSequence { mat, d_lld })
}

/// The handcrafted stream alone, at the same subsample geometry as fusion:
/// 24 rows per (implied) patch.
pub fn subsample_llds(llds: &LldSequence) -> Matrix {
    let t_lld = llds.num_frames();
    let patches = expected_patches(t_lld);
    let mut mat = Matrix::zeros(patches * FRAMES_PER_PATCH, llds.dim());
    for p in 0..patches {
        for (j, &idx) in subsample_indices(p).iter().enumerate() {
            let src = idx.min(t_lld - 1);
            mat.row_mut(p * FRAMES_PER_PATCH + j).copy_from_slice(llds.frame(src));
        }
    }
    mat
}

/// The deep stream alone, replicated 24x per patch so every feature mode
/// shares one sequence geometry.
pub fn replicate_embeddings(embs: &EmbeddingSequence) -> Matrix {
    let mut mat = Matrix::zeros(embs.num_patches() * FRAMES_PER_PATCH, EMBEDDING_DIM);
    for p in 0..embs.num_patches() {
        for j in 0..FRAMES_PER_PATCH {
            mat.row_mut(p * FRAMES_PER_PATCH + j).copy_from_slice(embs.embedding(p));
        }
    }
    mat
}
