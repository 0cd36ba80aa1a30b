//! Speech emotion recognition toolkit.
//!
//! The pipeline mirrors the classic recognition flow: audio ingestion and
//! resampling ([`audio`]), pre-emphasis/framing/endpoint detection
//! ([`preprocess`]), handcrafted low-level descriptors ([`lld`]) and deep
//! log-mel embeddings ([`embed`]), frame-level fusion of the two streams
//! ([`fusion`]), manifest-driven corpus handling with multi-lingual mixing
//! ([`corpus`]), and a 2×FC → double BiLSTM → windowed local-attention
//! classifier ([`model`]) trained with Adam and gradient clipping
//! ([`training`]) and scored by weighted/unweighted accuracy ([`eval`]).

// Index-heavy numeric kernels read better with explicit loops.
#![allow(clippy::needless_range_loop)]

pub mod audio;
pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod eval;
pub mod fusion;
pub mod lld;
pub mod mat;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod training;

pub use audio::AudioClip;
pub use mat::Matrix;
