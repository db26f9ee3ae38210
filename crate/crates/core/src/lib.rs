//! Noise-robust one-shot voice conversion.
//!
//! A diffusion acoustic model conditioned on a source representation (quantized
//! content features plus normalized F0) and a reference representation from a
//! query-attention reference encoder. The noise-robust training recipe encodes
//! each clean reference and a noise-augmented copy with shared weights, feeds
//! their average to the diffusion model, and adds a contrastive speaker loss
//! over the pooled clean and noisy representations.

pub mod acoustic;
pub mod app;
pub mod augment;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod reference;
pub mod semantic;
pub mod speaker_eval;

pub use error::{Error, Result};
pub use matrix::Matrix;
