//! Singing voice conversion at desk scale.
//!
//! The pipeline mirrors the classic conditioning-based conversion stack:
//! a YIN pitch tracker produces 200 Hz f0 contours, a learnable f0 encoder
//! (Q-LUT embedding or a parallel bank of transposed convolutions) lifts the
//! quantized contour into a dense feature, content features stand in for
//! self-supervised embeddings, and a HiFi-GAN style generator decodes 24 kHz
//! audio from the concatenated `[f0 | content | singer]` block. At inference
//! the source f0 is scale/shifted to match the target singer's f0
//! distribution before encoding.
//!
//! Everything is f64 on the CPU with a hand-rolled backward pass, so gradient
//! checks and bit-exact reproducibility are cheap to assert.

pub mod audio;
pub mod content;
pub mod error;
pub mod f0enc;
pub mod nn;
pub mod pitch;
pub mod config;
pub mod singer;
pub mod trainer;
pub mod vocoder;

pub use error::{Error, Result};
