//! Duration-informed singing voice synthesis.
//!
//! The pipeline goes from annotated recordings and scores to audio:
//!
//! * [`dsp`] — STFT/ISTFT, mel filterbank, log compression and Griffin-Lim
//!   phase reconstruction.
//! * [`pitch`] — YIN-based f0 extraction with Viterbi smoothing and
//!   conversion of contours into per-frame note events.
//! * [`corpus`] — phrase annotations, phoneme inventory, dataset splits and
//!   training-example preparation.
//! * [`align`] — frame-aligned conditioning plans, both from transcriptions
//!   (training) and from scores (synthesis).
//! * [`nn`] — a minimal reverse-mode tensor library: fully-connected,
//!   embedding, 1-D convolution bank, batch norm, highway, GRU and the CBHG
//!   composite.
//! * [`model`] — the synthesis network (phoneme encoder, identity fusion,
//!   autoregressive two-frame decoder, post-CBHG linear head), its losses,
//!   training loop and checkpoints.
//! * [`eval`] — pitch-contour correlation and Gaussian distribution fitting
//!   for objective comparison of systems.

pub mod align;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pitch;
