//! Deterministic data pipeline for adapting small multimodal models to
//! specialised domains.
//!
//! - [`geometry`]: dynamic-resolution tile plans, visual-token counts and the
//!   0–1000 box grid.
//! - [`formats`]: domain record types and their conversion into
//!   instruction-tuning conversations, plus the `<ref>`/`<box>` grammar.
//! - [`mixer`]: seeded general/domain dataset mixing.
//! - [`kernels`]: reference pixel-unshuffle and cosine distillation kernels.
//! - [`metrics`]: MCQ accuracy, BLEU, ROUGE-L, control-signal metrics and
//!   benchmark averaging.
//! - [`schema`]: the line-delimited record envelope shared by every command.
//! - [`cli`]: command dispatch for the `adaptkit` binary.

pub mod cli;
pub mod formats;
pub mod geometry;
pub mod kernels;
pub mod metrics;
pub mod mixer;
pub mod par;
pub mod rng;
pub mod schema;
