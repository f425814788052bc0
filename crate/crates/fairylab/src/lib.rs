//! Desk-scale laboratory for adapter-based customization of a small pixel-space
//! diffusion model over a procedurally generated sprite corpus.
//!
//! The crate is organized around six capabilities, each with a runnable example
//! under `examples/`:
//!
//! - [`corpus`] — procedural sprite characters, motion clips, and corpus I/O
//!   (`examples/generate_corpus.rs`)
//! - [`diffusion`] — noise schedule, a token-mixer denoiser with named adapter
//!   insertion sites, training loop, ancestral/inpaint sampling, checkpoints
//!   (`examples/train_base_model.rs`)
//! - [`adapters`] — LoRA / DoRA / masked-propagation low-rank adapter algebra
//!   and adapter-bank archives (`examples/adapter_variants.rs`)
//! - [`style`] — foreground-trained, background-applied style propagation and
//!   scene synthesis (`examples/style_propagation.rs`)
//! - [`motion`] — timestep-shift sampling and two-stage identity/motion
//!   customization (`examples/two_stage_motion.rs`, `examples/timestep_shift.rs`)
//! - [`storyboard`] — shot planning, crop geometry, and end-to-end story
//!   rendering (`examples/storyboard_pipeline.rs`)
//!
//! Proxy metrics live in [`metrics`]; orchestration (config, run manifests,
//! reports, the `fairylab` binary surface) in [`config`], [`runs`], [`report`],
//! and [`cli`].

pub mod adapters;
pub mod archive;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod params;
pub mod report;
pub mod runs;
pub mod storyboard;
pub mod style;
pub mod util;

pub use error::{Error, Result};
