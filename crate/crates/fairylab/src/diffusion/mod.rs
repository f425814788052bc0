//! Minimal trainable pixel-space denoising diffusion: schedule, token-mixer
//! denoiser with named adapter sites, training loop, ancestral/inpaint
//! sampling, and checkpointing.

pub mod checkpoint;
pub mod media;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;
pub mod vocab;

pub use checkpoint::{load_checkpoint, new_manifest, save_checkpoint, TrainManifest};
pub use media::{blend_masked, decode_image, encode_image, Media};
pub use model::{Denoiser, DenoiserConfig, InputKind, SiteSpec};
pub use sampler::{sample, InpaintRef, SampleArgs};
pub use schedule::{forward_diffuse, NoiseSchedule, ScheduleConfig};
pub use train::{
    all_params, fit, training_loss, training_loss_on_tape, AdamState, FitConfig, FitReport,
    LossInputs, TrainExample,
};
pub use vocab::Vocab;
