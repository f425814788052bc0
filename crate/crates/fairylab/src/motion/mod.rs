//! Two-stage motion customization and timestep-shift sampling.
//!
//! Stage 1 trains identity factors on temporally shuffled frames; stage 2
//! freezes them and trains a motion residual that shares the identity
//! adapter's up factor, drawing training timesteps from a late-biased
//! sigmoid-of-Gaussian sampler.

mod sampler;
mod two_stage;

pub use sampler::TimestepSampler;
pub use two_stage::{
    ablate_mu, animate_shot, clip_example, train_stage1_identity, train_stage2_motion,
    MotionTrainConfig, MuAblationRow, MOTION_BANK,
};
