//! Ancestral sampling with optional known-region re-noising (inpainting).
//!
//! In inpaint mode, after every denoising step the known region is
//! overwritten with the forward-diffused reference at the new noise level,
//! so the final output equals the reference exactly where the mask is 1.

use super::media::{blend_masked, Media};
use super::model::{Denoiser, InputKind};
use super::schedule::{forward_diffuse, NoiseSchedule};
use crate::adapters::{downsample_mask, AdapterBank, DropoutDraw, ForwardPhaseCtx, Phase};
use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use rand::Rng;

/// Known-region reference for inpainting (image mode).
pub struct InpaintRef<'a, T: Scalar> {
    pub reference: &'a Array3<T>,
    /// `[H, W]`, 1 = known region to preserve.
    pub pixel_mask: &'a Array2<u8>,
}

pub struct SampleArgs<'a, T: Scalar> {
    pub keywords: &'a [String],
    /// Clip mode: clean first-frame conditioning.
    pub cond_frame: Option<&'a Array3<T>>,
    pub inpaint: Option<InpaintRef<'a, T>>,
    /// Clip mode: overwrite frame 0 with the conditioning frame on return,
    /// making the first-frame contract exact.
    pub clamp_first_frame: bool,
    pub dora_eps_guard: Option<f64>,
}

impl<'a, T: Scalar> SampleArgs<'a, T> {
    pub fn unconditional() -> SampleArgs<'a, T> {
        SampleArgs {
            keywords: &[],
            cond_frame: None,
            inpaint: None,
            clamp_first_frame: false,
            dora_eps_guard: None,
        }
    }
}

/// DDPM ancestral sampling over the full schedule.
pub fn sample<T: Scalar>(
    model: &Denoiser<T>,
    banks: &[&AdapterBank<T>],
    schedule: &NoiseSchedule<T>,
    args: &SampleArgs<'_, T>,
    rng: &mut impl Rng,
) -> Result<Media<T>> {
    let cfg = &model.config;
    let keyword_ids = model.vocab().encode(args.keywords)?;

    // an all-zero inpaint mask is exactly unconditional sampling (no extra
    // rng draws), keeping the two paths bit-identical under one seed
    let inpaint = match &args.inpaint {
        Some(ip) => {
            if ip.pixel_mask.dim() != (cfg.height, cfg.width) {
                return Err(Error::Shape(format!(
                    "inpaint mask {:?} does not match {}x{}",
                    ip.pixel_mask.dim(),
                    cfg.height,
                    cfg.width
                )));
            }
            if ip.reference.dim() != (cfg.height, cfg.width, 3) {
                return Err(Error::Shape("inpaint reference size mismatch".into()));
            }
            if cfg.kind != InputKind::Image {
                return Err(Error::Validation(
                    "inpainting is defined for image mode".into(),
                ));
            }
            if ip.pixel_mask.iter().any(|&m| m == 1) {
                Some(ip)
            } else {
                None
            }
        }
        None => None,
    };
    let token_mask = match inpaint {
        Some(ip) => Some(downsample_mask(ip.pixel_mask, cfg.token_grid())?),
        None => None,
    };

    let shape_like = match cfg.kind {
        InputKind::Image => Media::Image(Array3::zeros((cfg.height, cfg.width, 3))),
        InputKind::Clip => Media::Clip(vec![
            Array3::zeros((cfg.height, cfg.width, 3));
            cfg.frames
        ]),
    };
    let mut x = Media::standard_normal(&shape_like, rng);

    let dropout = DropoutDraw::none();
    let ctx = ForwardPhaseCtx {
        phase: Phase::Infer,
        token_mask: token_mask.as_ref(),
        dropout: &dropout,
        dora_eps_guard: args.dora_eps_guard,
    };

    for t in (1..=schedule.steps()).rev() {
        let eps_hat = model.predict_eps(&x, args.cond_frame, &keyword_ids, t, banks, &ctx)?;
        let alpha = schedule.alphas[t - 1];
        let beta = schedule.betas[t - 1];
        let ab = schedule.alpha_bars[t - 1];
        let coef = (T::one() - alpha) / (T::one() - ab).sqrt();
        let inv_sqrt_alpha = T::one() / alpha.sqrt();

        let mut next = x.zip_map(&eps_hat, |xt, eh| {
            let mut out = xt.clone();
            ndarray::Zip::from(&mut out).and(eh).for_each(|o, e| {
                *o = (*o - coef * *e) * inv_sqrt_alpha;
            });
            out
        })?;
        if t > 1 {
            let z = Media::standard_normal(&shape_like, rng);
            let sigma = beta.sqrt();
            next = next.zip_map(&z, |m, n| {
                let mut out = m.clone();
                ndarray::Zip::from(&mut out).and(n).for_each(|o, e| {
                    *o = *o + sigma * *e;
                });
                out
            })?;
        }

        if let Some(ip) = inpaint {
            let known = if t - 1 >= 1 {
                let eps = Media::standard_normal(&shape_like, rng);
                forward_diffuse(ip.reference, t - 1, eps.frame(0), schedule)?
            } else {
                ip.reference.clone()
            };
            next = Media::Image(blend_masked(&known, next.frame(0), ip.pixel_mask));
        }
        x = next;
    }

    if args.clamp_first_frame {
        if let (Media::Clip(frames), Some(cond)) = (&mut x, args.cond_frame) {
            frames[0] = cond.clone();
        }
    }
    if !x.all_finite() {
        return Err(Error::Training("sampler produced non-finite values".into()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::DenoiserConfig;
    use crate::diffusion::schedule::ScheduleConfig;
    use crate::util::stream_rng;

    fn small_setup() -> (Denoiser<f32>, NoiseSchedule<f32>) {
        let model = Denoiser::new(DenoiserConfig::image(32, 32), 7).unwrap();
        let schedule = NoiseSchedule::linear(&ScheduleConfig {
            steps: 20,
            ..ScheduleConfig::default()
        })
        .unwrap();
        (model, schedule)
    }

    #[test]
    fn fixed_seed_gives_bit_identical_samples() {
        let (model, schedule) = small_setup();
        let args = SampleArgs::unconditional();
        let mut r1 = stream_rng(5, "sample");
        let mut r2 = stream_rng(5, "sample");
        let a = sample(&model, &[], &schedule, &args, &mut r1).unwrap();
        let b = sample(&model, &[], &schedule, &args, &mut r2).unwrap();
        for (x, y) in a.frame(0).iter().zip(b.frame(0).iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn all_ones_mask_returns_reference_exactly() {
        let (model, schedule) = small_setup();
        let reference = Array3::from_shape_fn((32, 32, 3), |(y, x, _)| {
            (y as f32 / 32.0) - (x as f32 / 64.0)
        });
        let mask = Array2::from_elem((32, 32), 1u8);
        let args = SampleArgs {
            inpaint: Some(InpaintRef {
                reference: &reference,
                pixel_mask: &mask,
            }),
            ..SampleArgs::unconditional()
        };
        let mut rng = stream_rng(1, "inpaint");
        let out = sample(&model, &[], &schedule, &args, &mut rng).unwrap();
        for (o, r) in out.frame(0).iter().zip(reference.iter()) {
            assert_eq!(o.to_bits(), r.to_bits());
        }
    }

    #[test]
    fn all_zero_mask_equals_unconditional_with_same_seed() {
        let (model, schedule) = small_setup();
        let reference = Array3::from_elem((32, 32, 3), 0.5f32);
        let mask = Array2::zeros((32, 32));
        let args = SampleArgs {
            inpaint: Some(InpaintRef {
                reference: &reference,
                pixel_mask: &mask,
            }),
            ..SampleArgs::unconditional()
        };
        let mut r1 = stream_rng(2, "zm");
        let with_ref = sample(&model, &[], &schedule, &args, &mut r1).unwrap();
        let mut r2 = stream_rng(2, "zm");
        let plain = sample(
            &model,
            &[],
            &schedule,
            &SampleArgs::unconditional(),
            &mut r2,
        )
        .unwrap();
        for (a, b) in with_ref.frame(0).iter().zip(plain.frame(0).iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn partial_mask_preserves_known_region_exactly() {
        let (model, schedule) = small_setup();
        let reference = Array3::from_shape_fn((32, 32, 3), |(y, x, c)| {
            ((y + x + c) as f32 / 70.0) - 0.4
        });
        let mask = Array2::from_shape_fn((32, 32), |(y, x)| u8::from(y < 16 && x >= 8));
        let args = SampleArgs {
            inpaint: Some(InpaintRef {
                reference: &reference,
                pixel_mask: &mask,
            }),
            ..SampleArgs::unconditional()
        };
        let mut rng = stream_rng(3, "pm");
        let out = sample(&model, &[], &schedule, &args, &mut rng).unwrap();
        for ((y, x), &m) in mask.indexed_iter() {
            if m == 1 {
                for c in 0..3 {
                    assert_eq!(
                        out.frame(0)[[y, x, c]].to_bits(),
                        reference[[y, x, c]].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn clip_mode_clamps_first_frame_to_conditioning() {
        let model: Denoiser<f32> =
            Denoiser::new(DenoiserConfig::clip(32, 32, 4), 9).unwrap();
        let schedule = NoiseSchedule::linear(&ScheduleConfig {
            steps: 10,
            ..ScheduleConfig::default()
        })
        .unwrap();
        let cond = Array3::from_elem((32, 32, 3), 0.25f32);
        let args = SampleArgs {
            cond_frame: Some(&cond),
            clamp_first_frame: true,
            ..SampleArgs::unconditional()
        };
        let mut rng = stream_rng(4, "clip");
        let out = sample(&model, &[], &schedule, &args, &mut rng).unwrap();
        assert_eq!(out.frames(), 4);
        for (a, b) in out.frame(0).iter().zip(cond.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
