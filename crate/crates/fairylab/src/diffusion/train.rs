//! Training loop: per-step loss over one example, Adam on an explicit
//! trainable set, frozen-parameter enforcement by checksum.

use super::media::Media;
use super::model::{Denoiser, InputKind};
use super::schedule::{forward_diffuse, NoiseSchedule};
use crate::adapters::{AdapterBank, DropoutDraw, ForwardPhaseCtx, Phase, TokenMask};
use crate::adapters::downsample_mask;
use crate::autodiff::{NodeId, Scalar, Tape};
use crate::error::{Error, Result};
use crate::motion::TimestepSampler;
use crate::params::{ParamBinder, SharedTensor};
use crate::util::stream_rng;
use indexmap::IndexMap;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One training atom: clean media, its conditioning keywords, and (image
/// mode) the foreground pixel mask for propagation adapters.
#[derive(Debug, Clone)]
pub struct TrainExample<T: Scalar> {
    pub target: Media<T>,
    pub keywords: Vec<String>,
    pub pixel_mask: Option<Array2<u8>>,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub sampler: TimestepSampler,
    /// Permute clip frames freshly each step, conditioning on the permuted
    /// first frame (identity-stage behavior).
    pub shuffle_frames: bool,
    pub dora_eps_guard: Option<f64>,
}

impl FitConfig {
    pub fn new(steps: usize, lr: f64, seed: u64, sampler: TimestepSampler) -> FitConfig {
        FitConfig {
            steps,
            lr,
            seed,
            sampler,
            shuffle_frames: false,
            dora_eps_guard: None,
        }
    }
}

/// Adam moments keyed by parameter name.
#[derive(Default)]
pub struct AdamState<T: Scalar> {
    pub step: usize,
    m: IndexMap<String, Array2<T>>,
    v: IndexMap<String, Array2<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Array2<T>, &Array2<T>)> {
        self.m
            .iter()
            .map(|(k, m)| (k.as_str(), m, self.v.get(k).expect("paired moment")))
    }

    pub fn insert_moments(&mut self, name: &str, m: Array2<T>, v: Array2<T>) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }

    fn update(&mut self, name: &str, tensor: &SharedTensor<T>, grad: &Array2<T>, lr: f64) {
        let b1 = T::from_f64(0.9);
        let b2 = T::from_f64(0.999);
        let eps = T::from_f64(1e-8);
        let one = T::one();
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| Array2::zeros(grad.dim()));
        *m = m.mapv(|x| x * b1) + &grad.mapv(|g| g * (one - b1));
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| Array2::zeros(grad.dim()));
        *v = v.mapv(|x| x * b2) + &grad.mapv(|g| g * g * (one - b2));
        let t = T::from_f64(self.step as f64);
        let c1 = one - b1.powf(t);
        let c2 = one - b2.powf(t);
        let lr = T::from_f64(lr);
        let mut p = tensor.borrow_mut();
        ndarray::Zip::from(&mut *p)
            .and(&*m)
            .and(&*v)
            .for_each(|p, m, v| {
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// Everything fixed for one loss evaluation, so a rebuild (gradient checks,
/// resume verification) reproduces the identical value.
pub struct LossInputs<'a, T: Scalar> {
    pub target: &'a Media<T>,
    pub cond_frame: Option<&'a Array3<T>>,
    pub keyword_ids: &'a [usize],
    pub t: usize,
    pub eps: &'a Media<T>,
    pub token_mask: Option<&'a TokenMask>,
    pub dropout: &'a DropoutDraw<T>,
    pub phase: Phase,
    pub dora_eps_guard: Option<f64>,
}

/// Build `|| eps - eps_theta(z_t, c, t) ||^2 / n` on the tape. Returns the
/// loss and prediction nodes.
pub fn training_loss_on_tape<T: Scalar>(
    model: &Denoiser<T>,
    tape: &mut Tape<T>,
    binder: &mut ParamBinder<T>,
    banks: &[&AdapterBank<T>],
    schedule: &NoiseSchedule<T>,
    inputs: &LossInputs<'_, T>,
) -> Result<(NodeId, NodeId)> {
    let z_t = inputs
        .target
        .zip_map(inputs.eps, |z, e| {
            forward_diffuse(z, inputs.t, e, schedule).expect("validated t and shapes")
        })?;
    if inputs.t < 1 || inputs.t > schedule.steps() {
        return Err(Error::Validation(format!(
            "t = {} outside schedule 1..={}",
            inputs.t,
            schedule.steps()
        )));
    }
    let ctx = ForwardPhaseCtx {
        phase: inputs.phase,
        token_mask: inputs.token_mask,
        dropout: inputs.dropout,
        dora_eps_guard: inputs.dora_eps_guard,
    };
    let pred = model.forward_on_tape(
        tape,
        binder,
        &z_t,
        inputs.cond_frame,
        inputs.keyword_ids,
        inputs.t,
        banks,
        &ctx,
    )?;
    if !tape.value(pred).iter().all(|v| v.is_finite()) {
        log::error!("non-finite activations in denoiser output at t={}", inputs.t);
        return Err(Error::Training(format!(
            "non-finite activations at t={}",
            inputs.t
        )));
    }
    let eps_tokens = model.tokens_targets(inputs.eps)?;
    let target_node = tape.leaf(eps_tokens);
    let loss = tape.mse(pred, target_node);
    Ok((loss, pred))
}

/// Scalar convenience wrapper over [`training_loss_on_tape`].
pub fn training_loss<T: Scalar>(
    model: &Denoiser<T>,
    banks: &[&AdapterBank<T>],
    schedule: &NoiseSchedule<T>,
    inputs: &LossInputs<'_, T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new();
    let (loss, _) = training_loss_on_tape(model, &mut tape, &mut binder, banks, schedule, inputs)?;
    Ok(tape.scalar(loss).to_f64())
}

pub struct FitReport {
    pub losses: Vec<f64>,
    pub rng_word_pos: u128,
}

/// Map of every reachable parameter (model plus banks) by name.
pub fn all_params<T: Scalar>(
    model: &Denoiser<T>,
    banks: &[&AdapterBank<T>],
) -> IndexMap<String, SharedTensor<T>> {
    let mut map: IndexMap<String, SharedTensor<T>> = IndexMap::new();
    for (name, tensor) in model.params().iter() {
        map.insert(name.to_string(), tensor.clone());
    }
    for bank in banks {
        for (name, tensor) in bank.params() {
            map.insert(name, tensor);
        }
    }
    map
}

fn checksum_params<T: Scalar>(params: &IndexMap<String, SharedTensor<T>>) -> IndexMap<String, String> {
    params
        .iter()
        .map(|(name, tensor)| {
            let arr = tensor.borrow();
            let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
            for v in arr.iter() {
                sha2::Digest::update(&mut hasher, Scalar::to_f64(*v).to_le_bytes());
            }
            let digest = sha2::Digest::finalize(hasher);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            (name.clone(), hex)
        })
        .collect()
}

/// Run `cfg.steps` optimization steps over `data`, updating only parameters
/// named in `trainable`. Every other tensor is checksummed before and after;
/// any drift is an error. A NaN loss aborts with a diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Scalar>(
    model: &Denoiser<T>,
    banks: &[&AdapterBank<T>],
    data: &[TrainExample<T>],
    trainable: &[String],
    schedule: &NoiseSchedule<T>,
    cfg: &FitConfig,
    opt: &mut AdamState<T>,
    resume_word_pos: Option<u128>,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::Validation("fit requires at least one example".into()));
    }
    cfg.sampler.validate()?;
    if cfg.sampler.steps() != schedule.steps() {
        return Err(Error::Validation(format!(
            "sampler covers {} steps, schedule has {}",
            cfg.sampler.steps(),
            schedule.steps()
        )));
    }
    let params = all_params(model, banks);
    for name in trainable {
        if !params.contains_key(name) {
            return Err(Error::Validation(format!(
                "trainable parameter {name} does not exist"
            )));
        }
    }
    let frozen_before: IndexMap<String, String> = checksum_params(&params)
        .into_iter()
        .filter(|(name, _)| !trainable.contains(name))
        .collect();

    // dropout is drawn only for adapters whose down factor is trainable
    let mut active_dropout: Vec<String> = Vec::new();
    for bank in banks {
        for e in bank.entries() {
            let b_name = format!("adapters/{}/{}.b", bank.name, e.key());
            if trainable.contains(&b_name) {
                active_dropout.push(e.key());
            }
        }
    }

    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, "fit");
    if let Some(pos) = resume_word_pos {
        rng.set_word_pos(pos);
    }

    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = rng.gen_range(0..data.len());
        let example = &data[idx];
        let t = cfg.sampler.sample(&mut rng);
        let eps = Media::standard_normal(&example.target, &mut rng);

        // clip handling: shuffled stage conditions on the permuted first
        // frame; ordered stage on the true first frame
        let (target, cond_frame): (Media<T>, Option<Array3<T>>) = match (&example.target, model.config.kind) {
            (Media::Clip(frames), InputKind::Clip) => {
                if cfg.shuffle_frames {
                    let mut order: Vec<usize> = (0..frames.len()).collect();
                    order.shuffle(&mut rng);
                    let permuted: Vec<Array3<T>> =
                        order.iter().map(|&i| frames[i].clone()).collect();
                    let cond = permuted[0].clone();
                    (Media::Clip(permuted), Some(cond))
                } else {
                    (example.target.clone(), Some(frames[0].clone()))
                }
            }
            (Media::Image(_), InputKind::Image) => (example.target.clone(), None),
            _ => {
                return Err(Error::Validation(
                    "example media kind does not match model kind".into(),
                ))
            }
        };

        let token_mask = match &example.pixel_mask {
            Some(mask) => Some(downsample_mask(mask, model.config.token_grid())?),
            None => None,
        };
        let dropout = DropoutDraw::draw(banks, Some(&active_dropout), &mut rng);
        let keyword_ids = model.vocab().encode(&example.keywords)?;

        let inputs = LossInputs {
            target: &target,
            cond_frame: cond_frame.as_ref(),
            keyword_ids: &keyword_ids,
            t,
            eps: &eps,
            token_mask: token_mask.as_ref(),
            dropout: &dropout,
            phase: Phase::Train,
            dora_eps_guard: cfg.dora_eps_guard,
        };

        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let (loss_node, _) =
            training_loss_on_tape(model, &mut tape, &mut binder, banks, schedule, &inputs)?;
        let loss = tape.scalar(loss_node).to_f64();
        if !loss.is_finite() {
            let tail: Vec<f64> = losses.iter().rev().take(5).copied().collect();
            log::error!("aborting: non-finite loss at step {step}; recent losses {tail:?}");
            return Err(Error::Training(format!(
                "non-finite loss at step {step}; recent losses {tail:?}"
            )));
        }
        losses.push(loss);

        if !trainable.is_empty() {
            let grads = tape.backward(loss_node);
            opt.step += 1;
            for (name, node, tensor) in binder.bound() {
                if trainable.iter().any(|t| t == name) {
                    if let Some(g) = grads.get(node) {
                        opt.update(name, tensor, g, cfg.lr);
                    }
                }
            }
        }
        log::debug!("step {step}: t={t} loss={loss:.6}");
    }

    let frozen_after: IndexMap<String, String> = checksum_params(&params)
        .into_iter()
        .filter(|(name, _)| !trainable.contains(name))
        .collect();
    for (name, before) in &frozen_before {
        let after = frozen_after.get(name).expect("same key set");
        if after != before {
            return Err(Error::Training(format!(
                "frozen parameter {name} changed during fit"
            )));
        }
    }

    Ok(FitReport {
        losses,
        rng_word_pos: rng.get_word_pos(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{
        AdapterRole, AdapterVariant, BankEntry, LowRankAdapter,
    };
    use crate::diffusion::model::DenoiserConfig;
    use crate::diffusion::schedule::ScheduleConfig;
    use crate::params::shared;
    use ndarray::Array3;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::rc::Rc;

    fn tiny_schedule<T: Scalar>(steps: usize) -> NoiseSchedule<T> {
        NoiseSchedule::linear(&ScheduleConfig {
            steps,
            ..ScheduleConfig::default()
        })
        .unwrap()
    }

    fn image_example<T: Scalar>(seed: u64, h: usize, w: usize) -> TrainExample<T> {
        let mut rng = stream_rng(seed, "ex");
        let img = Array3::from_shape_fn((h, w, 3), |_| T::from_f64(rng.gen_range(-1.0..1.0)));
        TrainExample {
            target: Media::Image(img),
            keywords: vec!["teal".to_string(), "flat".to_string()],
            pixel_mask: None,
        }
    }

    #[test]
    fn stub_prediction_loss_is_zero_and_offset_squares() {
        // the loss formula on its own: pred == target -> 0; pred = target +
        // k -> k^2 (mean of a constant square)
        let mut tape: Tape<f64> = Tape::new();
        let target = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64 * 0.1);
        let t_node = tape.leaf(target.clone());
        let p_node = tape.leaf(target.clone());
        let loss = tape.mse(p_node, t_node);
        assert_eq!(tape.scalar(loss), 0.0);

        let k = 0.37;
        let mut tape2: Tape<f64> = Tape::new();
        let t_node = tape2.leaf(target.clone());
        let p_node = tape2.leaf(target.mapv(|v| v + k));
        let loss = tape2.mse(p_node, t_node);
        assert!((tape2.scalar(loss) - k * k).abs() < 1e-12);
    }

    #[test]
    fn model_loss_matches_straight_line_oracle() {
        let model: Denoiser<f64> = Denoiser::new(DenoiserConfig::image(32, 32), 5).unwrap();
        let schedule = tiny_schedule(20);
        let example = image_example::<f64>(1, 32, 32);
        let mut rng = stream_rng(2, "eps");
        let eps = Media::standard_normal(&example.target, &mut rng);
        let dropout = DropoutDraw::none();
        let ids = model.vocab().encode(&example.keywords).unwrap();
        let inputs = LossInputs {
            target: &example.target,
            cond_frame: None,
            keyword_ids: &ids,
            t: 7,
            eps: &eps,
            token_mask: None,
            dropout: &dropout,
            phase: Phase::Train,
            dora_eps_guard: None,
        };
        let got = training_loss(&model, &[], &schedule, &inputs).unwrap();

        // oracle: recompute prediction, then the plain mean of squares
        let z_t = example
            .target
            .zip_map(&eps, |z, e| forward_diffuse(z, 7, e, &schedule).unwrap())
            .unwrap();
        let ctx = ForwardPhaseCtx {
            phase: Phase::Train,
            token_mask: None,
            dropout: &dropout,
            dora_eps_guard: None,
        };
        let pred = model.predict_eps(&z_t, None, &ids, 7, &[], &ctx).unwrap();
        let mut acc = 0.0;
        let mut n = 0.0;
        for (p, e) in pred.frame(0).iter().zip(eps.frame(0).iter()) {
            acc += (p - e) * (p - e);
            n += 1.0;
        }
        let want = acc / n;
        assert!((got - want).abs() < 1e-12, "loss {got} vs oracle {want}");
    }

    #[test]
    fn empty_trainable_set_changes_nothing() {
        let model: Denoiser<f32> = Denoiser::new(DenoiserConfig::image(32, 32), 6).unwrap();
        let schedule = tiny_schedule(20);
        let params = all_params(&model, &[]);
        let before = checksum_params(&params);
        let mut opt = AdamState::new();
        let cfg = FitConfig::new(10, 1e-2, 3, TimestepSampler::uniform(20));
        fit(
            &model,
            &[],
            &[image_example(4, 32, 32)],
            &[],
            &schedule,
            &cfg,
            &mut opt,
            None,
        )
        .unwrap();
        assert_eq!(before, checksum_params(&params));
    }

    #[test]
    fn smoke_training_decreases_loss() {
        let model: Denoiser<f32> = Denoiser::new(DenoiserConfig::image(32, 32), 7).unwrap();
        let schedule = tiny_schedule(20);
        let trainable: Vec<String> = model.params().names().map(String::from).collect();
        let mut opt = AdamState::new();
        let cfg = FitConfig::new(200, 5e-3, 8, TimestepSampler::uniform(20));
        let report = fit(
            &model,
            &[],
            &[image_example(9, 32, 32)],
            &trainable,
            &schedule,
            &cfg,
            &mut opt,
            None,
        )
        .unwrap();
        let median = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let first = median(&report.losses[..20]);
        let last = median(&report.losses[report.losses.len() - 20..]);
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn resumed_run_reproduces_uninterrupted_losses() {
        let schedule = tiny_schedule(20);
        let data = vec![image_example::<f32>(10, 32, 32), image_example(11, 32, 32)];

        let run = |split: Option<usize>| -> Vec<f64> {
            let model: Denoiser<f32> = Denoiser::new(DenoiserConfig::image(32, 32), 12).unwrap();
            let trainable: Vec<String> = model.params().names().map(String::from).collect();
            let mut opt = AdamState::new();
            match split {
                None => {
                    let cfg = FitConfig::new(15, 5e-3, 13, TimestepSampler::uniform(20));
                    fit(&model, &[], &data, &trainable, &schedule, &cfg, &mut opt, None)
                        .unwrap()
                        .losses
                }
                Some(k) => {
                    let cfg = FitConfig::new(k, 5e-3, 13, TimestepSampler::uniform(20));
                    let r1 =
                        fit(&model, &[], &data, &trainable, &schedule, &cfg, &mut opt, None)
                            .unwrap();
                    let cfg2 = FitConfig::new(15 - k, 5e-3, 13, TimestepSampler::uniform(20));
                    let r2 = fit(
                        &model,
                        &[],
                        &data,
                        &trainable,
                        &schedule,
                        &cfg2,
                        &mut opt,
                        Some(r1.rng_word_pos),
                    )
                    .unwrap();
                    r1.losses.into_iter().chain(r2.losses).collect()
                }
            }
        };
        let uninterrupted = run(None);
        let resumed = run(Some(10));
        assert_eq!(uninterrupted.len(), resumed.len());
        for (a, b) in uninterrupted.iter().zip(&resumed) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    /// Analytic gradients against central finite differences on a model
    /// under 2k parameters, with masked DoRA and shared-factor LoRA adapters
    /// in effect, at f64, over 20 random directions.
    #[test]
    fn gradient_check_with_adapters_under_2k_params() {
        let cfg = DenoiserConfig {
            kind: InputKind::Image,
            height: 16,
            width: 16,
            patch: 4,
            embed: 8,
            hidden: 12,
            depth: 1,
            frames: 1,
            time_features: 8,
        };
        let model: Denoiser<f64> = Denoiser::new(cfg, 20).unwrap();
        let mut rng = stream_rng(21, "gc");

        let mut bank: AdapterBank<f64> = AdapterBank::new("gc");
        let w_pe = model.params().get("patch_embed.w").unwrap().borrow().clone();
        let style = LowRankAdapter::init_dora("patch_embed", &w_pe, 2, 0.2, &mut rng).unwrap();
        *style.a.borrow_mut() =
            Array2::from_shape_fn((2, 8), |_| rng.gen_range(-0.3..0.3));
        bank.insert(BankEntry {
            role: AdapterRole::Style,
            enabled: true,
            masked: true,
            adapter: style,
            shared_a_key: None,
        })
        .unwrap();
        let mut identity =
            LowRankAdapter::init_lora("block0.ff1", 8, 12, 2, 0.2, &mut rng).unwrap();
        identity.variant = AdapterVariant::Lora;
        *identity.a.borrow_mut() =
            Array2::from_shape_fn((2, 12), |_| rng.gen_range(-0.3..0.3));
        let id_a = Rc::clone(&identity.a);
        bank.insert(BankEntry {
            role: AdapterRole::Identity,
            enabled: true,
            masked: false,
            adapter: identity,
            shared_a_key: Some("ff1_a".into()),
        })
        .unwrap();
        let motion = LowRankAdapter {
            site_id: "block0.ff1".into(),
            rank: 2,
            dropout_p: 0.2,
            variant: AdapterVariant::Lora,
            a: id_a,
            b: shared(Array2::from_shape_fn((8, 2), |_| rng.gen_range(-0.3..0.3))),
            dora_magnitude: None,
        };
        bank.insert(BankEntry {
            role: AdapterRole::Motion,
            enabled: true,
            masked: false,
            adapter: motion,
            shared_a_key: Some("ff1_a".into()),
        })
        .unwrap();

        let params = all_params(&model, &[&bank]);
        let total: usize = params.values().map(|t| t.borrow().len()).sum();
        assert!(total <= 2000, "model has {total} params");

        let schedule = tiny_schedule(10);
        let example = image_example::<f64>(22, 16, 16);
        let mut mask_px = Array2::zeros((16, 16));
        for y in 4..12 {
            for x in 6..14 {
                mask_px[[y, x]] = 1;
            }
        }
        let token_mask = downsample_mask(&mask_px, (4, 4)).unwrap();
        let mut eps_rng = stream_rng(23, "eps");
        let eps = Media::standard_normal(&example.target, &mut eps_rng);
        let dropout = DropoutDraw::draw(&[&bank], None, &mut eps_rng);
        let ids = model.vocab().encode(&example.keywords).unwrap();

        let loss_at = |model: &Denoiser<f64>, bank: &AdapterBank<f64>| -> f64 {
            let inputs = LossInputs {
                target: &example.target,
                cond_frame: None,
                keyword_ids: &ids,
                t: 6,
                eps: &eps,
                token_mask: Some(&token_mask),
                dropout: &dropout,
                phase: Phase::Train,
                dora_eps_guard: None,
            };
            training_loss(model, &[bank], &schedule, &inputs).unwrap()
        };

        // analytic gradient by name
        let inputs = LossInputs {
            target: &example.target,
            cond_frame: None,
            keyword_ids: &ids,
            t: 6,
            eps: &eps,
            token_mask: Some(&token_mask),
            dropout: &dropout,
            phase: Phase::Train,
            dora_eps_guard: None,
        };
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let (loss_node, _) =
            training_loss_on_tape(&model, &mut tape, &mut binder, &[&bank], &schedule, &inputs)
                .unwrap();
        let grads = tape.backward(loss_node);
        let mut analytic: IndexMap<String, Array2<f64>> = IndexMap::new();
        for (name, node, _) in binder.bound() {
            analytic.insert(
                name.to_string(),
                grads
                    .get(node)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(params[name].borrow().dim())),
            );
        }

        let mut dir_rng = stream_rng(24, "dirs");
        let eps_fd = 1e-5;
        for check in 0..20 {
            // a random unit direction across every parameter
            let mut direction: IndexMap<String, Array2<f64>> = IndexMap::new();
            let mut norm2 = 0.0;
            for (name, tensor) in params.iter() {
                let d = Array2::from_shape_fn(tensor.borrow().dim(), |_| {
                    let v: f64 = StandardNormal.sample(&mut dir_rng);
                    v
                });
                norm2 += d.iter().map(|x| x * x).sum::<f64>();
                direction.insert(name.clone(), d);
            }
            let norm = norm2.sqrt();
            for d in direction.values_mut() {
                *d /= norm;
            }

            let mut dot = 0.0;
            for (name, d) in &direction {
                if let Some(g) = analytic.get(name) {
                    dot += (g * d).sum();
                }
            }

            let shift = |sign: f64| {
                for (name, d) in &direction {
                    let tensor = &params[name];
                    let mut t = tensor.borrow_mut();
                    *t = &*t + &d.mapv(|v| sign * eps_fd * v);
                }
            };
            shift(1.0);
            let plus = loss_at(&model, &bank);
            shift(-2.0);
            let minus = loss_at(&model, &bank);
            shift(1.0);

            let numeric = (plus - minus) / (2.0 * eps_fd);
            let denom = dot.abs().max(numeric.abs()).max(1e-10);
            let rel = (dot - numeric).abs() / denom;
            assert!(
                rel < 1e-4,
                "direction {check}: analytic {dot} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}
