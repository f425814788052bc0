//! The trainable denoiser: a small token-mixer over patch tokens.
//!
//! Frames are split into P x P patches; each patch is one token. Every linear
//! projection is a named insertion site. Token-wise sites (patch embed, the
//! per-token channel MLPs, the output projection) carry activations with one
//! row per token, which is where propagation masks apply. The token-mix
//! sites act across the token axis; in clip mode the token axis spans all
//! F frames jointly, so token mixing is the temporal mixing layer.
//!
//! Conditioning: sinusoidal timestep features through `time_embed`, mean
//! keyword embedding from a closed vocabulary, and (clip mode) the clean
//! first frame concatenated channel-wise onto every noisy token's patch.

use super::media::Media;
use super::vocab::Vocab;
use crate::adapters::{apply_adapters_on_tape, AdapterBank, ForwardPhaseCtx};
use crate::autodiff::{NodeId, Scalar, Tape};
use crate::error::{Error, Result};
use crate::params::{shared, ParamBinder, ParamSet};
use crate::util::stream_rng;
use ndarray::{Array2, Array3};
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Image,
    Clip,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub kind: InputKind,
    pub height: usize,
    pub width: usize,
    /// Patch side; must divide height and width.
    pub patch: usize,
    /// Token embedding width.
    pub embed: usize,
    /// Channel-MLP hidden width.
    pub hidden: usize,
    /// Mixer block count.
    pub depth: usize,
    /// Frames per clip (1 in image mode).
    pub frames: usize,
    /// Sinusoidal timestep feature count (even).
    pub time_features: usize,
}

impl DenoiserConfig {
    pub fn image(height: usize, width: usize) -> DenoiserConfig {
        DenoiserConfig {
            kind: InputKind::Image,
            height,
            width,
            patch: 4,
            embed: 48,
            hidden: 96,
            depth: 2,
            frames: 1,
            time_features: 16,
        }
    }

    pub fn clip(height: usize, width: usize, frames: usize) -> DenoiserConfig {
        DenoiserConfig {
            kind: InputKind::Clip,
            height,
            width,
            patch: 4,
            embed: 64,
            hidden: 96,
            depth: 2,
            frames,
            time_features: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::Validation(format!(
                "patch {} must divide {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if self.time_features % 2 != 0 || self.time_features == 0 {
            return Err(Error::Validation("time_features must be even".into()));
        }
        match self.kind {
            InputKind::Image if self.frames != 1 => {
                Err(Error::Validation("image mode requires frames = 1".into()))
            }
            InputKind::Clip if self.frames < 2 => {
                Err(Error::Validation("clip mode requires frames >= 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Patch grid per frame.
    pub fn token_grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// Tokens per frame.
    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.token_grid();
        gh * gw
    }

    /// Total tokens on the mixer's token axis.
    pub fn n_tokens(&self) -> usize {
        self.tokens_per_frame() * self.frames
    }

    /// Output patch vector length.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Input patch vector length (doubled in clip mode by the clean
    /// first-frame concat).
    pub fn in_token_dim(&self) -> usize {
        match self.kind {
            InputKind::Image => self.patch_dim(),
            InputKind::Clip => 2 * self.patch_dim(),
        }
    }
}

/// One named linear insertion site.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SiteSpec {
    pub id: String,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Rows of this site's input are tokens (propagation masks installable).
    pub token_wise: bool,
}

pub struct Denoiser<T: Scalar> {
    pub config: DenoiserConfig,
    sites: Vec<SiteSpec>,
    params: ParamSet<T>,
    vocab: Vocab,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Denoiser<T>> {
        config.validate()?;
        let mut sites = Vec::new();
        let d = config.embed;
        sites.push(SiteSpec {
            id: "patch_embed".into(),
            in_dim: config.in_token_dim(),
            out_dim: d,
            token_wise: true,
        });
        sites.push(SiteSpec {
            id: "time_embed".into(),
            in_dim: config.time_features,
            out_dim: d,
            token_wise: false,
        });
        for i in 0..config.depth {
            sites.push(SiteSpec {
                id: format!("block{i}.token_mix"),
                in_dim: config.n_tokens(),
                out_dim: config.n_tokens(),
                token_wise: false,
            });
            sites.push(SiteSpec {
                id: format!("block{i}.ff1"),
                in_dim: d,
                out_dim: config.hidden,
                token_wise: true,
            });
            sites.push(SiteSpec {
                id: format!("block{i}.ff2"),
                in_dim: config.hidden,
                out_dim: d,
                token_wise: true,
            });
        }
        sites.push(SiteSpec {
            id: "out_proj".into(),
            in_dim: d,
            out_dim: config.patch_dim(),
            token_wise: true,
        });

        {
            let mut ids: Vec<&str> = sites.iter().map(|s| s.id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != sites.len() {
                return Err(Error::Validation("duplicate insertion site id".into()));
            }
        }

        let vocab = Vocab::default();
        let mut rng = stream_rng(seed, "denoiser-init");
        let mut params = ParamSet::new();
        for site in &sites {
            let std = 1.0 / (site.in_dim as f64).sqrt();
            let scale = if site.id == "out_proj" { 0.1 } else { 1.0 };
            let normal = Normal::new(0.0, std * scale).expect("valid std");
            let w = Array2::from_shape_fn((site.in_dim, site.out_dim), |_| {
                T::from_f64(normal.sample(&mut rng))
            });
            params.insert(format!("{}.w", site.id), shared(w));
            params.insert(
                format!("{}.bias", site.id),
                shared(Array2::zeros((1, site.out_dim))),
            );
        }
        let emb_normal = Normal::new(0.0, 0.1).expect("valid std");
        let table = Array2::from_shape_fn((vocab.len(), d), |_| {
            T::from_f64(emb_normal.sample(&mut rng))
        });
        params.insert("cond_embed", shared(table));

        Ok(Denoiser {
            config,
            sites,
            params,
            vocab,
        })
    }

    pub fn sites(&self) -> &[SiteSpec] {
        &self.sites
    }

    pub fn site(&self, id: &str) -> Option<&SiteSpec> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// Token-wise site ids, the default install list for propagation adapters.
    pub fn token_wise_sites(&self) -> Vec<String> {
        self.sites
            .iter()
            .filter(|s| s.token_wise)
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Replace all parameters (checkpoint load). Names must match exactly.
    pub fn load_params(&mut self, entries: Vec<(String, Array2<T>)>) -> Result<()> {
        for (name, arr) in entries {
            let slot = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Archive(format!("unknown parameter {name}")))?;
            if slot.borrow().dim() != arr.dim() {
                return Err(Error::Archive(format!(
                    "parameter {name} shape {:?} does not match model {:?}",
                    arr.dim(),
                    slot.borrow().dim()
                )));
            }
            *slot.borrow_mut() = arr;
        }
        Ok(())
    }

    fn patch_vector(frame: &Array3<T>, patch: usize, by: usize, bx: usize, out: &mut Vec<T>) {
        for py in 0..patch {
            for px in 0..patch {
                for c in 0..3 {
                    out.push(frame[[by * patch + py, bx * patch + px, c]]);
                }
            }
        }
    }

    /// Tokens for a noisy input, concatenating the clean conditioning frame
    /// in clip mode. Token order is frame-major, then patch-row-major.
    pub fn tokens(&self, z: &Media<T>, cond_frame: Option<&Array3<T>>) -> Result<Array2<T>> {
        let cfg = &self.config;
        if z.size() != (cfg.height, cfg.width) {
            return Err(Error::Shape(format!(
                "input size {:?} does not match model {}x{}",
                z.size(),
                cfg.height,
                cfg.width
            )));
        }
        if z.frames() != cfg.frames {
            return Err(Error::Shape(format!(
                "input has {} frames, model expects {}",
                z.frames(),
                cfg.frames
            )));
        }
        let (gh, gw) = cfg.token_grid();
        let mut data: Vec<T> = Vec::with_capacity(cfg.n_tokens() * cfg.in_token_dim());
        match cfg.kind {
            InputKind::Image => {
                for by in 0..gh {
                    for bx in 0..gw {
                        Self::patch_vector(z.frame(0), cfg.patch, by, bx, &mut data);
                    }
                }
            }
            InputKind::Clip => {
                let cond = cond_frame.ok_or_else(|| {
                    Error::Validation("clip mode requires a conditioning frame".into())
                })?;
                if cond.dim() != (cfg.height, cfg.width, 3) {
                    return Err(Error::Shape("conditioning frame size mismatch".into()));
                }
                for f in 0..cfg.frames {
                    for by in 0..gh {
                        for bx in 0..gw {
                            Self::patch_vector(z.frame(f), cfg.patch, by, bx, &mut data);
                            Self::patch_vector(cond, cfg.patch, by, bx, &mut data);
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((cfg.n_tokens(), cfg.in_token_dim()), data)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    /// Patchify media in the model's OUTPUT layout (`[n_tokens, patch_dim]`,
    /// no conditioning concat): the target layout for noise prediction.
    pub fn tokens_targets(&self, media: &Media<T>) -> Result<Array2<T>> {
        let cfg = &self.config;
        if media.size() != (cfg.height, cfg.width) || media.frames() != cfg.frames {
            return Err(Error::Shape(format!(
                "target media {:?} x{} frames does not match model",
                media.size(),
                media.frames()
            )));
        }
        let (gh, gw) = cfg.token_grid();
        let mut data: Vec<T> = Vec::with_capacity(cfg.n_tokens() * cfg.patch_dim());
        for f in 0..cfg.frames {
            for by in 0..gh {
                for bx in 0..gw {
                    Self::patch_vector(media.frame(f), cfg.patch, by, bx, &mut data);
                }
            }
        }
        Array2::from_shape_vec((cfg.n_tokens(), cfg.patch_dim()), data)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    /// Inverse of the output patch layout: predicted tokens back to media.
    pub fn media_from_tokens(&self, tokens: &Array2<T>) -> Result<Media<T>> {
        let cfg = &self.config;
        if tokens.dim() != (cfg.n_tokens(), cfg.patch_dim()) {
            return Err(Error::Shape(format!(
                "token array {:?}, expected ({}, {})",
                tokens.dim(),
                cfg.n_tokens(),
                cfg.patch_dim()
            )));
        }
        let (gh, gw) = cfg.token_grid();
        let mut frames = Vec::with_capacity(cfg.frames);
        for f in 0..cfg.frames {
            let mut frame = Array3::zeros((cfg.height, cfg.width, 3));
            for by in 0..gh {
                for bx in 0..gw {
                    let row = tokens.row(f * gh * gw + by * gw + bx);
                    let mut k = 0;
                    for py in 0..cfg.patch {
                        for px in 0..cfg.patch {
                            for c in 0..3 {
                                frame[[by * cfg.patch + py, bx * cfg.patch + px, c]] = row[k];
                                k += 1;
                            }
                        }
                    }
                }
            }
            frames.push(frame);
        }
        Ok(match cfg.kind {
            InputKind::Image => Media::Image(frames.pop().expect("one frame")),
            InputKind::Clip => Media::Clip(frames),
        })
    }

    fn time_features(&self, t: usize) -> Array2<T> {
        let k = self.config.time_features;
        let mut feat = Array2::zeros((1, k));
        for i in 0..k / 2 {
            let omega = 10_000f64.powf(-(i as f64) / (k as f64 / 2.0));
            let arg = t as f64 * omega;
            feat[[0, 2 * i]] = T::from_f64(arg.sin());
            feat[[0, 2 * i + 1]] = T::from_f64(arg.cos());
        }
        feat
    }

    fn site_linear(
        &self,
        tape: &mut Tape<T>,
        binder: &mut ParamBinder<T>,
        banks: &[&AdapterBank<T>],
        site_id: &str,
        x: NodeId,
        ctx: &ForwardPhaseCtx<'_, T>,
    ) -> Result<NodeId> {
        let site = self.site(site_id).expect("site exists");
        let w = self
            .params
            .get(&format!("{site_id}.w"))
            .expect("weight exists");
        let bias = self
            .params
            .get(&format!("{site_id}.bias"))
            .expect("bias exists");
        let w_node = binder.bind(tape, &format!("{site_id}.w"), w);
        let b_node = binder.bind(tape, &format!("{site_id}.bias"), bias);
        let y0 = tape.matmul(x, w_node);
        let y = tape.add_row(y0, b_node);
        apply_adapters_on_tape(
            tape,
            binder,
            banks,
            site_id,
            site.token_wise,
            x,
            w_node,
            y,
            ctx,
        )
    }

    /// Build the noise prediction on the tape. Returns the `[n_tokens,
    /// patch_dim]` output node.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        binder: &mut ParamBinder<T>,
        z_t: &Media<T>,
        cond_frame: Option<&Array3<T>>,
        keyword_ids: &[usize],
        t: usize,
        banks: &[&AdapterBank<T>],
        ctx: &ForwardPhaseCtx<'_, T>,
    ) -> Result<NodeId> {
        let tokens = self.tokens(z_t, cond_frame)?;
        let x = tape.leaf(tokens);
        let mut h = self.site_linear(tape, binder, banks, "patch_embed", x, ctx)?;

        let tfeat = tape.leaf(self.time_features(t));
        let temb = self.site_linear(tape, binder, banks, "time_embed", tfeat, ctx)?;
        h = tape.add_row(h, temb);

        if !keyword_ids.is_empty() {
            let table = self.params.get("cond_embed").expect("cond table");
            let table_node = binder.bind(tape, "cond_embed", table);
            let gathered = tape.gather_rows(table_node, keyword_ids);
            let summed = tape.sum_axis0(gathered);
            let cemb = tape.scale(summed, T::from_f64(1.0 / keyword_ids.len() as f64));
            h = tape.add_row(h, cemb);
        }

        for i in 0..self.config.depth {
            let ht = tape.transpose(h);
            let mixed = self.site_linear(
                tape,
                binder,
                banks,
                &format!("block{i}.token_mix"),
                ht,
                ctx,
            )?;
            let mixed_t = tape.transpose(mixed);
            h = tape.add(h, mixed_t);

            let f1 = self.site_linear(tape, binder, banks, &format!("block{i}.ff1"), h, ctx)?;
            let act = tape.silu(f1);
            let f2 = self.site_linear(tape, binder, banks, &format!("block{i}.ff2"), act, ctx)?;
            h = tape.add(h, f2);
        }

        self.site_linear(tape, binder, banks, "out_proj", h, ctx)
    }

    /// Convenience: run one forward and return the predicted noise as media.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_eps(
        &self,
        z_t: &Media<T>,
        cond_frame: Option<&Array3<T>>,
        keyword_ids: &[usize],
        t: usize,
        banks: &[&AdapterBank<T>],
        ctx: &ForwardPhaseCtx<'_, T>,
    ) -> Result<Media<T>> {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let out = self.forward_on_tape(
            &mut tape,
            &mut binder,
            z_t,
            cond_frame,
            keyword_ids,
            t,
            banks,
            ctx,
        )?;
        self.media_from_tokens(tape.value(out))
    }
}
