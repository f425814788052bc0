//! Low-rank adapter algebra.
//!
//! Activations everywhere are token-major `[n, in]`, base weights `[in, out]`
//! with `y = x W`. An adapter's factors mirror `y = Wx + ABx`: the down
//! factor `b: [in, rank]` touches the input first, the up factor
//! `a: [rank, out]` maps back out, so the branch is `(x b) a`.
//!
//! DoRA keeps the weight-decomposed form: per input feature `i`,
//! `y = x (g_i * row_i(V) / ||row_i(V)||)` with `V = W + b a`. In the
//! conventional column-major writing this is magnitude times the
//! column-normalized direction of `W + AB`, with `g` initialized to the
//! column norms of `W`.
//!
//! The propagation adapter is an ordinary LoRA/DoRA whose input tokens are
//! masked: foreground tokens during training, background tokens at inference.
//! The base path is never masked.

mod forward;
mod mask;
mod persist;

pub use forward::{
    apply_adapters_on_tape, dora_delta_weight, dora_forward, lora_forward,
    masked_adapter_forward, ForwardPhaseCtx,
};
pub use mask::{downsample_mask, TokenMask};
pub use persist::{load_bank, save_bank};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::params::{shared, SharedTensor};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::rc::Rc;

/// Training vs inference behavior: orientation of the propagation mask and
/// whether factor dropout is live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterVariant {
    Lora,
    Dora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterRole {
    Style,
    Identity,
    Motion,
}

impl AdapterRole {
    pub fn tag(&self) -> &'static str {
        match self {
            AdapterRole::Style => "style",
            AdapterRole::Identity => "identity",
            AdapterRole::Motion => "motion",
        }
    }
}

/// Factors of one low-rank adapter at one insertion site.
pub struct LowRankAdapter<T: Scalar> {
    pub site_id: String,
    pub rank: usize,
    /// Factor-entry dropout probability (applied to `b` during training with
    /// inverted scaling).
    pub dropout_p: f64,
    pub variant: AdapterVariant,
    /// Up factor ("A"): `[rank, out]`.
    pub a: SharedTensor<T>,
    /// Down factor ("B"): `[in, rank]`.
    pub b: SharedTensor<T>,
    /// DoRA magnitude, one positive entry per input feature: `[in, 1]`.
    pub dora_magnitude: Option<SharedTensor<T>>,
}

impl<T: Scalar> Clone for LowRankAdapter<T> {
    fn clone(&self) -> Self {
        LowRankAdapter {
            site_id: self.site_id.clone(),
            rank: self.rank,
            dropout_p: self.dropout_p,
            variant: self.variant,
            a: Rc::clone(&self.a),
            b: Rc::clone(&self.b),
            dora_magnitude: self.dora_magnitude.as_ref().map(Rc::clone),
        }
    }
}

impl<T: Scalar> LowRankAdapter<T> {
    pub fn in_dim(&self) -> usize {
        self.b.borrow().nrows()
    }
    pub fn out_dim(&self) -> usize {
        self.a.borrow().ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (in_dim, rank_b) = self.b.borrow().dim();
        let (rank_a, out_dim) = self.a.borrow().dim();
        if rank_a != self.rank || rank_b != self.rank {
            return Err(Error::Shape(format!(
                "adapter {}: factor ranks {rank_b}/{rank_a} disagree with rank {}",
                self.site_id, self.rank
            )));
        }
        if self.rank >= in_dim.min(out_dim) {
            return Err(Error::Validation(format!(
                "adapter {}: rank {} must be < min({in_dim}, {out_dim})",
                self.site_id, self.rank
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Validation(format!(
                "adapter {}: dropout_p {} outside [0, 1)",
                self.site_id, self.dropout_p
            )));
        }
        match (self.variant, &self.dora_magnitude) {
            (AdapterVariant::Dora, Some(g)) => {
                let g = g.borrow();
                if g.dim() != (in_dim, 1) {
                    return Err(Error::Shape(format!(
                        "adapter {}: dora magnitude shape {:?}, want ({in_dim}, 1)",
                        self.site_id,
                        g.dim()
                    )));
                }
                if !g.iter().all(|v| *v > T::zero()) {
                    return Err(Error::Validation(format!(
                        "adapter {}: dora magnitude must be strictly positive",
                        self.site_id
                    )));
                }
            }
            (AdapterVariant::Dora, None) => {
                return Err(Error::Validation(format!(
                    "adapter {}: dora variant requires a magnitude vector",
                    self.site_id
                )));
            }
            (AdapterVariant::Lora, Some(_)) => {
                return Err(Error::Validation(format!(
                    "adapter {}: lora variant carries a dora magnitude",
                    self.site_id
                )));
            }
            (AdapterVariant::Lora, None) => {}
        }
        Ok(())
    }

    /// LoRA init: `b` Gaussian, `a` zero, so the branch starts as a no-op.
    pub fn init_lora(
        site_id: &str,
        in_dim: usize,
        out_dim: usize,
        rank: usize,
        dropout_p: f64,
        rng: &mut impl Rng,
    ) -> Result<LowRankAdapter<T>> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let b = Array2::from_shape_fn((in_dim, rank), |_| T::from_f64(normal.sample(rng)));
        let a = Array2::zeros((rank, out_dim));
        let adapter = LowRankAdapter {
            site_id: site_id.to_string(),
            rank,
            dropout_p,
            variant: AdapterVariant::Lora,
            a: shared(a),
            b: shared(b),
            dora_magnitude: None,
        };
        adapter.validate()?;
        Ok(adapter)
    }

    /// DoRA init: factors as in LoRA, magnitude set to the column norms of
    /// the base weight, so the initial forward equals the base forward.
    pub fn init_dora(
        site_id: &str,
        base_weight: &Array2<T>,
        rank: usize,
        dropout_p: f64,
        rng: &mut impl Rng,
    ) -> Result<LowRankAdapter<T>> {
        let (in_dim, out_dim) = base_weight.dim();
        let mut adapter = Self::init_lora(site_id, in_dim, out_dim, rank, dropout_p, rng)?;
        adapter.variant = AdapterVariant::Dora;
        let mut g = Array2::zeros((in_dim, 1));
        for i in 0..in_dim {
            let norm = base_weight
                .row(i)
                .iter()
                .fold(T::zero(), |acc, v| acc + *v * *v)
                .sqrt();
            g[[i, 0]] = norm;
        }
        adapter.dora_magnitude = Some(shared(g));
        adapter.validate()?;
        Ok(adapter)
    }
}

/// One adapter installed in a bank, with its role, enable flag, and whether
/// the propagation token mask applies to it.
pub struct BankEntry<T: Scalar> {
    pub role: AdapterRole,
    pub enabled: bool,
    /// Propagation behavior: mask input tokens by phase.
    pub masked: bool,
    pub adapter: LowRankAdapter<T>,
    /// Archive key under which a shared up factor is stored once.
    pub shared_a_key: Option<String>,
}

impl<T: Scalar> Clone for BankEntry<T> {
    fn clone(&self) -> Self {
        BankEntry {
            role: self.role,
            enabled: self.enabled,
            masked: self.masked,
            adapter: self.adapter.clone(),
            shared_a_key: self.shared_a_key.clone(),
        }
    }
}

impl<T: Scalar> BankEntry<T> {
    /// Stable key for dropout draws and parameter naming.
    pub fn key(&self) -> String {
        format!("{}/{}", self.adapter.site_id, self.role.tag())
    }
}

/// Named collection of adapters across sites.
#[derive(Default)]
pub struct AdapterBank<T: Scalar> {
    pub name: String,
    entries: Vec<BankEntry<T>>,
}

impl<T: Scalar> Clone for AdapterBank<T> {
    fn clone(&self) -> Self {
        AdapterBank {
            name: self.name.clone(),
            entries: self.entries.clone(),
        }
    }
}

impl<T: Scalar> AdapterBank<T> {
    pub fn new(name: &str) -> Self {
        AdapterBank {
            name: name.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[BankEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [BankEntry<T>] {
        &mut self.entries
    }

    pub fn at_site<'a>(&'a self, site_id: &'a str) -> impl Iterator<Item = &'a BankEntry<T>> {
        self.entries
            .iter()
            .filter(move |e| e.adapter.site_id == site_id)
    }

    /// Insert with the bank invariants: one style adapter per site; a motion
    /// adapter requires an identity adapter at the site, must alias its up
    /// factor, and must share the down factor's shape.
    pub fn insert(&mut self, entry: BankEntry<T>) -> Result<()> {
        entry.adapter.validate()?;
        let site = &entry.adapter.site_id;
        match entry.role {
            AdapterRole::Style => {
                if self
                    .at_site(site)
                    .any(|e| e.role == AdapterRole::Style)
                {
                    return Err(Error::Validation(format!(
                        "bank {}: site {site} already has a style adapter",
                        self.name
                    )));
                }
            }
            AdapterRole::Motion => {
                let identity = self
                    .at_site(site)
                    .find(|e| e.role == AdapterRole::Identity)
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "bank {}: motion adapter at {site} has no identity adapter",
                            self.name
                        ))
                    })?;
                if !Rc::ptr_eq(&identity.adapter.a, &entry.adapter.a) {
                    return Err(Error::Validation(format!(
                        "bank {}: motion adapter at {site} must share the identity up factor",
                        self.name
                    )));
                }
                if identity.adapter.b.borrow().dim() != entry.adapter.b.borrow().dim() {
                    return Err(Error::Shape(format!(
                        "bank {}: motion down factor shape differs from identity at {site}",
                        self.name
                    )));
                }
            }
            AdapterRole::Identity => {}
        }
        self.entries.push(entry);
        Ok(())
    }

    /// All tensors owned by this bank as (param name, tensor), shared up
    /// factors listed once under the owning entry's name.
    pub fn params(&self) -> Vec<(String, SharedTensor<T>)> {
        let mut seen: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for e in &self.entries {
            let prefix = format!("adapters/{}/{}", self.name, e.key());
            let a_ptr = Rc::as_ptr(&e.adapter.a) as usize;
            if !seen.contains(&a_ptr) {
                seen.push(a_ptr);
                out.push((format!("{prefix}.a"), Rc::clone(&e.adapter.a)));
            }
            out.push((format!("{prefix}.b"), Rc::clone(&e.adapter.b)));
            if let Some(g) = &e.adapter.dora_magnitude {
                out.push((format!("{prefix}.g"), Rc::clone(g)));
            }
        }
        out
    }

    /// Fork the bank with fresh tensors, preserving aliasing structure
    /// within the bank (shared up factors stay shared in the copy).
    pub fn deep_clone(&self) -> AdapterBank<T> {
        let mut copies: Vec<(usize, SharedTensor<T>)> = Vec::new();
        let mut dup = |t: &SharedTensor<T>| -> SharedTensor<T> {
            let key = Rc::as_ptr(t) as usize;
            if let Some((_, c)) = copies.iter().find(|(k, _)| *k == key) {
                return Rc::clone(c);
            }
            let fresh = shared(t.borrow().clone());
            copies.push((key, Rc::clone(&fresh)));
            fresh
        };
        let entries = self
            .entries
            .iter()
            .map(|e| BankEntry {
                role: e.role,
                enabled: e.enabled,
                masked: e.masked,
                adapter: LowRankAdapter {
                    site_id: e.adapter.site_id.clone(),
                    rank: e.adapter.rank,
                    dropout_p: e.adapter.dropout_p,
                    variant: e.adapter.variant,
                    a: dup(&e.adapter.a),
                    b: dup(&e.adapter.b),
                    dora_magnitude: e.adapter.dora_magnitude.as_ref().map(&mut dup),
                },
                shared_a_key: e.shared_a_key.clone(),
            })
            .collect();
        AdapterBank {
            name: self.name.clone(),
            entries,
        }
    }

    /// Parameter names for one role, e.g. the stage-2 trainable set.
    pub fn param_names_for_role(&self, role: AdapterRole, suffix: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| format!("adapters/{}/{}{suffix}", self.name, e.key()))
            .collect()
    }
}

/// Per-step dropout masks for factor entries, already carrying the inverted
/// `1/(1-p)` scale. Keyed by [`BankEntry::key`].
pub struct DropoutDraw<T: Scalar> {
    masks: HashMap<String, Array2<T>>,
}

impl<T: Scalar> DropoutDraw<T> {
    pub fn none() -> Self {
        DropoutDraw {
            masks: HashMap::new(),
        }
    }

    /// Draw fresh Bernoulli masks for every enabled adapter in `banks` whose
    /// key is in `active` (or all enabled adapters if `active` is None).
    pub fn draw(
        banks: &[&AdapterBank<T>],
        active: Option<&[String]>,
        rng: &mut impl Rng,
    ) -> DropoutDraw<T> {
        let mut masks = HashMap::new();
        for bank in banks {
            for e in bank.entries() {
                if !e.enabled || e.adapter.dropout_p <= 0.0 {
                    continue;
                }
                let key = e.key();
                if let Some(active) = active {
                    if !active.contains(&key) {
                        continue;
                    }
                }
                let p = e.adapter.dropout_p;
                let scale = T::from_f64(1.0 / (1.0 - p));
                let dim = e.adapter.b.borrow().dim();
                let mask = Array2::from_shape_fn(dim, |_| {
                    if rng.gen::<f64>() < p {
                        T::zero()
                    } else {
                        scale
                    }
                });
                masks.insert(key, mask);
            }
        }
        DropoutDraw { masks }
    }

    pub fn get(&self, key: &str) -> Option<&Array2<T>> {
        self.masks.get(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;

    #[test]
    fn lora_init_is_noop_branch() {
        let mut rng = stream_rng(0, "t");
        let ad: LowRankAdapter<f64> =
            LowRankAdapter::init_lora("s", 6, 4, 2, 0.0, &mut rng).unwrap();
        assert!(ad.a.borrow().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dora_requires_positive_magnitude() {
        let mut rng = stream_rng(0, "t");
        let w = Array2::from_elem((4, 3), 0.5f64);
        let ad = LowRankAdapter::init_dora("s", &w, 2, 0.0, &mut rng).unwrap();
        ad.validate().unwrap();
        ad.dora_magnitude.as_ref().unwrap().borrow_mut()[[0, 0]] = 0.0;
        assert!(ad.validate().is_err());
    }

    #[test]
    fn bank_rejects_second_style_adapter_at_site() {
        let mut rng = stream_rng(0, "t");
        let mut bank: AdapterBank<f64> = AdapterBank::new("b");
        for i in 0..2 {
            let ad = LowRankAdapter::init_lora("site", 6, 6, 2, 0.0, &mut rng).unwrap();
            let res = bank.insert(BankEntry {
                role: AdapterRole::Style,
                enabled: true,
                masked: true,
                adapter: ad,
                shared_a_key: None,
            });
            if i == 0 {
                res.unwrap();
            } else {
                assert!(res.is_err());
            }
        }
    }

    #[test]
    fn motion_must_alias_identity_up_factor() {
        let mut rng = stream_rng(0, "t");
        let mut bank: AdapterBank<f64> = AdapterBank::new("b");
        let id = LowRankAdapter::init_lora("site", 6, 6, 2, 0.1, &mut rng).unwrap();
        let id_a = Rc::clone(&id.a);
        bank.insert(BankEntry {
            role: AdapterRole::Identity,
            enabled: true,
            masked: false,
            adapter: id,
            shared_a_key: None,
        })
        .unwrap();

        // non-aliased up factor is rejected
        let stray = LowRankAdapter::init_lora("site", 6, 6, 2, 0.1, &mut rng).unwrap();
        assert!(bank
            .insert(BankEntry {
                role: AdapterRole::Motion,
                enabled: true,
                masked: false,
                adapter: stray,
                shared_a_key: None,
            })
            .is_err());

        let mut motion = LowRankAdapter::init_lora("site", 6, 6, 2, 0.1, &mut rng).unwrap();
        motion.a = id_a;
        bank.insert(BankEntry {
            role: AdapterRole::Motion,
            enabled: true,
            masked: false,
            adapter: motion,
            shared_a_key: Some("site.shared_a".into()),
        })
        .unwrap();
        // the shared up factor appears once in the param list
        let names: Vec<String> = bank.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".a")).count(), 1);
        assert_eq!(names.iter().filter(|n| n.ends_with(".b")).count(), 2);
    }

    #[test]
    fn dropout_expectation_preserves_factor() {
        // E[B * M_p / (1-p)] = B within 1% over 1e5 draws
        let mut rng = stream_rng(42, "dropout");
        let p = 0.1;
        let dim = (4, 4);
        let b = Array2::from_elem(dim, 0.7f64);
        let mut acc = Array2::<f64>::zeros(dim);
        let n = 100_000;
        let scale = 1.0 / (1.0 - p);
        for _ in 0..n {
            let mask = Array2::from_shape_fn(dim, |_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    scale
                }
            });
            acc += &(&mask * &b);
        }
        acc /= n as f64;
        for (got, want) in acc.iter().zip(b.iter()) {
            assert!(
                (got - want).abs() / want < 0.01,
                "dropout mean {got} vs {want}"
            );
        }
    }
}
