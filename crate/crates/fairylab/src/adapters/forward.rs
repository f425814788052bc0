//! Adapter forward algebra: plain evaluation and tape-building forms.
//!
//! The plain forms below are the operation contracts; the tape forms build
//! the same math as differentiable graph nodes for training. Consistency
//! between the two is covered by tests.

use super::{AdapterBank, AdapterVariant, DropoutDraw, LowRankAdapter, Phase, TokenMask};
use crate::autodiff::{NodeId, Scalar, Tape};
use crate::error::{Error, Result};
use crate::params::ParamBinder;
use ndarray::Array2;

fn check_dims<T: Scalar>(
    w: &Array2<T>,
    adapter: &LowRankAdapter<T>,
    x: &Array2<T>,
) -> Result<()> {
    let (in_dim, out_dim) = w.dim();
    if x.ncols() != in_dim {
        return Err(Error::Shape(format!(
            "input has {} features, weight expects {in_dim}",
            x.ncols()
        )));
    }
    if adapter.in_dim() != in_dim || adapter.out_dim() != out_dim {
        return Err(Error::Shape(format!(
            "adapter {} is {}x{}, weight is {in_dim}x{out_dim}",
            adapter.site_id,
            adapter.in_dim(),
            adapter.out_dim()
        )));
    }
    Ok(())
}

fn effective_b<T: Scalar>(
    adapter: &LowRankAdapter<T>,
    dropout_mask: Option<&Array2<T>>,
) -> Result<Array2<T>> {
    let b = adapter.b.borrow();
    match dropout_mask {
        None => Ok(b.clone()),
        Some(m) => {
            if m.dim() != b.dim() {
                return Err(Error::Shape(format!(
                    "dropout mask {:?} does not match factor {:?}",
                    m.dim(),
                    b.dim()
                )));
            }
            Ok(&*b * m)
        }
    }
}

/// `y = x W + (x B) A`, the plain LoRA forward. A scaled dropout mask, when
/// given, replaces `B` by `B * mask` (the mask already carries `1/(1-p)`).
pub fn lora_forward<T: Scalar>(
    w: &Array2<T>,
    adapter: &LowRankAdapter<T>,
    x: &Array2<T>,
    dropout_mask: Option<&Array2<T>>,
) -> Result<Array2<T>> {
    if adapter.variant != AdapterVariant::Lora {
        return Err(Error::Validation(format!(
            "adapter {} is not a lora adapter",
            adapter.site_id
        )));
    }
    check_dims(w, adapter, x)?;
    let b = effective_b(adapter, dropout_mask)?;
    let a = adapter.a.borrow();
    Ok(x.dot(w) + x.dot(&b).dot(&*a))
}

/// Row norms of `v` (`[in, out]`), one per input feature. With an epsilon
/// guard, `sqrt(ss + eps^2)` keeps degenerate rows finite; without it, a
/// zero-norm row is an error.
fn input_feature_norms<T: Scalar>(v: &Array2<T>, eps_guard: Option<f64>) -> Result<Array2<T>> {
    let mut norms = Array2::zeros((v.nrows(), 1));
    for i in 0..v.nrows() {
        let ss = v.row(i).iter().fold(T::zero(), |acc, x| acc + *x * *x);
        let n = match eps_guard {
            Some(e) => (ss + T::from_f64(e * e)).sqrt(),
            None => ss.sqrt(),
        };
        if n == T::zero() {
            return Err(Error::Validation(format!(
                "zero-norm column {i} in decomposed weight (degenerate site)"
            )));
        }
        norms[[i, 0]] = n;
    }
    Ok(norms)
}

/// The decomposed weight `g * normalize(W + BA)` minus `W`: the additive
/// branch a DoRA adapter contributes on top of the base path.
pub fn dora_delta_weight<T: Scalar>(
    w: &Array2<T>,
    adapter: &LowRankAdapter<T>,
    dropout_mask: Option<&Array2<T>>,
    eps_guard: Option<f64>,
) -> Result<Array2<T>> {
    let b = effective_b(adapter, dropout_mask)?;
    let a = adapter.a.borrow();
    let g = adapter
        .dora_magnitude
        .as_ref()
        .ok_or_else(|| Error::Validation("dora adapter without magnitude".into()))?
        .borrow();
    let v = w + &b.dot(&*a);
    let norms = input_feature_norms(&v, eps_guard)?;
    let mut delta = v;
    for i in 0..delta.nrows() {
        let scale = g[[i, 0]] / norms[[i, 0]];
        for x in delta.row_mut(i).iter_mut() {
            *x = *x * scale;
        }
    }
    delta -= w;
    Ok(delta)
}

/// `y = (g *_col normalize(W + BA)) x`: the weight-decomposed forward.
pub fn dora_forward<T: Scalar>(
    w: &Array2<T>,
    adapter: &LowRankAdapter<T>,
    x: &Array2<T>,
    dropout_mask: Option<&Array2<T>>,
    eps_guard: Option<f64>,
) -> Result<Array2<T>> {
    if adapter.variant != AdapterVariant::Dora {
        return Err(Error::Validation(format!(
            "adapter {} is not a dora adapter",
            adapter.site_id
        )));
    }
    check_dims(w, adapter, x)?;
    let delta = dora_delta_weight(w, adapter, dropout_mask, eps_guard)?;
    Ok(x.dot(w) + x.dot(&delta))
}

fn masked_input<T: Scalar>(x: &Array2<T>, mask: &TokenMask, phase: Phase) -> Result<Array2<T>> {
    if mask.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "token mask has {} entries, input has {} tokens",
            mask.len(),
            x.nrows()
        )));
    }
    let mut u = x.clone();
    for (i, &m) in mask.values().iter().enumerate() {
        let keep = match phase {
            Phase::Train => m == 1,
            Phase::Infer => m == 0,
        };
        if !keep {
            for v in u.row_mut(i).iter_mut() {
                *v = T::zero();
            }
        }
    }
    Ok(u)
}

/// Propagation forward: `y = Wx + PA(x * m_hat)` where `m_hat` selects
/// foreground tokens in training and background tokens at inference. The
/// base path is never masked.
pub fn masked_adapter_forward<T: Scalar>(
    w: &Array2<T>,
    adapter: &LowRankAdapter<T>,
    x: &Array2<T>,
    mask: &TokenMask,
    phase: Phase,
    dropout_mask: Option<&Array2<T>>,
    eps_guard: Option<f64>,
) -> Result<Array2<T>> {
    check_dims(w, adapter, x)?;
    let u = masked_input(x, mask, phase)?;
    let branch = match adapter.variant {
        AdapterVariant::Lora => {
            let b = effective_b(adapter, dropout_mask)?;
            u.dot(&b).dot(&*adapter.a.borrow())
        }
        AdapterVariant::Dora => {
            let delta = dora_delta_weight(w, adapter, dropout_mask, eps_guard)?;
            u.dot(&delta)
        }
    };
    Ok(x.dot(w) + branch)
}

/// Per-build adapter context: phase, the pixel-derived token mask for
/// propagation entries, and this step's factor dropout draws.
pub struct ForwardPhaseCtx<'a, T: Scalar> {
    pub phase: Phase,
    pub token_mask: Option<&'a TokenMask>,
    pub dropout: &'a DropoutDraw<T>,
    pub dora_eps_guard: Option<f64>,
}

/// Add every enabled adapter branch at `site_id` on top of `y_base`.
///
/// `x` and `w_node` are the site's input tokens and base weight on the tape;
/// disabling all adapters leaves `y_base` untouched (no extra nodes).
#[allow(clippy::too_many_arguments)]
pub fn apply_adapters_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut ParamBinder<T>,
    banks: &[&AdapterBank<T>],
    site_id: &str,
    site_token_wise: bool,
    x: NodeId,
    w_node: NodeId,
    y_base: NodeId,
    ctx: &ForwardPhaseCtx<'_, T>,
) -> Result<NodeId> {
    let mut y = y_base;
    for bank in banks {
        for entry in bank.at_site(site_id) {
            if !entry.enabled {
                continue;
            }
            let adapter = &entry.adapter;
            let prefix = format!("adapters/{}/{}", bank.name, entry.key());

            let b_node = binder.bind(tape, &format!("{prefix}.b"), &adapter.b);
            let b_eff = match (ctx.phase, ctx.dropout.get(&entry.key())) {
                (Phase::Train, Some(mask)) => tape.mul_const(b_node, mask.clone()),
                _ => b_node,
            };

            let u = if entry.masked {
                if !site_token_wise {
                    return Err(Error::Validation(format!(
                        "site {site_id} is not token-wise; propagation adapter not installable"
                    )));
                }
                let mask = ctx.token_mask.ok_or_else(|| {
                    Error::Validation(format!(
                        "masked adapter at {site_id} requires a token mask"
                    ))
                })?;
                let n_tokens = tape.value(x).nrows();
                if mask.len() != n_tokens {
                    return Err(Error::Shape(format!(
                        "token mask has {} entries, site {site_id} has {n_tokens} tokens",
                        mask.len()
                    )));
                }
                let m_hat = match ctx.phase {
                    Phase::Train => mask.clone(),
                    Phase::Infer => mask.complement(),
                };
                let col = Array2::from_shape_fn((n_tokens, 1), |(i, _)| {
                    T::from_f64(m_hat.values()[i] as f64)
                });
                let mask_leaf = tape.leaf(col);
                tape.mul_col(x, mask_leaf)
            } else {
                x
            };

            let a_node = binder.bind(tape, &format!("{prefix}.a"), &adapter.a);
            let branch = match adapter.variant {
                AdapterVariant::Lora => {
                    let h = tape.matmul(u, b_eff);
                    tape.matmul(h, a_node)
                }
                AdapterVariant::Dora => {
                    let g = adapter.dora_magnitude.as_ref().ok_or_else(|| {
                        Error::Validation("dora adapter without magnitude".into())
                    })?;
                    let g_node = binder.bind(tape, &format!("{prefix}.g"), g);
                    let ba = tape.matmul(b_eff, a_node);
                    let v = tape.add(w_node, ba);
                    let sq = tape.mul(v, v);
                    let mut ss = tape.sum_axis1(sq);
                    if let Some(e) = ctx.dora_eps_guard {
                        let eps = tape.leaf(Array2::from_elem(
                            tape.value(ss).dim(),
                            T::from_f64(e * e),
                        ));
                        ss = tape.add(ss, eps);
                    }
                    let norms = tape.sqrt(ss);
                    if tape.value(norms).iter().any(|n| *n == T::zero()) {
                        return Err(Error::Validation(format!(
                            "zero-norm column in decomposed weight at {site_id}"
                        )));
                    }
                    let vhat = tape.div_col(v, norms);
                    let scaled = tape.mul_col(vhat, g_node);
                    let delta = tape.sub(scaled, w_node);
                    tape.matmul(u, delta)
                }
            };
            y = tape.add(y, branch);
        }
    }
    Ok(y)
}
