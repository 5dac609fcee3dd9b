use std::collections::HashMap;
use std::f64::consts::PI;

use super::plan::{GroupParams, GroupSource, LayerPlan};
use super::{Dims, LivError};
use crate::genome::{LivFamily, Nonlinearity, Role};
use crate::grad::{Tape, Tensor, Var};
use crate::Scalar;

/// Width of the positional feature map behind implicit kernels.
pub const IMPLICIT_FEATURES: usize = 8;

/// Fixed features `[len, IMPLICIT_FEATURES]`: cosine/sine pairs at
/// increasing frequencies under decaying exponential windows. Every cosine
/// column equals 1 at lag zero.
pub fn positional_features<T: Scalar>(len: usize) -> Tensor<T> {
    let pairs = IMPLICIT_FEATURES / 2;
    let mut t = Tensor::zeros(&[len, IMPLICIT_FEATURES]);
    for pos in 0..len {
        for f in 0..pairs {
            let freq = PI * f as f64 / len.max(1) as f64;
            let window = (-(pos as f64) * 0.3 / (f + 1) as f64).exp();
            t.set(pos, 2 * f, T::of((freq * pos as f64).cos() * window));
            t.set(pos, 2 * f + 1, T::of((freq * pos as f64).sin() * window));
        }
    }
    t
}

/// Per-branch feature groups of one layer.
pub(crate) type BranchGroups = Vec<(Role, Var)>;

pub(crate) fn lookup(groups: &BranchGroups, role: Role, branch: usize) -> Result<Var, LivError> {
    groups
        .iter()
        .find(|(r, _)| *r == role)
        .map(|(_, v)| *v)
        .ok_or(LivError::MissingGroup { role, branch })
}

fn nonlinear<T: Scalar>(tape: &mut Tape<T>, x: Var, nl: Nonlinearity) -> Var {
    match nl {
        Nonlinearity::Sigmoid => tape.sigmoid(x),
        Nonlinearity::Swish => tape.swish(x),
        _ => x,
    }
}

/// Computes one feature group from the layer input `x`.
pub(crate) fn compute_group<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    gp: &GroupParams,
    x: Var,
    dims: &Dims,
) -> Result<Var, LivError> {
    if let Some(k) = gp.explicit {
        return Ok(params[k]);
    }
    if let Some(w) = gp.implicit {
        let phi = tape.constant(positional_features(dims.seq_len));
        return Ok(tape.matmul(phi, params[w])?);
    }
    let mut g = x;
    if let Some(s) = gp.scale {
        g = tape.mul(g, params[s])?;
    }
    if let Some(w) = gp.proj {
        g = tape.matmul(g, params[w])?;
    }
    if let Some(k) = gp.taps {
        g = tape.causal_conv1d(g, params[k], dims.conv_mode)?;
    }
    if let Some(b) = gp.bias {
        g = tape.add(g, params[b])?;
    }
    Ok(nonlinear(tape, g, gp.nonlinearity))
}

/// Groups for every branch of `layer`. Routed groups are taken from
/// `cache`, keyed by (producer layer, branch, role).
pub(crate) fn featurize_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    layer: &LayerPlan,
    x: Var,
    dims: &Dims,
    cache: &HashMap<(usize, usize, Role), Var>,
) -> Result<Vec<BranchGroups>, LivError> {
    let mut out = Vec::with_capacity(layer.branches.len());
    for (br, branch) in layer.branches.iter().enumerate() {
        let mut groups = Vec::with_capacity(branch.groups.len());
        for binding in &branch.groups {
            let v = match &binding.source {
                GroupSource::Own(gp) => compute_group(tape, params, gp, x, dims)?,
                GroupSource::Routed { layer: p } => *cache
                    .get(&(*p, br, binding.role))
                    .ok_or(LivError::MissingGroup { role: binding.role, branch: br })?,
            };
            groups.push((binding.role, v));
        }
        out.push(groups);
    }
    Ok(out)
}

fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &LayerPlan,
    g: &BranchGroups,
    br: usize,
) -> Result<Var, LivError> {
    let (q, k, v) = (lookup(g, Role::Q, br)?, lookup(g, Role::K, br)?, lookup(g, Role::V, br)?);
    let hd = layer.hyper.head_dim;
    let heads = tape.value(q).cols() / hd;
    let kv_heads = tape.value(k).cols() / hd;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let kvh = h % kv_heads;
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, kvh * hd, hd)?;
        let vh = tape.slice_cols(v, kvh * hd, hd)?;
        let kt = tape.transpose(kh);
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, 1.0 / (hd as f64).sqrt());
        let p = tape.causal_softmax(s)?;
        outs.push(tape.matmul(p, vh)?);
    }
    Ok(tape.concat_cols(&outs)?)
}

fn recurrence<T: Scalar>(
    tape: &mut Tape<T>,
    g: &BranchGroups,
    br: usize,
    dims: &Dims,
) -> Result<Var, LivError> {
    let x = lookup(g, Role::X, br)?;
    let a = lookup(g, Role::A, br)?;
    let z = lookup(g, Role::Z, br)?;
    let b = lookup(g, Role::B, br)?;
    let c = lookup(g, Role::C, br)?;
    let d = tape.value(x).cols();
    let n = tape.value(b).cols();
    let a_rep = tape.repeat_cols(a, n);
    let x_rep = tape.repeat_cols(x, n);
    let b_tile = tape.tile_cols(b, d);
    let u = tape.mul(x_rep, b_tile)?;
    let h = tape.gated_scan(a_rep, u, dims.scan_mode)?;
    let c_tile = tape.tile_cols(c, d);
    let hc = tape.mul(h, c_tile)?;
    let y = tape.sum_groups(hc, n)?;
    Ok(tape.mul(z, y)?)
}

fn gated_conv<T: Scalar>(
    tape: &mut Tape<T>,
    g: &BranchGroups,
    br: usize,
    dims: &Dims,
) -> Result<Var, LivError> {
    let b = lookup(g, Role::B, br)?;
    let c = lookup(g, Role::C, br)?;
    let v = lookup(g, Role::V, br)?;
    let k = lookup(g, Role::Kernel, br)?;
    let bv = tape.mul(b, v)?;
    let conv = tape.causal_conv1d(bv, k, dims.conv_mode)?;
    Ok(tape.mul(c, conv)?)
}

fn memoryless<T: Scalar>(tape: &mut Tape<T>, g: &BranchGroups, br: usize) -> Result<Var, LivError> {
    let gate = lookup(g, Role::Gate, br)?;
    let x = lookup(g, Role::X, br)?;
    let s = tape.swish(gate);
    Ok(tape.mul(s, x)?)
}

/// Applies the operator of `layer` with its structure-specific algorithm.
/// Differential layers return the difference of their two branches.
pub(crate) fn apply_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    layer: &LayerPlan,
    groups: &[BranchGroups],
    dims: &Dims,
) -> Result<Var, LivError> {
    let mut ys = Vec::with_capacity(groups.len());
    for (br, g) in groups.iter().enumerate() {
        let mixed = match layer.family {
            LivFamily::Attention => attention(tape, layer, g, br)?,
            LivFamily::Recurrence => recurrence(tape, g, br, dims)?,
            LivFamily::GatedConv => gated_conv(tape, g, br, dims)?,
            LivFamily::Memoryless => memoryless(tape, g, br)?,
        };
        let y = match layer.branches[br].out {
            Some(w) => tape.matmul(mixed, params[w])?,
            None => mixed,
        };
        ys.push(y);
    }
    match ys.as_slice() {
        [y] => Ok(*y),
        [y1, y2] => Ok(tape.sub(*y1, *y2)?),
        _ => unreachable!("layers have one or two branches"),
    }
}
