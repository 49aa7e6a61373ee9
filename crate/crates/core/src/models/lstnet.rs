//! LSTNet: temporal convolution, a GRU over its outputs, a skip GRU over
//! phase-strided subsequences, and a linear autoregressive bypass on the
//! target channel.

use super::{ForwardCtx, Init, LstNetHyper, ModelShape, ParamVars};
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

fn init_gru(init: &mut Init, prefix: &str, input: usize, hidden: usize) {
    for gate in ["z", "r", "n"] {
        init.matrix(&format!("{prefix}.w_{gate}"), input, hidden);
        init.matrix(&format!("{prefix}.u_{gate}"), hidden, hidden);
        init.zeros(&format!("{prefix}.b_{gate}"), &[1, hidden]);
    }
}

pub(super) fn init(init: &mut Init, shape: ModelShape, h: &LstNetHyper) {
    let c = shape.n_features;
    for k in 0..h.width {
        init.weight(&format!("conv.weight.{k}"), &[c, h.filters], c * h.width, h.filters);
    }
    init.zeros("conv.bias", &[1, h.filters]);
    init_gru(init, "gru", h.filters, h.hidden);
    init_gru(init, "skip_gru", h.filters, h.skip_hidden);
    let dense_in = h.hidden + h.skip * h.skip_hidden;
    init.matrix("dense.weight", dense_in, 1);
    init.zeros("dense.bias", &[1, 1]);
    let q = h.ar_window.min(shape.seq_len);
    init.matrix("ar.weight", q, 1);
    init.zeros("ar.bias", &[1, 1]);
}

/// One GRU step: `h' = (1 - z) * n + z * h`.
fn gru_step(g: &mut Graph, p: &ParamVars<'_>, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let gate = |g: &mut Graph, name: &str, hidden: Var| -> Result<Var> {
        let a = g.matmul(x, p.get(&format!("{prefix}.w_{name}")))?;
        let b = g.matmul(hidden, p.get(&format!("{prefix}.u_{name}")))?;
        let s = g.add(a, b)?;
        g.add(s, p.get(&format!("{prefix}.b_{name}")))
    };
    let z = gate(g, "z", h)?;
    let z = g.sigmoid(z);
    let r = gate(g, "r", h)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h)?;
    let n = gate(g, "n", rh)?;
    let n = g.tanh(n);
    let one_minus_z = g.affine(z, -1.0, 1.0);
    let a = g.mul(one_minus_z, n)?;
    let b = g.mul(z, h)?;
    g.add(a, b)
}

fn run_gru(g: &mut Graph, p: &ParamVars<'_>, prefix: &str, rows: &[Var], hidden: usize) -> Result<Var> {
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    for &x in rows {
        h = gru_step(g, p, prefix, x, h)?;
    }
    Ok(h)
}

pub(super) fn forward(
    g: &mut Graph,
    p: &ParamVars<'_>,
    window: Var,
    shape: ModelShape,
    h: &LstNetHyper,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let l = shape.seq_len;
    let steps = l - h.width + 1;

    let mut conv = None;
    for k in 0..h.width {
        let rows = g.slice(window, 0, k, steps)?;
        let term = g.matmul(rows, p.get(&format!("conv.weight.{k}")))?;
        conv = Some(match conv {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let conv = g.add(conv.expect("width >= 1"), p.get("conv.bias"))?;
    let conv = g.relu(conv);
    let conv = ctx.dropout(g, conv, 0)?;

    let rows: Vec<Var> = (0..steps).map(|t| g.slice(conv, 0, t, 1)).collect::<Result<_>>()?;
    let last = run_gru(g, p, "gru", &rows, h.hidden)?;

    // phase i walks positions steps-1-i, steps-1-i-skip, ... in time order
    let mut parts = vec![last];
    for phase in 0..h.skip {
        let seq: Vec<Var> = if phase < steps {
            let mut idx: Vec<usize> = (0..steps).rev().skip(phase).step_by(h.skip).collect();
            idx.reverse();
            idx.into_iter().map(|t| rows[t]).collect()
        } else {
            Vec::new()
        };
        parts.push(run_gru(g, p, "skip_gru", &seq, h.skip_hidden)?);
    }
    let joined = g.concat(&parts, 1)?;
    let joined = ctx.dropout(g, joined, 1)?;
    let dense = g.matmul(joined, p.get("dense.weight"))?;
    let dense = g.add(dense, p.get("dense.bias"))?;

    let q = h.ar_window.min(l);
    let recent = g.slice(window, 0, l - q, q)?;
    let recent = g.slice(recent, 1, shape.target_index, 1)?;
    let ar = g.mul(recent, p.get("ar.weight"))?;
    let ar = g.sum(ar);
    let ar = g.add(ar, p.get("ar.bias"))?;

    let out = g.add(dense, ar)?;
    g.reshape(out, &[1])
}
