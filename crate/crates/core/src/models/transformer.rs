//! Encoder-only transformers. `Vanilla` attends over the whole window;
//! `Tst` embeds each step's feature vector and applies a causal mask.
//! Both read the forecast off the final position.

use super::layers::{causal_mask, multi_head_attention, sinusoidal_encoding};
use super::{ForwardCtx, Init, ModelShape, ParamVars, TransformerHyper};
use crate::error::Result;
use crate::tensor::{Graph, Var};

const LN_EPS: f64 = 1e-5;

pub(super) fn init(init: &mut Init, shape: ModelShape, h: &TransformerHyper) {
    let (c, d) = (shape.n_features, h.d_model);
    init.matrix("embed.weight", c, d);
    init.zeros("embed.bias", &[1, d]);
    for layer in 0..h.n_layers {
        let pre = format!("layer{layer}");
        init.matrix(&format!("{pre}.attn.q.weight"), d, d);
        init.zeros(&format!("{pre}.attn.q.bias"), &[1, d]);
        // a key bias only shifts each score row by a constant, which softmax ignores
        init.matrix(&format!("{pre}.attn.k.weight"), d, d);
        init.matrix(&format!("{pre}.attn.v.weight"), d, d);
        init.zeros(&format!("{pre}.attn.v.bias"), &[1, d]);
        init.matrix(&format!("{pre}.attn.out.weight"), d, d);
        init.zeros(&format!("{pre}.attn.out.bias"), &[1, d]);
        init.ones(&format!("{pre}.norm1.gain"), &[1, d]);
        init.zeros(&format!("{pre}.norm1.bias"), &[1, d]);
        init.matrix(&format!("{pre}.ff1.weight"), d, h.ff_width);
        init.zeros(&format!("{pre}.ff1.bias"), &[1, h.ff_width]);
        init.matrix(&format!("{pre}.ff2.weight"), h.ff_width, d);
        init.zeros(&format!("{pre}.ff2.bias"), &[1, d]);
        init.ones(&format!("{pre}.norm2.gain"), &[1, d]);
        init.zeros(&format!("{pre}.norm2.bias"), &[1, d]);
    }
    init.matrix("readout.weight", d, 1);
    init.zeros("readout.bias", &[1, 1]);
}

fn linear(g: &mut Graph, p: &ParamVars<'_>, x: Var, name: &str, bias: bool) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{name}.weight")))?;
    if bias {
        g.add(y, p.get(&format!("{name}.bias")))
    } else {
        Ok(y)
    }
}

fn add_norm(g: &mut Graph, p: &ParamVars<'_>, x: Var, update: Var, name: &str) -> Result<Var> {
    let s = g.add(x, update)?;
    let n = g.layer_norm(s, 1, LN_EPS)?;
    let n = g.mul(n, p.get(&format!("{name}.gain")))?;
    g.add(n, p.get(&format!("{name}.bias")))
}

pub(super) fn encode(
    g: &mut Graph,
    p: &ParamVars<'_>,
    window: Var,
    h: &TransformerHyper,
    causal: bool,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let l = g.shape(window)[0];
    let mask = causal.then(|| causal_mask(l));
    let pe = g.constant(sinusoidal_encoding(l, h.d_model)?);
    let x = linear(g, p, window, "embed", true)?;
    let x = g.add(x, pe)?;
    let mut x = ctx.dropout(g, x, 0)?;

    for layer in 0..h.n_layers {
        let pre = format!("layer{layer}");
        let q = linear(g, p, x, &format!("{pre}.attn.q"), true)?;
        let k = linear(g, p, x, &format!("{pre}.attn.k"), false)?;
        let v = linear(g, p, x, &format!("{pre}.attn.v"), true)?;
        let heads = multi_head_attention(g, q, k, v, mask.as_deref(), h.n_heads)?;
        let attn = linear(g, p, heads, &format!("{pre}.attn.out"), true)?;
        let attn = ctx.dropout(g, attn, 1 + 2 * layer as u64)?;
        x = add_norm(g, p, x, attn, &format!("{pre}.norm1"))?;

        let ff = linear(g, p, x, &format!("{pre}.ff1"), true)?;
        let ff = g.relu(ff);
        let ff = linear(g, p, ff, &format!("{pre}.ff2"), true)?;
        let ff = ctx.dropout(g, ff, 2 + 2 * layer as u64)?;
        x = add_norm(g, p, x, ff, &format!("{pre}.norm2"))?;
    }
    Ok(x)
}

pub(super) fn forward(
    g: &mut Graph,
    p: &ParamVars<'_>,
    window: Var,
    h: &TransformerHyper,
    causal: bool,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let states = encode(g, p, window, h, causal, ctx)?;
    let l = g.shape(states)[0];
    let last = g.slice(states, 0, l - 1, 1)?;
    let out = linear(g, p, last, "readout", true)?;
    g.reshape(out, &[1])
}
