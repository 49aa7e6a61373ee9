//! Decomposition-linear model: moving-average trend and remainder, one
//! linear head per channel on each, then a learned channel aggregation.

use super::layers::{clamp_kernel, moving_average_matrix};
use super::{DLinearHyper, ForwardCtx, Init, ModelShape, ParamVars};
use crate::error::Result;
use crate::tensor::{Graph, Var};

pub(super) fn init(init: &mut Init, shape: ModelShape) {
    let (l, c) = (shape.seq_len, shape.n_features);
    // row c holds channel c's weights over the window
    init.weight("trend.weight", &[c, l], l, 1);
    init.weight("remainder.weight", &[c, l], l, 1);
    init.zeros("channel.bias", &[c, 1]);
    init.weight("aggregate.weight", &[c, 1], c, 1);
    init.zeros("aggregate.bias", &[1]);
}

pub(super) fn forward(
    g: &mut Graph,
    p: &ParamVars<'_>,
    window: Var,
    shape: ModelShape,
    hyper: &DLinearHyper,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let kernel = clamp_kernel(hyper.kernel, shape.seq_len);
    let avg = g.constant(moving_average_matrix(shape.seq_len, kernel)?);
    let trend = g.matmul(avg, window)?;
    let remainder = g.sub(window, trend)?;

    let trend_t = g.transpose(trend)?;
    let remainder_t = g.transpose(remainder)?;
    let t = g.mul(trend_t, p.get("trend.weight"))?;
    let t = g.sum_axis(t, 1)?;
    let s = g.mul(remainder_t, p.get("remainder.weight"))?;
    let s = g.sum_axis(s, 1)?;
    let per_channel = g.add(t, s)?;
    let per_channel = g.add(per_channel, p.get("channel.bias"))?;
    let per_channel = ctx.dropout(g, per_channel, 0)?;

    let weighted = g.mul(per_channel, p.get("aggregate.weight"))?;
    let total = g.sum(weighted);
    g.add(total, p.get("aggregate.bias"))
}
