//! Generic forward and backward passes over a flat weight slice.

use super::arch::Layout;
use super::layers::{
    conv3_backward, conv3_forward, dense_backward, dense_forward, film_forward, head_forward,
    relu_backward_in_place, relu_in_place,
};
use super::Real;

struct StageTrace<T> {
    resized: Vec<T>,
    conv: Vec<T>,
    act: Vec<T>,
    scale: Vec<T>,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Trace<T> {
    cond: [T; 4],
    /// Input of each embedding layer, then the input of the projection.
    embed_inputs: Vec<Vec<T>>,
    coarse: Vec<T>,
    stages: Vec<StageTrace<T>>,
    pub out: Vec<T>,
}

fn film_coefficients<T: Real>(layout: &Layout, s: usize, w: &[T], cond: &[T; 4]) -> (Vec<T>, Vec<T>) {
    let st = &layout.stages[s];
    let mut scale = vec![T::zero(); st.c_out];
    let mut shift = vec![T::zero(); st.c_out];
    dense_forward(st.scale.weight(w), st.scale.bias(w), cond, &mut scale);
    dense_forward(st.shift.weight(w), st.shift.bias(w), cond, &mut shift);
    scale.iter_mut().for_each(|v| *v = *v + T::one());
    (scale, shift)
}

/// Runs the decoder; `embed` feeds the parameter embedding and `cond` the
/// per-stage conditioning. Both are normalized parameters.
pub(crate) fn forward_trace<T: Real>(layout: &Layout, w: &[T], embed: &[T; 4], cond: &[T; 4]) -> Trace<T> {
    let mut embed_inputs = Vec::with_capacity(layout.embed.len() + 1);
    let mut x = embed.to_vec();
    for d in &layout.embed {
        let mut y = vec![T::zero(); d.n_out];
        dense_forward(d.weight(w), d.bias(w), &x, &mut y);
        relu_in_place(&mut y);
        embed_inputs.push(std::mem::replace(&mut x, y));
    }
    let mut coarse = vec![T::zero(); layout.project.n_out];
    dense_forward(layout.project.weight(w), layout.project.bias(w), &x, &mut coarse);
    embed_inputs.push(x);

    let mut stages: Vec<StageTrace<T>> = Vec::with_capacity(layout.stages.len());
    for (s, st) in layout.stages.iter().enumerate() {
        let prev = stages.last().map_or(&coarse, |t| &t.act);
        let resized = st.resize.forward(prev, st.c_in);
        let n: usize = st.dims.iter().product();
        let mut conv = vec![T::zero(); n * st.c_out];
        conv3_forward(
            &resized,
            st.dims,
            st.c_in,
            st.c_out,
            &w[st.conv_w..st.conv_w + 27 * st.c_in * st.c_out],
            &w[st.conv_b..st.conv_b + st.c_out],
            &mut conv,
        );
        let (scale, shift) = film_coefficients(layout, s, w, cond);
        let mut act = conv.clone();
        film_forward(&mut act, &scale, &shift);
        relu_in_place(&mut act);
        stages.push(StageTrace { resized, conv, act, scale });
    }
    let last = stages.last().map_or(&coarse, |t| &t.act);
    let mut out = vec![T::zero(); last.len() / layout.head_c];
    head_forward(
        last,
        &w[layout.head_w..layout.head_w + layout.head_c],
        w[layout.head_b],
        &mut out,
    );
    Trace { cond: *cond, embed_inputs, coarse, stages, out }
}

/// Output only; drops intermediate buffers as soon as they are consumed.
pub(crate) fn forward<T: Real>(layout: &Layout, w: &[T], embed: &[T; 4], cond: &[T; 4]) -> Vec<T> {
    forward_trace(layout, w, embed, cond).out
}

/// Accumulates `d loss / d w` into `grad` given `g_out = d loss / d out`.
pub(crate) fn backward<T: Real>(layout: &Layout, w: &[T], trace: &Trace<T>, g_out: &[T], grad: &mut [T]) {
    let hc = layout.head_c;
    let last_act = trace.stages.last().map_or(&trace.coarse, |t| &t.act);
    let head_w = &w[layout.head_w..layout.head_w + hc];
    let mut g_act = vec![T::zero(); last_act.len()];
    {
        let mut g_hw = vec![T::zero(); hc];
        let mut g_hb = T::zero();
        for ((&g, x), ga) in g_out.iter().zip(last_act.chunks_exact(hc)).zip(g_act.chunks_exact_mut(hc)) {
            g_hb = g_hb + g;
            for c in 0..hc {
                g_hw[c] = g_hw[c] + g * x[c];
                ga[c] = g * head_w[c];
            }
        }
        for c in 0..hc {
            grad[layout.head_w + c] = grad[layout.head_w + c] + g_hw[c];
        }
        grad[layout.head_b] = grad[layout.head_b] + g_hb;
    }

    for (s, st) in layout.stages.iter().enumerate().rev() {
        let tr = &trace.stages[s];
        let c = st.c_out;
        relu_backward_in_place(&tr.act, &mut g_act);
        let mut g_scale = vec![T::zero(); c];
        let mut g_shift = vec![T::zero(); c];
        for (g, x) in g_act.chunks_exact_mut(c).zip(tr.conv.chunks_exact(c)) {
            for ch in 0..c {
                g_scale[ch] = g_scale[ch] + g[ch] * x[ch];
                g_shift[ch] = g_shift[ch] + g[ch];
                g[ch] = g[ch] * tr.scale[ch];
            }
        }
        for (d, gy) in [(&st.scale, &g_scale), (&st.shift, &g_shift)] {
            let (gw, rest) = grad[d.w..].split_at_mut(d.n_in * d.n_out);
            let gb_off = d.b - d.w - d.n_in * d.n_out;
            dense_backward(d.weight(w), &trace.cond, gy, gw, &mut rest[gb_off..gb_off + d.n_out], None);
        }
        let mut g_resized = vec![T::zero(); tr.resized.len()];
        let conv_len = 27 * st.c_in * c;
        let (gw, rest) = grad[st.conv_w..].split_at_mut(conv_len);
        let gb_off = st.conv_b - st.conv_w - conv_len;
        conv3_backward(
            &tr.resized,
            st.dims,
            st.c_in,
            c,
            &w[st.conv_w..st.conv_w + conv_len],
            &g_act,
            gw,
            &mut rest[gb_off..gb_off + c],
            Some(&mut g_resized),
        );
        g_act = st.resize.backward(&g_resized, st.c_in);
    }

    // g_act now holds the coarse-grid gradient
    let mut g_x = g_act;
    let n_dense = layout.embed.len() + 1;
    for i in (0..n_dense).rev() {
        let d = if i == layout.embed.len() { &layout.project } else { &layout.embed[i] };
        if i < layout.embed.len() {
            relu_backward_in_place(&trace.embed_inputs[i + 1], &mut g_x);
        }
        let x = &trace.embed_inputs[i];
        let mut g_in = vec![T::zero(); d.n_in];
        let (gw, rest) = grad[d.w..].split_at_mut(d.n_in * d.n_out);
        let gb_off = d.b - d.w - d.n_in * d.n_out;
        let want_input = i > 0;
        dense_backward(
            d.weight(w),
            x,
            &g_x,
            gw,
            &mut rest[gb_off..gb_off + d.n_out],
            if want_input { Some(&mut g_in) } else { None },
        );
        g_x = g_in;
    }
}
