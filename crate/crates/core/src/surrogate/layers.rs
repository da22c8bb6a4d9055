//! Forward and backward kernels for the decoder layers, on channel-last volumes
//! (`data[voxel * channels + c]`, voxels x-fastest).

use super::Real;

#[inline(always)]
fn axpy<T: Real>(out: &mut [T], x: T, w: &[T]) {
    for (o, &wv) in out.iter_mut().zip(w) {
        *o = *o + x * wv;
    }
}

/// `y = W x + b` with `W` row-major `[out][in]`.
pub fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    let n_in = x.len();
    for (o, (yo, &bo)) in y.iter_mut().zip(b).enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *yo = row.iter().zip(x).fold(bo, |acc, (&wv, &xv)| acc + wv * xv);
    }
}

/// Accumulates `dW`, `db` and, when requested, writes `dx`.
pub fn dense_backward<T: Real>(
    w: &[T],
    x: &[T],
    gy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    gx: Option<&mut [T]>,
) {
    let n_in = x.len();
    for (o, &g) in gy.iter().enumerate() {
        gb[o] = gb[o] + g;
        axpy(&mut gw[o * n_in..(o + 1) * n_in], g, x);
    }
    if let Some(gx) = gx {
        gx.iter_mut().for_each(|v| *v = T::zero());
        for (o, &g) in gy.iter().enumerate() {
            axpy(gx, g, &w[o * n_in..(o + 1) * n_in]);
        }
    }
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose forward activation was clipped.
pub fn relu_backward_in_place<T: Real>(activated: &[T], g: &mut [T]) {
    for (gv, &a) in g.iter_mut().zip(activated) {
        if a <= T::zero() {
            *gv = T::zero();
        }
    }
}

/// Source taps for a 1-D linear resize with aligned end points.
#[derive(Clone, Debug, PartialEq)]
pub struct ResizeAxis {
    pub n_in: usize,
    pub n_out: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl ResizeAxis {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let taps = (0..n_out)
            .map(|o| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let s = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let i0 = (s.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect();
        ResizeAxis { n_in, n_out, taps }
    }
}

/// Trilinear resize as three separable passes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResizePlan {
    pub from: [usize; 3],
    pub to: [usize; 3],
    axes: [ResizeAxis; 3],
}

impl ResizePlan {
    pub fn new(from: [usize; 3], to: [usize; 3]) -> Self {
        ResizePlan {
            from,
            to,
            axes: std::array::from_fn(|a| ResizeAxis::new(from[a], to[a])),
        }
    }

    fn stage_dims(&self, passes_done: usize) -> [usize; 3] {
        std::array::from_fn(|a| if a < passes_done { self.to[a] } else { self.from[a] })
    }

    pub fn forward<T: Real>(&self, input: &[T], channels: usize) -> Vec<T> {
        let mut cur = input.to_vec();
        for axis in 0..3 {
            cur = resize_axis_forward(&cur, self.stage_dims(axis), axis, &self.axes[axis], channels);
        }
        cur
    }

    pub fn backward<T: Real>(&self, g_out: &[T], channels: usize) -> Vec<T> {
        let mut cur = g_out.to_vec();
        for axis in (0..3).rev() {
            cur = resize_axis_backward(&cur, self.stage_dims(axis), axis, &self.axes[axis], channels);
        }
        cur
    }
}

/// Splits x-fastest dims around `axis` into (contiguous inner block length,
/// outer count), both counted in scalars for `c` channels.
fn around_axis(dims: [usize; 3], axis: usize, c: usize) -> (usize, usize) {
    let inner = c * dims[..axis].iter().product::<usize>();
    let outer = dims[axis + 1..].iter().product::<usize>();
    (inner, outer)
}

fn resize_axis_forward<T: Real>(
    input: &[T],
    in_dims: [usize; 3],
    axis: usize,
    plan: &ResizeAxis,
    c: usize,
) -> Vec<T> {
    let (inner, outer) = around_axis(in_dims, axis, c);
    let (n_in, n_out) = (plan.n_in, plan.n_out);
    let mut out = vec![T::zero(); inner * outer * n_out];
    for u in 0..outer {
        for (o, &(i0, i1, w)) in plan.taps.iter().enumerate() {
            let w = T::from(w).unwrap();
            let a = &input[(u * n_in + i0) * inner..(u * n_in + i0 + 1) * inner];
            let b = &input[(u * n_in + i1) * inner..(u * n_in + i1 + 1) * inner];
            let dst = &mut out[(u * n_out + o) * inner..(u * n_out + o + 1) * inner];
            for ((d, &x0), &x1) in dst.iter_mut().zip(a).zip(b) {
                // written as x0 + w (x1 − x0) so constant lines stay exact
                *d = x0 + w * (x1 - x0);
            }
        }
    }
    out
}

fn resize_axis_backward<T: Real>(
    g_out: &[T],
    in_dims: [usize; 3],
    axis: usize,
    plan: &ResizeAxis,
    c: usize,
) -> Vec<T> {
    let (inner, outer) = around_axis(in_dims, axis, c);
    let (n_in, n_out) = (plan.n_in, plan.n_out);
    let mut g_in = vec![T::zero(); inner * outer * n_in];
    for u in 0..outer {
        for (o, &(i0, i1, w)) in plan.taps.iter().enumerate() {
            let w = T::from(w).unwrap();
            let w0 = T::one() - w;
            let src = &g_out[(u * n_out + o) * inner..(u * n_out + o + 1) * inner];
            let a0 = (u * n_in + i0) * inner;
            for (t, &g) in src.iter().enumerate() {
                g_in[a0 + t] = g_in[a0 + t] + g * w0;
            }
            let b0 = (u * n_in + i1) * inner;
            for (t, &g) in src.iter().enumerate() {
                g_in[b0 + t] = g_in[b0 + t] + g * w;
            }
        }
    }
    g_in
}

/// Tap index of offset `(dx, dy, dz)`, each in `-1..=1`.
#[inline(always)]
fn tap_index(dx: i64, dy: i64, dz: i64) -> usize {
    ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize
}

/// Calls `f(tap, neighbour)` for every in-bounds neighbour of voxel `(i, j, k)`
/// at offset `sign * (dx, dy, dz)`.
#[inline(always)]
fn for_each_tap(dims: [usize; 3], i: usize, j: usize, k: usize, sign: i64, mut f: impl FnMut(usize, usize)) {
    let [nx, ny, nz] = dims;
    for dz in -1i64..=1 {
        let kk = k as i64 + sign * dz;
        if kk < 0 || kk >= nz as i64 {
            continue;
        }
        for dy in -1i64..=1 {
            let jj = j as i64 + sign * dy;
            if jj < 0 || jj >= ny as i64 {
                continue;
            }
            let row = nx * (jj as usize + ny * kk as usize);
            for dx in -1i64..=1 {
                let ii = i as i64 + sign * dx;
                if ii < 0 || ii >= nx as i64 {
                    continue;
                }
                f(tap_index(dx, dy, dz), row + ii as usize);
            }
        }
    }
}

/// Voxels per register block in the gather kernels.
const BLOCK: usize = 4;

/// Gather convolution shared by the forward pass and the input gradient:
/// `out[v] = bias + Σ_tap W_tapᵀ src[v + sign * offset(tap)]` with `w` laid out
/// `[tap][A][B]`. Interior runs of voxels are processed `BLOCK` at a time so
/// the accumulation chains are independent.
fn gather_conv<T: Real, const A: usize, const B: usize>(
    src: &[T],
    dims: [usize; 3],
    w: &[T],
    bias: [T; B],
    sign: i64,
    out: &mut [T],
) {
    let [nx, ny, nz] = dims;
    let single = |out: &mut [T], i: usize, j: usize, k: usize| {
        let mut acc = bias;
        for_each_tap(dims, i, j, k, sign, |tap, n| {
            let x = &src[n * A..(n + 1) * A];
            let wt = &w[tap * A * B..(tap + 1) * A * B];
            for a in 0..A {
                let xv = x[a];
                let row = &wt[a * B..(a + 1) * B];
                for b in 0..B {
                    acc[b] = xv.mul_add(row[b], acc[b]);
                }
            }
        });
        let v = i + nx * (j + ny * k);
        out[v * B..(v + 1) * B].copy_from_slice(&acc);
    };
    for k in 0..nz {
        for j in 0..ny {
            if nx < BLOCK + 2 {
                for i in 0..nx {
                    single(out, i, j, k);
                }
                continue;
            }
            single(out, 0, j, k);
            let mut i = 1;
            while i + BLOCK < nx {
                let mut acc = [bias; BLOCK];
                for dz in -1i64..=1 {
                    let kk = k as i64 + sign * dz;
                    if kk < 0 || kk >= nz as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let jj = j as i64 + sign * dy;
                        if jj < 0 || jj >= ny as i64 {
                            continue;
                        }
                        let row = nx * (jj as usize + ny * kk as usize);
                        for dx in -1i64..=1 {
                            let tap = tap_index(dx, dy, dz);
                            let wt = &w[tap * A * B..(tap + 1) * A * B];
                            let first = (row as i64 + i as i64 + sign * dx) as usize;
                            let x = &src[first * A..(first + BLOCK) * A];
                            for a in 0..A {
                                let wrow = &wt[a * B..(a + 1) * B];
                                for (blk, acc_b) in acc.iter_mut().enumerate() {
                                    let xv = x[blk * A + a];
                                    for b in 0..B {
                                        acc_b[b] = xv.mul_add(wrow[b], acc_b[b]);
                                    }
                                }
                            }
                        }
                    }
                }
                let v = i + nx * (j + ny * k);
                for (blk, acc_b) in acc.iter().enumerate() {
                    out[(v + blk) * B..(v + blk + 1) * B].copy_from_slice(acc_b);
                }
                i += BLOCK;
            }
            while i < nx {
                single(out, i, j, k);
                i += 1;
            }
        }
    }
}

fn conv_forward_fixed<T: Real, const CI: usize, const CO: usize>(
    input: &[T],
    dims: [usize; 3],
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    gather_conv::<T, CI, CO>(input, dims, w, b.try_into().expect("bias length"), 1, out);
}

/// `g_in[n] = Σ_tap W_tapᵀ g_out[n − offset(tap)]`, with `wt` laid out
/// `[tap][c_out][c_in]`.
fn conv_input_grad_fixed<T: Real, const CI: usize, const CO: usize>(
    g_out: &[T],
    dims: [usize; 3],
    wt: &[T],
    g_in: &mut [T],
) {
    gather_conv::<T, CO, CI>(g_out, dims, wt, [T::zero(); CI], -1, g_in);
}

/// Input channels per accumulator block in the weight gradient.
const WGRAD_ROWS: usize = 4;

/// `gw[tap] += Σ_v x[v + offset(tap)] ⊗ g_out[v]`, one tap and at most
/// `WGRAD_ROWS` input channels at a time so the accumulator stays in registers.
fn conv_weight_grad_fixed<T: Real, const CI: usize, const CO: usize>(
    input: &[T],
    dims: [usize; 3],
    g_out: &[T],
    gw: &mut [T],
) {
    let [nx, ny, nz] = dims;
    let rows = if CI * CO <= 64 || CI % WGRAD_ROWS != 0 { CI } else { WGRAD_ROWS };
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let tap = tap_index(dx, dy, dz);
                let (k_lo, k_hi) = ((-dz).max(0) as usize, (nz as i64 - dz.max(0)) as usize);
                let (j_lo, j_hi) = ((-dy).max(0) as usize, (ny as i64 - dy.max(0)) as usize);
                let (i_lo, i_hi) = ((-dx).max(0) as usize, (nx as i64 - dx.max(0)) as usize);
                for c0 in (0..CI).step_by(rows) {
                    let mut acc = [[T::zero(); CO]; CI];
                    for k in k_lo..k_hi {
                        for j in j_lo..j_hi {
                            let row = nx * (j + ny * k);
                            let src_row = nx * ((j as i64 + dy) as usize + ny * (k as i64 + dz) as usize);
                            for i in i_lo..i_hi {
                                let v = row + i;
                                let n = (src_row as i64 + i as i64 + dx) as usize;
                                let g = &g_out[v * CO..(v + 1) * CO];
                                let x = &input[n * CI + c0..n * CI + c0 + rows];
                                for (r, &xv) in x.iter().enumerate() {
                                    for co in 0..CO {
                                        acc[r][co] = xv.mul_add(g[co], acc[r][co]);
                                    }
                                }
                            }
                        }
                    }
                    let dst = &mut gw[tap * CI * CO..(tap + 1) * CI * CO];
                    for r in 0..rows {
                        for co in 0..CO {
                            let at = (c0 + r) * CO + co;
                            dst[at] = dst[at] + acc[r][co];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward_dyn<T: Real>(input: &[T], dims: [usize; 3], ci_n: usize, co_n: usize, w: &[T], b: &[T], out: &mut [T]) {
    let [nx, ny, nz] = dims;
    let mut v = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let acc = &mut out[v * co_n..(v + 1) * co_n];
                acc.copy_from_slice(b);
                for_each_tap(dims, i, j, k, 1, |tap, n| {
                    for ci in 0..ci_n {
                        let row = &w[(tap * ci_n + ci) * co_n..(tap * ci_n + ci + 1) * co_n];
                        axpy(acc, input[n * ci_n + ci], row);
                    }
                });
                v += 1;
            }
        }
    }
}

fn conv_input_grad_dyn<T: Real>(g_out: &[T], dims: [usize; 3], ci_n: usize, co_n: usize, wt: &[T], g_in: &mut [T]) {
    let [nx, ny, nz] = dims;
    let mut v = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let acc = &mut g_in[v * ci_n..(v + 1) * ci_n];
                acc.iter_mut().for_each(|a| *a = T::zero());
                for_each_tap(dims, i, j, k, -1, |tap, n| {
                    for co in 0..co_n {
                        let row = &wt[(tap * co_n + co) * ci_n..(tap * co_n + co + 1) * ci_n];
                        axpy(acc, g_out[n * co_n + co], row);
                    }
                });
                v += 1;
            }
        }
    }
}

fn conv_weight_grad_dyn<T: Real>(input: &[T], dims: [usize; 3], ci_n: usize, co_n: usize, g_out: &[T], gw: &mut [T]) {
    let [nx, ny, nz] = dims;
    let mut v = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let g = &g_out[v * co_n..(v + 1) * co_n];
                for_each_tap(dims, i, j, k, 1, |tap, n| {
                    for ci in 0..ci_n {
                        axpy(&mut gw[(tap * ci_n + ci) * co_n..(tap * ci_n + ci + 1) * co_n], input[n * ci_n + ci], g);
                    }
                });
                v += 1;
            }
        }
    }
}

/// Dispatches to a kernel with compile-time channel counts where one exists.
macro_rules! dispatch_channels {
    ($ci:expr, $co:expr, $fixed:ident ( $($arg:expr),* ), $dynamic:expr) => {
        match ($ci, $co) {
            (32, 16) => $fixed::<T, 32, 16>($($arg),*),
            (16, 8) => $fixed::<T, 16, 8>($($arg),*),
            (8, 8) => $fixed::<T, 8, 8>($($arg),*),
            (4, 2) => $fixed::<T, 4, 2>($($arg),*),
            (2, 1) => $fixed::<T, 2, 1>($($arg),*),
            (1, 1) => $fixed::<T, 1, 1>($($arg),*),
            _ => $dynamic,
        }
    };
}

/// 3×3×3 convolution, zero padded, stride 1. Weights `[tap][c_in][c_out]` with
/// `tap = (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)`.
pub fn conv3_forward<T: Real>(
    input: &[T],
    dims: [usize; 3],
    c_in: usize,
    c_out: usize,
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    dispatch_channels!(
        c_in,
        c_out,
        conv_forward_fixed(input, dims, w, b, out),
        conv_forward_dyn(input, dims, c_in, c_out, w, b, out)
    )
}

/// Backward of [`conv3_forward`]: accumulates `gw`, `gb` and, when requested,
/// writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv3_backward<T: Real>(
    input: &[T],
    dims: [usize; 3],
    c_in: usize,
    c_out: usize,
    w: &[T],
    g_out: &[T],
    gw: &mut [T],
    gb: &mut [T],
    g_in: Option<&mut [T]>,
) {
    for g in g_out.chunks_exact(c_out) {
        for (acc, &v) in gb.iter_mut().zip(g) {
            *acc = *acc + v;
        }
    }
    dispatch_channels!(
        c_in,
        c_out,
        conv_weight_grad_fixed(input, dims, g_out, gw),
        conv_weight_grad_dyn(input, dims, c_in, c_out, g_out, gw)
    );
    if let Some(g_in) = g_in {
        let mut wt = vec![T::zero(); w.len()];
        for tap in 0..27 {
            for ci in 0..c_in {
                for co in 0..c_out {
                    wt[(tap * c_out + co) * c_in + ci] = w[(tap * c_in + ci) * c_out + co];
                }
            }
        }
        dispatch_channels!(
            c_in,
            c_out,
            conv_input_grad_fixed(g_out, dims, &wt, g_in),
            conv_input_grad_dyn(g_out, dims, c_in, c_out, &wt, g_in)
        )
    }
}

/// Per-channel `x * scale + shift`, in place.
pub fn film_forward<T: Real>(x: &mut [T], scale: &[T], shift: &[T]) {
    let c = scale.len();
    for v in x.chunks_exact_mut(c) {
        for ch in 0..c {
            v[ch] = v[ch] * scale[ch] + shift[ch];
        }
    }
}

/// 1×1×1 convolution to a single channel.
pub fn head_forward<T: Real>(x: &[T], w: &[T], b: T, out: &mut [T]) {
    let c = w.len();
    for (o, v) in out.iter_mut().zip(x.chunks_exact(c)) {
        *o = v.iter().zip(w).fold(b, |acc, (&xv, &wv)| acc + xv * wv);
    }
}
