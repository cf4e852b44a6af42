//! Tensor op kernels: forwards and their exact backward rules.
//!
//! Axis-structured ops (roll, pad, crop, slice, concat) view the tensor as
//! `[outer, axis, inner]`. Reductions accumulate in row-major element order,
//! so the last axis is summed first; this fixes the floating-point summation
//! order and makes results independent of thread count.

use super::{idx4, Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Padding fill rule for `pad_axis` / `pad_spatial`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Border filled with zeros.
    Zero,
    /// Mirror excluding the edge element: `[1,2,3]` -> `[2,1,2,3,2]`.
    Reflect,
    /// Edge element repeated: `[1,2,3]` -> `[1,1,2,3,3]`.
    Replicate,
}

fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

// ---------------------------------------------------------------------------
// channel projection
// ---------------------------------------------------------------------------

/// Per-position channel projection: `y[b,o,i,j] = sum_c w[o,c] x[b,c,i,j] + bias[o]`.
pub fn matmul_channels<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c_in, h, wd) = x.dims4("matmul_channels")?;
    if w.rank() != 2 || w.dims()[1] != c_in {
        return Err(Error::shape(
            "matmul_channels",
            format!("weight {:?} does not accept {} input channels", w.dims(), c_in),
        ));
    }
    let c_out = w.dims()[0];
    if bias.dims() != [c_out] {
        return Err(Error::shape(
            "matmul_channels",
            format!("bias {:?} does not match {} output channels", bias.dims(), c_out),
        ));
    }
    let hw = h * wd;
    let mut out = Tensor::zeros(&[b, c_out, h, wd]);
    let xd = x.data();
    let wd_ = w.data();
    let bd = bias.data();
    par::for_each_row(out.data_mut(), hw, |t, plane| {
        let bi = t / c_out;
        let o = t % c_out;
        plane.fill(bd[o]);
        for c in 0..c_in {
            let k = wd_[o * c_in + c];
            let xp = &xd[(bi * c_in + c) * hw..(bi * c_in + c + 1) * hw];
            for (y, &xv) in plane.iter_mut().zip(xp) {
                *y += k * xv;
            }
        }
    });
    Ok(out)
}

pub fn matmul_channels_macs(b: usize, c_in: usize, c_out: usize, h: usize, w: usize) -> u64 {
    b as u64 * c_in as u64 * c_out as u64 * h as u64 * w as u64
}

/// Gradients of `matmul_channels` w.r.t. input, weight and bias.
pub fn matmul_channels_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c_in, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let c_out = w.dims()[0];
    let hw = h * wd;
    let xd = x.data();
    let wd_ = w.data();
    let dyd = dy.data();

    let mut dx = Tensor::zeros(x.dims());
    par::for_each_row(dx.data_mut(), hw, |t, plane| {
        let bi = t / c_in;
        let c = t % c_in;
        for o in 0..c_out {
            let k = wd_[o * c_in + c];
            let gp = &dyd[(bi * c_out + o) * hw..(bi * c_out + o + 1) * hw];
            for (g, &gv) in plane.iter_mut().zip(gp) {
                *g += k * gv;
            }
        }
    });

    let mut dw = Tensor::zeros(w.dims());
    par::for_each_row(dw.data_mut(), c_in, |o, row| {
        for bi in 0..b {
            let gp = &dyd[(bi * c_out + o) * hw..(bi * c_out + o + 1) * hw];
            for (c, acc) in row.iter_mut().enumerate() {
                let xp = &xd[(bi * c_in + c) * hw..(bi * c_in + c + 1) * hw];
                let mut s = T::zero();
                for (&g, &xv) in gp.iter().zip(xp) {
                    s += g * xv;
                }
                *acc += s;
            }
        }
    });

    let mut db = Tensor::zeros(&[c_out]);
    for o in 0..c_out {
        let mut s = T::zero();
        for bi in 0..b {
            for &g in &dyd[(bi * c_out + o) * hw..(bi * c_out + o + 1) * hw] {
                s += g;
            }
        }
        db.data_mut()[o] = s;
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// axis-structured ops
// ---------------------------------------------------------------------------

/// Circular shift along `axis`: `out[i] = x[(i - offset) mod len]`.
pub fn roll<T: Real>(x: &Tensor<T>, axis: usize, offset: i64) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid("roll", format!("axis {} out of range for rank {}", axis, x.rank())));
    }
    let (outer, n, inner) = split_axis(x.dims(), axis);
    let shift = offset.rem_euclid(n as i64) as usize;
    let mut out = Tensor::zeros(x.dims());
    let xd = x.data();
    let od = out.data_mut();
    for ou in 0..outer {
        let base = ou * n * inner;
        for i in 0..n {
            let src = (i + n - shift) % n;
            od[base + i * inner..base + (i + 1) * inner]
                .copy_from_slice(&xd[base + src * inner..base + (src + 1) * inner]);
        }
    }
    Ok(out)
}

/// Pad one axis by `amount` on both ends.
pub fn pad_axis<T: Real>(x: &Tensor<T>, axis: usize, amount: usize, mode: PadMode) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid("pad", format!("axis {} out of range", axis)));
    }
    let (outer, n, inner) = split_axis(x.dims(), axis);
    if mode == PadMode::Reflect && amount >= n {
        return Err(Error::invalid(
            "pad",
            format!("reflect padding by {} needs extent > {}, got {}", amount, amount, n),
        ));
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = n + 2 * amount;
    let mut out = Tensor::zeros(&dims);
    let xd = x.data();
    let od = out.data_mut();
    let m = n + 2 * amount;
    for ou in 0..outer {
        let ibase = ou * n * inner;
        let obase = ou * m * inner;
        for p in 0..m {
            let i = p as i64 - amount as i64;
            let src = pad_source_index(i, n, mode);
            let dst = &mut od[obase + p * inner..obase + (p + 1) * inner];
            match src {
                Some(s) => dst.copy_from_slice(&xd[ibase + s * inner..ibase + (s + 1) * inner]),
                None => dst.fill(T::zero()),
            }
        }
    }
    Ok(out)
}

/// Source index read by padded position `i` (coordinates relative to the
/// unpadded axis); `None` means a zero fill.
pub fn pad_source_index(i: i64, n: usize, mode: PadMode) -> Option<usize> {
    let n_i = n as i64;
    if (0..n_i).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let mut v = i;
            // single bounce is enough for amount < n
            if v < 0 {
                v = -v;
            }
            if v >= n_i {
                v = 2 * n_i - 2 - v;
            }
            Some(v as usize)
        }
        PadMode::Replicate => Some(i.clamp(0, n_i - 1) as usize),
    }
}

/// Scatter-add of pad's gradient back onto the unpadded axis.
pub fn pad_axis_backward<T: Real>(dy: &Tensor<T>, axis: usize, amount: usize, mode: PadMode) -> Tensor<T> {
    let (outer, m, inner) = split_axis(dy.dims(), axis);
    let n = m - 2 * amount;
    let mut dims = dy.dims().to_vec();
    dims[axis] = n;
    let mut dx = Tensor::zeros(&dims);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for ou in 0..outer {
        let obase = ou * m * inner;
        let ibase = ou * n * inner;
        for p in 0..m {
            if let Some(s) = pad_source_index(p as i64 - amount as i64, n, mode) {
                let src = &dyd[obase + p * inner..obase + (p + 1) * inner];
                let dst = &mut dxd[ibase + s * inner..ibase + (s + 1) * inner];
                for (d, &g) in dst.iter_mut().zip(src) {
                    *d += g;
                }
            }
        }
    }
    dx
}

/// Pad both spatial axes of a `[b,C,h,w]` map by `amount`.
pub fn pad_spatial<T: Real>(x: &Tensor<T>, amount: usize, mode: PadMode) -> Result<Tensor<T>> {
    x.dims4("pad_spatial")?;
    let t = pad_axis(x, 2, amount, mode)?;
    pad_axis(&t, 3, amount, mode)
}

/// Remove `amount` from both ends of one axis.
pub fn crop_axis<T: Real>(x: &Tensor<T>, axis: usize, amount: usize) -> Result<Tensor<T>> {
    let n = x.dims()[axis];
    if 2 * amount >= n {
        return Err(Error::invalid("crop", format!("crop {} exceeds axis extent {}", amount, n)));
    }
    slice_axis(x, axis, amount, n - 2 * amount)
}

/// Inverse of `pad_spatial`.
pub fn crop_spatial<T: Real>(x: &Tensor<T>, amount: usize) -> Result<Tensor<T>> {
    x.dims4("crop_spatial")?;
    let t = crop_axis(x, 2, amount)?;
    crop_axis(&t, 3, amount)
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn slice_axis<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid("slice", format!("axis {} out of range", axis)));
    }
    let (outer, n, inner) = split_axis(x.dims(), axis);
    if start + len > n || len == 0 {
        return Err(Error::invalid(
            "slice",
            format!("slice [{start}, {}) out of range for extent {n}", start + len),
        ));
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    let mut out = Tensor::zeros(&dims);
    let xd = x.data();
    let od = out.data_mut();
    for ou in 0..outer {
        let src = ou * n * inner + start * inner;
        let dst = ou * len * inner;
        od[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
    }
    Ok(out)
}

/// Embed a slice gradient back into a zero tensor of the input shape.
pub fn slice_axis_backward<T: Real>(dy: &Tensor<T>, axis: usize, start: usize, in_len: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(dy.dims(), axis);
    let mut dims = dy.dims().to_vec();
    dims[axis] = in_len;
    let mut dx = Tensor::zeros(&dims);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for ou in 0..outer {
        let dst = ou * in_len * inner + start * inner;
        let src = ou * len * inner;
        dxd[dst..dst + len * inner].copy_from_slice(&dyd[src..src + len * inner]);
    }
    dx
}

/// Concatenate along `axis`; all other dims must agree.
pub fn concat_axis<T: Real>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid("concat", format!("axis {} out of range", axis)));
    }
    let mut total = 0;
    for x in xs {
        if x.rank() != first.rank() {
            return Err(Error::shape("concat", "rank mismatch".to_string()));
        }
        for (a, (da, db)) in x.dims().iter().zip(first.dims()).enumerate() {
            if a != axis && da != db {
                return Err(Error::shape(
                    "concat",
                    format!("dims {:?} vs {:?} differ off-axis", x.dims(), first.dims()),
                ));
            }
        }
        total += x.dims()[axis];
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = total;
    let (outer, _, inner) = split_axis(&dims, axis);
    let mut out = Tensor::zeros(&dims);
    let od = out.data_mut();
    for ou in 0..outer {
        let mut off = 0;
        for x in xs {
            let n = x.dims()[axis];
            let src = ou * n * inner;
            let dst = ou * total * inner + off * inner;
            od[dst..dst + n * inner].copy_from_slice(&x.data()[src..src + n * inner]);
            off += n;
        }
    }
    Ok(out)
}

/// Split the channel axis into contiguous groups of `ceil(C/s)` channels,
/// the last holding the remainder. Channel `c` lands in group
/// `c / ceil(C/s)`; when `ceil(C/s) * (s-1) >= C` fewer than `s` nonempty
/// groups exist and only those are returned.
pub fn chunk_channels<T: Real>(x: &Tensor<T>, s: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.dims4("chunk_channels")?;
    let bounds = chunk_bounds(c, s)
        .ok_or_else(|| Error::invalid("chunk_channels", format!("cannot split {c} channels into {s} groups")))?;
    bounds
        .iter()
        .map(|&(start, len)| slice_axis(x, 1, start, len))
        .collect()
}

/// `(start, len)` per nonempty chunk group, or `None` when `s` is out of range.
pub fn chunk_bounds(c: usize, s: usize) -> Option<Vec<(usize, usize)>> {
    if s == 0 || s > c {
        return None;
    }
    let full = c.div_ceil(s);
    let mut out = Vec::with_capacity(s);
    let mut start = 0;
    while start < c {
        let len = full.min(c - start);
        out.push((start, len));
        start += len;
    }
    debug_assert!(out.len() <= s);
    Some(out)
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

fn zip_check<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_check("add", a, b)?;
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out.set_requires_grad(false);
    Ok(out)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_check("sub", a, b)?;
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o -= v;
    }
    out.set_requires_grad(false);
    Ok(out)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_check("mul", a, b)?;
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    out.set_requires_grad(false);
    Ok(out)
}

pub fn scale<T: Real>(x: &Tensor<T>, k: T) -> Tensor<T> {
    x.map(|v| v * k)
}

/// Per-sample scaling along the batch axis (DropPath mask application).
pub fn scale_per_sample<T: Real>(x: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    if x.dims()[0] != factors.len() {
        return Err(Error::shape(
            "scale_per_sample",
            format!("{} factors for batch {}", factors.len(), x.dims()[0]),
        ));
    }
    let per = x.len() / factors.len();
    let mut out = x.clone();
    out.set_requires_grad(false);
    for (b, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let k = factors[b];
        for v in chunk {
            *v *= k;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

fn reduced_dims(dims: &[usize], axes: &[usize]) -> Vec<usize> {
    let keep: Vec<usize> = (0..dims.len()).filter(|i| !axes.contains(i)).map(|i| dims[i]).collect();
    if keep.is_empty() {
        vec![1]
    } else {
        keep
    }
}

fn check_axes(op: &'static str, rank: usize, axes: &[usize]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::invalid(op, "no axes"));
    }
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::invalid(op, format!("axis {a} out of range for rank {rank}")));
        }
        if seen[a] {
            return Err(Error::invalid(op, format!("duplicate axis {a}")));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Row-major accumulation into the kept-axes index; the last axis is summed
/// first, fixing the floating-point order.
pub fn reduce_sum_axes<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    check_axes("reduce_sum", x.rank(), axes)?;
    let dims = x.dims();
    let out_dims = reduced_dims(dims, axes);
    let mut out = Tensor::zeros(&out_dims);
    let od = out.data_mut();

    // output strides aligned with kept input axes
    let mut out_stride = vec![0usize; dims.len()];
    let mut s = 1usize;
    for i in (0..dims.len()).rev() {
        if !axes.contains(&i) {
            out_stride[i] = s;
            s *= dims[i];
        }
    }
    let mut idx = vec![0usize; dims.len()];
    for &v in x.data() {
        let mut oi = 0;
        for (k, &i) in idx.iter().enumerate() {
            oi += out_stride[k] * i;
        }
        od[oi] += v;
        // row-major increment
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

pub fn reduce_mean_axes<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let count: usize = axes.iter().map(|&a| x.dims()[a]).product();
    let sum = reduce_sum_axes(x, axes)?;
    Ok(scale(&sum, T::one() / T::from_f64(count as f64)))
}

/// Population variance over `axes` (two passes, fixed order).
pub fn reduce_var_axes<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let mean = reduce_mean_axes(x, axes)?;
    let centered = {
        let bcast = broadcast_reduced(&mean, x.dims(), axes);
        sub(x, &bcast)?
    };
    let sq = mul(&centered, &centered)?;
    reduce_mean_axes(&sq, axes)
}

/// Expand a reduced tensor back to `dims` by repeating along `axes`.
pub fn broadcast_reduced<T: Real>(r: &Tensor<T>, dims: &[usize], axes: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(dims);
    let mut out_stride = vec![0usize; dims.len()];
    let mut s = 1usize;
    for i in (0..dims.len()).rev() {
        if !axes.contains(&i) {
            out_stride[i] = s;
            s *= dims[i];
        }
    }
    let rd = r.data();
    let od = out.data_mut();
    let mut idx = vec![0usize; dims.len()];
    for o in od.iter_mut() {
        let mut ri = 0;
        for (k, &i) in idx.iter().enumerate() {
            ri += out_stride[k] * i;
        }
        *o = rd[ri];
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

/// Gradient of sum/mean reduction: broadcast (and rescale for mean).
pub fn reduce_backward<T: Real>(dy: &Tensor<T>, in_dims: &[usize], axes: &[usize], mean: bool) -> Tensor<T> {
    let mut g = broadcast_reduced(dy, in_dims, axes);
    if mean {
        let count: usize = axes.iter().map(|&a| in_dims[a]).product();
        g = scale(&g, T::one() / T::from_f64(count as f64));
    }
    g
}

// ---------------------------------------------------------------------------
// gelu
// ---------------------------------------------------------------------------

#[inline]
fn phi_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x / T::from_f64(std::f64::consts::SQRT_2)).erf())
}

/// Exact (erf-form) GELU: `x * Phi(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.set_requires_grad(false);
    par::for_each_row(out.data_mut(), 4096.min(x.len()), |_, chunk| {
        for v in chunk {
            *v = *v * phi_cdf(*v);
        }
    });
    out
}

/// `dx = dy * (Phi(x) + x * pdf(x))`.
pub fn gelu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let inv_sqrt_tau = T::from_f64(1.0 / (std::f64::consts::TAU).sqrt());
    let mut out = dy.clone();
    out.set_requires_grad(false);
    let xd = x.data();
    let od = out.data_mut();
    for (g, &v) in od.iter_mut().zip(xd) {
        let pdf = inv_sqrt_tau * (-v * v * T::from_f64(0.5)).exp();
        *g = *g * (phi_cdf(v) + v * pdf);
    }
    out
}

// ---------------------------------------------------------------------------
// layer norm over channels
// ---------------------------------------------------------------------------

/// Normalizes the channel vector at each `(b, i, j)` position, then applies
/// the affine `gamma, beta`. Returns `(y, mean, inv_std)`; the per-position
/// statistics are reused by the backward pass.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (b, c, h, w) = x.dims4("layer_norm")?;
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!("gamma {:?} / beta {:?} for {} channels", gamma.dims(), beta.dims(), c),
        ));
    }
    let hw = h * w;
    let mut y = Tensor::zeros(x.dims());
    let mut mean = vec![T::zero(); b * hw];
    let mut inv_std = vec![T::zero(); b * hw];
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_c = T::one() / T::from_f64(c as f64);

    // one task per batch element; positions within are sequential
    let stats: Vec<(Vec<T>, Vec<T>)> = par::map_indexed(b, |bi| {
        let mut m = vec![T::zero(); hw];
        let mut is = vec![T::zero(); hw];
        for p in 0..hw {
            let mut s = T::zero();
            for ci in 0..c {
                s += xd[(bi * c + ci) * hw + p];
            }
            let mu = s * inv_c;
            let mut v = T::zero();
            for ci in 0..c {
                let d = xd[(bi * c + ci) * hw + p] - mu;
                v += d * d;
            }
            m[p] = mu;
            is[p] = T::one() / (v * inv_c + eps).sqrt();
        }
        (m, is)
    });
    for (bi, (m, is)) in stats.into_iter().enumerate() {
        mean[bi * hw..(bi + 1) * hw].copy_from_slice(&m);
        inv_std[bi * hw..(bi + 1) * hw].copy_from_slice(&is);
    }
    let yd = y.data_mut();
    par::for_each_row(yd, hw, |t, plane| {
        let bi = t / c;
        let ci = t % c;
        let g = gd[ci];
        let be = bd[ci];
        for (p, out) in plane.iter_mut().enumerate() {
            let xv = xd[(bi * c + ci) * hw + p];
            *out = g * (xv - mean[bi * hw + p]) * inv_std[bi * hw + p] + be;
        }
    });
    Ok((y, mean, inv_std))
}

/// Backward of channel layer norm. Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let hw = h * w;
    let xd = x.data();
    let gd = gamma.data();
    let dyd = dy.data();
    let inv_c = T::one() / T::from_f64(c as f64);

    let mut dx = Tensor::zeros(x.dims());
    let dxd = dx.data_mut();
    // per position: dx = inv_std * (dxh - mean(dxh) - xh * mean(dxh*xh))
    for bi in 0..b {
        for p in 0..hw {
            let mu = mean[bi * hw + p];
            let is = inv_std[bi * hw + p];
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for ci in 0..c {
                let o = (bi * c + ci) * hw + p;
                let xh = (xd[o] - mu) * is;
                let dxh = dyd[o] * gd[ci];
                m1 += dxh;
                m2 += dxh * xh;
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for ci in 0..c {
                let o = (bi * c + ci) * hw + p;
                let xh = (xd[o] - mu) * is;
                let dxh = dyd[o] * gd[ci];
                dxd[o] = is * (dxh - m1 - xh * m2);
            }
        }
    }

    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut sg = T::zero();
        let mut sb = T::zero();
        for bi in 0..b {
            for p in 0..hw {
                let o = (bi * c + ci) * hw + p;
                let xh = (xd[o] - mean[bi * hw + p]) * inv_std[bi * hw + p];
                sg += dyd[o] * xh;
                sb += dyd[o];
            }
        }
        dgamma.data_mut()[ci] = sg;
        dbeta.data_mut()[ci] = sb;
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// patch layout ops
// ---------------------------------------------------------------------------

/// Flatten non-overlapping `p x p` patches into channels:
/// `[b, c, H, W] -> [b, c*p*p, H/p, W/p]`, channel order (c, patch-row, patch-col).
pub fn patch_partition<T: Real>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (b, c, hh, ww) = x.dims4("patch_partition")?;
    if p == 0 || hh % p != 0 || ww % p != 0 {
        return Err(Error::shape(
            "patch_partition",
            format!("patch size {p} must divide spatial dims {hh}x{ww}"),
        ));
    }
    let gh = hh / p;
    let gw = ww / p;
    let mut out = Tensor::zeros(&[b, c * p * p, gh, gw]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for pi in 0..p {
                for pj in 0..p {
                    let q = (ci * p + pi) * p + pj;
                    for gi in 0..gh {
                        for gj in 0..gw {
                            od[idx4(c * p * p, gh, gw, bi, q, gi, gj)] =
                                xd[idx4(c, hh, ww, bi, ci, gi * p + pi, gj * p + pj)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of `patch_partition`; also its backward (pure permutation).
pub fn patch_unpartition<T: Real>(x: &Tensor<T>, p: usize, c: usize) -> Result<Tensor<T>> {
    let (b, q_len, gh, gw) = x.dims4("patch_unpartition")?;
    if q_len != c * p * p {
        return Err(Error::shape(
            "patch_unpartition",
            format!("{} channels cannot split into {}x{}x{}", q_len, c, p, p),
        ));
    }
    let mut out = Tensor::zeros(&[b, c, gh * p, gw * p]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for pi in 0..p {
                for pj in 0..p {
                    let q = (ci * p + pi) * p + pj;
                    for gi in 0..gh {
                        for gj in 0..gw {
                            od[idx4(c, gh * p, gw * p, bi, ci, gi * p + pi, gj * p + pj)] =
                                xd[idx4(c * p * p, gh, gw, bi, q, gi, gj)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenate each 2x2 spatial neighborhood along channels
/// (order: top-left, top-right, bottom-left, bottom-right):
/// `[b, C, h, w] -> [b, 4C, h/2, w/2]`.
pub fn merge_neighborhoods<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("merge_neighborhoods")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("merge_neighborhoods", format!("odd spatial dims {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, 4 * c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    const OFFS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for bi in 0..b {
        for (k, &(di, dj)) in OFFS.iter().enumerate() {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        od[idx4(4 * c, oh, ow, bi, k * c + ci, i, j)] =
                            xd[idx4(c, h, w, bi, ci, 2 * i + di, 2 * j + dj)];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of `merge_neighborhoods`; also its backward.
pub fn unmerge_neighborhoods<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c4, oh, ow) = x.dims4("unmerge_neighborhoods")?;
    if c4 % 4 != 0 {
        return Err(Error::shape("unmerge_neighborhoods", format!("{c4} channels not divisible by 4")));
    }
    let c = c4 / 4;
    let (h, w) = (2 * oh, 2 * ow);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    const OFFS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for bi in 0..b {
        for (k, &(di, dj)) in OFFS.iter().enumerate() {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        od[idx4(c, h, w, bi, ci, 2 * i + di, 2 * j + dj)] =
                            xd[idx4(4 * c, oh, ow, bi, k * c + ci, i, j)];
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// token-mixing kernels (ablation baselines)
// ---------------------------------------------------------------------------

/// Per-channel spatial mixing: `y[p] = sum_q W[p,q] x[q]` over flattened
/// (row-major) spatial positions, independently per (batch, channel).
pub fn global_token_mix<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, wd) = x.dims4("global_token_mix")?;
    let hw = h * wd;
    if w.dims() != [hw, hw] {
        return Err(Error::shape(
            "global_token_mix",
            format!("mixer {:?} does not match {}x{} = {} positions", w.dims(), h, wd, hw),
        ));
    }
    let mut out = Tensor::zeros(x.dims());
    let xd = x.data();
    let wd_ = w.data();
    par::for_each_row(out.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for (p, o) in plane.iter_mut().enumerate() {
            let row = &wd_[p * hw..(p + 1) * hw];
            let mut s = T::zero();
            for (q, &k) in row.iter().enumerate() {
                s += k * xd[base + q];
            }
            *o = s;
        }
        let _ = (b, c);
    });
    Ok(out)
}

pub fn global_token_mix_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, c, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let hw = h * wd;
    let planes = b * c;
    let xd = x.data();
    let wd_ = w.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x.dims());
    par::for_each_row(dx.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for (q, o) in plane.iter_mut().enumerate() {
            let mut s = T::zero();
            for p in 0..hw {
                s += wd_[p * hw + q] * dyd[base + p];
            }
            *o = s;
        }
    });
    let mut dw = Tensor::zeros(w.dims());
    par::for_each_row(dw.data_mut(), hw, |p, row| {
        for t in 0..planes {
            let base = t * hw;
            let g = dyd[base + p];
            for (q, acc) in row.iter_mut().enumerate() {
                *acc += g * xd[base + q];
            }
        }
    });
    (dx, dw)
}

/// Row mixing by `w_h[w,w]` plus column mixing by `w_v[h,h]`, summed.
pub fn axial_token_mix<T: Real>(x: &Tensor<T>, w_h: &Tensor<T>, w_v: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, wd) = x.dims4("axial_token_mix")?;
    if w_h.dims() != [wd, wd] || w_v.dims() != [h, h] {
        return Err(Error::shape(
            "axial_token_mix",
            format!("mixers {:?}/{:?} do not match {}x{}", w_h.dims(), w_v.dims(), h, wd),
        ));
    }
    let hw = h * wd;
    let mut out = Tensor::zeros(x.dims());
    let xd = x.data();
    let wh = w_h.data();
    let wv = w_v.data();
    par::for_each_row(out.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for i in 0..h {
            for j in 0..wd {
                let mut s = T::zero();
                for jp in 0..wd {
                    s += wh[j * wd + jp] * xd[base + i * wd + jp];
                }
                for ip in 0..h {
                    s += wv[i * h + ip] * xd[base + ip * wd + j];
                }
                plane[i * wd + j] = s;
            }
        }
    });
    Ok(out)
}

pub fn axial_token_mix_backward<T: Real>(
    x: &Tensor<T>,
    w_h: &Tensor<T>,
    w_v: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let hw = h * wd;
    let planes = b * c;
    let xd = x.data();
    let wh = w_h.data();
    let wv = w_v.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x.dims());
    par::for_each_row(dx.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for i in 0..h {
            for j in 0..wd {
                let mut s = T::zero();
                for jp in 0..wd {
                    s += wh[jp * wd + j] * dyd[base + i * wd + jp];
                }
                for ip in 0..h {
                    s += wv[ip * h + i] * dyd[base + ip * wd + j];
                }
                plane[i * wd + j] = s;
            }
        }
    });
    let mut dwh = Tensor::zeros(w_h.dims());
    {
        let d = dwh.data_mut();
        for t in 0..planes {
            let base = t * hw;
            for i in 0..h {
                for j in 0..wd {
                    let g = dyd[base + i * wd + j];
                    for jp in 0..wd {
                        d[j * wd + jp] += g * xd[base + i * wd + jp];
                    }
                }
            }
        }
    }
    let mut dwv = Tensor::zeros(w_v.dims());
    {
        let d = dwv.data_mut();
        for t in 0..planes {
            let base = t * hw;
            for i in 0..h {
                for j in 0..wd {
                    let g = dyd[base + i * wd + j];
                    for ip in 0..h {
                        d[i * h + ip] += g * xd[base + ip * wd + j];
                    }
                }
            }
        }
    }
    (dx, dwh, dwv)
}

/// Shared `[M*M, M*M]` mixing inside non-overlapping `M x M` windows.
pub fn window_token_mix<T: Real>(x: &Tensor<T>, w: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (_, _, h, wd) = x.dims4("window_token_mix")?;
    if m == 0 || h % m != 0 || wd % m != 0 {
        return Err(Error::shape(
            "window_token_mix",
            format!("window {m} must divide spatial dims {h}x{wd}"),
        ));
    }
    let mm = m * m;
    if w.dims() != [mm, mm] {
        return Err(Error::shape(
            "window_token_mix",
            format!("mixer {:?} does not match window {}x{}", w.dims(), m, m),
        ));
    }
    let hw = h * wd;
    let mut out = Tensor::zeros(x.dims());
    let xd = x.data();
    let wd_ = w.data();
    par::for_each_row(out.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for wi in 0..h / m {
            for wj in 0..wd / m {
                for ti in 0..m {
                    for tj in 0..m {
                        let p = ti * m + tj;
                        let mut s = T::zero();
                        for ui in 0..m {
                            for uj in 0..m {
                                let q = ui * m + uj;
                                s += wd_[p * mm + q] * xd[base + (wi * m + ui) * wd + wj * m + uj];
                            }
                        }
                        plane[(wi * m + ti) * wd + wj * m + tj] = s;
                    }
                }
            }
        }
    });
    Ok(out)
}

pub fn window_token_mix_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    m: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (b, c, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let hw = h * wd;
    let mm = m * m;
    let planes = b * c;
    let xd = x.data();
    let wd_ = w.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x.dims());
    par::for_each_row(dx.data_mut(), hw, |t, plane| {
        let base = t * hw;
        for wi in 0..h / m {
            for wj in 0..wd / m {
                for ui in 0..m {
                    for uj in 0..m {
                        let q = ui * m + uj;
                        let mut s = T::zero();
                        for ti in 0..m {
                            for tj in 0..m {
                                let p = ti * m + tj;
                                s += wd_[p * mm + q] * dyd[base + (wi * m + ti) * wd + wj * m + tj];
                            }
                        }
                        plane[(wi * m + ui) * wd + wj * m + uj] = s;
                    }
                }
            }
        }
    });
    let mut dw = Tensor::zeros(w.dims());
    {
        let d = dw.data_mut();
        for t in 0..planes {
            let base = t * hw;
            for wi in 0..h / m {
                for wj in 0..wd / m {
                    for ti in 0..m {
                        for tj in 0..m {
                            let p = ti * m + tj;
                            let g = dyd[base + (wi * m + ti) * wd + wj * m + tj];
                            for ui in 0..m {
                                for uj in 0..m {
                                    let q = ui * m + uj;
                                    d[p * mm + q] += g * xd[base + (wi * m + ui) * wd + wj * m + uj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

// ---------------------------------------------------------------------------
// smoothed cross-entropy
// ---------------------------------------------------------------------------

/// Cross-entropy of logits `[b, K]` against `(1-eps) one-hot + eps/K uniform`,
/// averaged over the batch. Returns `(loss, softmax)`.
pub fn smoothed_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    eps: T,
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::shape("cross_entropy", format!("expected [b, K], got {:?}", logits.dims())));
    }
    let (b, k) = (logits.dims()[0], logits.dims()[1]);
    if targets.len() != b {
        return Err(Error::shape("cross_entropy", format!("{} targets for batch {}", targets.len(), b)));
    }
    if eps < T::zero() || eps >= T::one() {
        return Err(Error::invalid("cross_entropy", "smoothing must be in [0, 1)"));
    }
    let mut probs = Tensor::zeros(logits.dims());
    let ld = logits.data();
    let pd = probs.data_mut();
    let mut total = T::zero();
    let uk = eps / T::from_f64(k as f64);
    for (bi, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::invalid("cross_entropy", format!("target {t} out of range for {k} classes")));
        }
        let row = &ld[bi * k..(bi + 1) * k];
        let mx = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut z = T::zero();
        for &v in row {
            z += (v - mx).exp();
        }
        let lse = mx + z.ln();
        let mut loss = T::zero();
        for (ci, &v) in row.iter().enumerate() {
            let logp = v - lse;
            pd[bi * k + ci] = logp.exp();
            let mut q = uk;
            if ci == t {
                q += T::one() - eps;
            }
            loss -= q * logp;
        }
        total += loss;
    }
    Ok((total / T::from_f64(b as f64), probs))
}

/// `dlogits = g/b * (softmax - q)`.
pub fn smoothed_cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    targets: &[usize],
    eps: T,
    upstream: T,
) -> Tensor<T> {
    let (b, k) = (probs.dims()[0], probs.dims()[1]);
    let mut d = probs.clone();
    d.set_requires_grad(false);
    let scale = upstream / T::from_f64(b as f64);
    let uk = eps / T::from_f64(k as f64);
    let dd = d.data_mut();
    for (bi, &t) in targets.iter().enumerate() {
        for ci in 0..k {
            let mut q = uk;
            if ci == t {
                q += T::one() - eps;
            }
            dd[bi * k + ci] = (dd[bi * k + ci] - q) * scale;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(dims: [usize; 4], vals: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims.to_vec(), vals).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let x = t4([1, 2, 1, 1], vec![1.0, 2.0]);
        let w = Tensor::eye(2);
        let b = Tensor::zeros(&[2]);
        let y = matmul_channels(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matmul_affine_identity_example() {
        // b=1, C=2, h=w=1, x=[1,2], w=I, bias=[3,4] -> [4,6]
        let x = t4([1, 2, 1, 1], vec![1.0, 2.0]);
        let w = Tensor::eye(2);
        let b = Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap();
        let y = matmul_channels(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_matches_nested_loop_oracle() {
        let mut rng = crate::rng::Stream::new(11, 0);
        let (b, ci, co, h, w) = (2, 5, 4, 3, 3);
        let mut x = Tensor::<f64>::zeros(&[b, ci, h, w]);
        x.fill_uniform(&mut rng, -1.0, 1.0);
        let mut wt = Tensor::<f64>::zeros(&[co, ci]);
        wt.fill_uniform(&mut rng, -1.0, 1.0);
        let mut bs = Tensor::<f64>::zeros(&[co]);
        bs.fill_uniform(&mut rng, -1.0, 1.0);
        let y = matmul_channels(&x, &wt, &bs).unwrap();
        // naive five-nested-loop oracle
        for bi in 0..b {
            for o in 0..co {
                for i in 0..h {
                    for j in 0..w {
                        let mut s = bs.data()[o];
                        for c in 0..ci {
                            s += wt.data()[o * ci + c] * x.data()[idx4(ci, h, w, bi, c, i, j)];
                        }
                        let got = y.data()[idx4(co, h, w, bi, o, i, j)];
                        assert!((got - s).abs() < 1e-12, "mismatch {got} vs {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let w = Tensor::<f64>::zeros(&[4, 5]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(matmul_channels(&x, &w, &b).is_err());
    }

    #[test]
    fn roll_definition_and_inverses() {
        let x = Tensor::from_vec(vec![5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = roll(&x, 0, 1).unwrap();
        assert_eq!(y.data(), &[5.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(roll(&x, 0, 0).unwrap().data(), x.data());
        assert_eq!(roll(&x, 0, 5).unwrap().data(), x.data());
        let z = roll(&roll(&x, 0, 2).unwrap(), 0, -2).unwrap();
        assert_eq!(z.data(), x.data());
        assert!(roll(&x, 1, 1).is_err());
    }

    #[test]
    fn pad_modes_match_definitions() {
        let x = Tensor::from_vec(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let z = pad_axis(&x, 3, 1, PadMode::Zero).unwrap();
        assert_eq!(z.data(), &[0.0, 1.0, 2.0, 3.0, 0.0]);
        let r = pad_axis(&x, 3, 1, PadMode::Reflect).unwrap();
        assert_eq!(r.data(), &[2.0, 1.0, 2.0, 3.0, 2.0]);
        let p = pad_axis(&x, 3, 1, PadMode::Replicate).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0, 2.0, 3.0, 3.0]);
        assert!(pad_axis(&x, 3, 3, PadMode::Reflect).is_err());
    }

    #[test]
    fn chunk_sizes_follow_ceil_rule() {
        let sizes = |c, s| {
            chunk_bounds(c, s)
                .unwrap()
                .iter()
                .map(|&(_, l)| l)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(3, 3), vec![1, 1, 1]);
        assert_eq!(sizes(5, 1), vec![5]);
        assert_eq!(sizes(7, 3), vec![3, 3, 1]);
        assert_eq!(sizes(8, 3), vec![3, 3, 2]);
        // ceil(8/5)=2 fills 8 channels after four groups
        assert_eq!(sizes(8, 5), vec![2, 2, 2, 2]);
        assert!(chunk_bounds(3, 4).is_none());
    }

    #[test]
    fn reduce_orders_and_values() {
        let x = Tensor::<f64>::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s0 = reduce_sum_axes(&x, &[0]).unwrap();
        assert_eq!(s0.dims(), &[3]);
        assert_eq!(s0.data(), &[5.0, 7.0, 9.0]);
        let s1 = reduce_sum_axes(&x, &[1]).unwrap();
        assert_eq!(s1.data(), &[6.0, 15.0]);
        let m = reduce_mean_axes(&x, &[0, 1]).unwrap();
        assert_eq!(m.dims(), &[1]);
        assert!((m.data()[0] - 3.5).abs() < 1e-15);
        let v = reduce_var_axes(&x, &[1]).unwrap();
        assert!((v.data()[0] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gelu_reference_values() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![0.0, 1.0, -10.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.8413447460685429).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-6);
        // asymptote: gelu(x) -> x
        let big = Tensor::<f64>::from_vec(vec![1], vec![12.0]).unwrap();
        assert!((gelu(&big).data()[0] - 12.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_statistics_and_invariance() {
        let mut rng = crate::rng::Stream::new(5, 0);
        let mut x = Tensor::<f64>::zeros(&[2, 6, 3, 3]);
        x.fill_uniform(&mut rng, -1.0, 1.0);
        let gamma = Tensor::ones(&[6]);
        let beta = Tensor::zeros(&[6]);
        let (y, _, _) = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        // per-position mean ~ 0, variance ~ 1 up to the epsilon correction
        for bi in 0..2 {
            for p in 0..9 {
                let mut m = 0.0;
                let mut v = 0.0;
                for c in 0..6 {
                    m += y.data()[(bi * 6 + c) * 9 + p];
                }
                m /= 6.0;
                for c in 0..6 {
                    let d = y.data()[(bi * 6 + c) * 9 + p] - m;
                    v += d * d;
                }
                v /= 6.0;
                assert!(m.abs() < 1e-10, "mean {m}");
                assert!((v - 1.0).abs() < 1e-3, "var {v}");
            }
        }
        // shift invariance
        let shifted = x.map(|v| v + 3.25);
        let (y2, _, _) = layer_norm(&shifted, &gamma, &beta, 1e-5).unwrap();
        assert!(y.max_abs_diff(&y2) < 1e-10);
        // constant channel vector -> zeros; gamma = 0 -> beta broadcast
        let c = Tensor::full(&[1, 4, 1, 1], 2.5);
        let (yc, _, _) = layer_norm(&c, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(yc.data().iter().all(|&v: &f64| v.abs() < 1e-12));
        let (yb, _, _) = layer_norm(&x, &Tensor::zeros(&[6]), &Tensor::full(&[6], 0.7), 1e-5).unwrap();
        assert!(yb.data().iter().all(|&v: &f64| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn patch_partition_shape_and_round_trip() {
        let x = Tensor::from_vec(vec![1, 1, 8, 8], (0..64).map(|i| i as f64).collect()).unwrap();
        let y = patch_partition(&x, 4).unwrap();
        assert_eq!(y.dims(), &[1, 16, 2, 2]);
        let back = patch_unpartition(&y, 4, 1).unwrap();
        assert_eq!(back.data(), x.data());
        // p=1 keeps the layout
        let id = patch_partition(&x, 1).unwrap();
        assert_eq!(id.data(), x.data());
        assert!(patch_partition(&x, 3).is_err());
    }

    #[test]
    fn merge_concat_order_and_round_trip() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = merge_neighborhoods(&x).unwrap();
        // TL, TR, BL, BR
        assert_eq!(y.dims(), &[1, 4, 1, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let back = unmerge_neighborhoods(&y).unwrap();
        assert_eq!(back.data(), x.data());
        let odd = Tensor::<f64>::zeros(&[1, 1, 3, 2]);
        assert!(merge_neighborhoods(&odd).is_err());
    }

    #[test]
    fn global_mix_identity_permutation_and_oracle() {
        let mut rng = crate::rng::Stream::new(9, 0);
        let mut x = Tensor::<f64>::zeros(&[2, 3, 2, 2]);
        x.fill_uniform(&mut rng, -1.0, 1.0);
        let id = Tensor::eye(4);
        assert!(global_token_mix(&x, &id).unwrap().max_abs_diff(&x) == 0.0);

        // permutation swapping positions 0 and 3
        let mut p = Tensor::<f64>::zeros(&[4, 4]);
        p.data_mut()[0 * 4 + 3] = 1.0;
        p.data_mut()[1 * 4 + 1] = 1.0;
        p.data_mut()[2 * 4 + 2] = 1.0;
        p.data_mut()[3 * 4 + 0] = 1.0;
        let y = global_token_mix(&x, &p).unwrap();
        for t in 0..6 {
            let xp = &x.data()[t * 4..(t + 1) * 4];
            let yp = &y.data()[t * 4..(t + 1) * 4];
            assert_eq!(yp, &[xp[3], xp[1], xp[2], xp[0]]);
        }

        // random mixer vs explicit per-channel matrix-vector oracle
        let mut w = Tensor::<f64>::zeros(&[4, 4]);
        w.fill_uniform(&mut rng, -1.0, 1.0);
        let y = global_token_mix(&x, &w).unwrap();
        for t in 0..6 {
            for p in 0..4 {
                let mut s = 0.0;
                for q in 0..4 {
                    s += w.data()[p * 4 + q] * x.data()[t * 4 + q];
                }
                assert!((y.data()[t * 4 + p] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn axial_mix_identities() {
        let mut rng = crate::rng::Stream::new(13, 0);
        let mut x = Tensor::<f64>::zeros(&[1, 2, 3, 4]);
        x.fill_uniform(&mut rng, -1.0, 1.0);
        let ih = Tensor::eye(4);
        let iv = Tensor::eye(3);
        let y = axial_token_mix(&x, &ih, &iv).unwrap();
        let twice = scale(&x, 2.0);
        assert!(y.max_abs_diff(&twice) < 1e-15);
        // zero vertical mixer leaves pure horizontal mixing
        let y2 = axial_token_mix(&x, &ih, &Tensor::zeros(&[3, 3])).unwrap();
        assert!(y2.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn window_mix_locality_and_degenerate_global() {
        let mut rng = crate::rng::Stream::new(17, 0);
        let mut x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        x.fill_uniform(&mut rng, -1.0, 1.0);
        let id = Tensor::eye(4);
        assert_eq!(window_token_mix(&x, &id, 2).unwrap().data(), x.data());
        // M = h = w degenerates to the global mix
        let mut w = Tensor::<f64>::zeros(&[16, 16]);
        w.fill_uniform(&mut rng, -1.0, 1.0);
        let a = window_token_mix(&x, &w, 4).unwrap();
        let b = global_token_mix(&x, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        // perturbing one window never changes the other
        let mut wmix = Tensor::<f64>::zeros(&[4, 4]);
        wmix.fill_uniform(&mut rng, -1.0, 1.0);
        let y0 = window_token_mix(&x, &wmix, 2).unwrap();
        let mut x2 = x.clone();
        x2.data_mut()[0] += 1.0; // inside window (0,0)
        let y1 = window_token_mix(&x2, &wmix, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let changed = (y0.data()[i * 4 + j] - y1.data()[i * 4 + j]).abs() > 0.0;
                let same_window = i < 2 && j < 2;
                assert_eq!(changed, same_window, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_and_oracle() {
        let k = 7;
        let logits = Tensor::from_vec(vec![2, k], vec![0.3; 2 * k]).unwrap();
        for eps in [0.0, 0.1, 0.5] {
            let (loss, _) = smoothed_cross_entropy(&logits, &[2, 5], eps).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12, "eps {eps}");
        }
        // random case vs explicit log-softmax + weighted-sum oracle
        let mut rng = crate::rng::Stream::new(23, 0);
        let mut lg = Tensor::<f64>::zeros(&[3, 4]);
        lg.fill_uniform(&mut rng, -2.0, 2.0);
        let targets = [1usize, 3, 0];
        let eps = 0.1;
        let (loss, _) = smoothed_cross_entropy(&lg, &targets, eps).unwrap();
        let mut expect = 0.0;
        for (bi, &t) in targets.iter().enumerate() {
            let row = &lg.data()[bi * 4..(bi + 1) * 4];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for (ci, &v) in row.iter().enumerate() {
                let q = eps / 4.0 + if ci == t { 1.0 - eps } else { 0.0 };
                expect -= q * (v - z.ln());
            }
        }
        expect /= 3.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!(smoothed_cross_entropy(&lg, &[1, 9, 0], eps).is_err());
    }
}
