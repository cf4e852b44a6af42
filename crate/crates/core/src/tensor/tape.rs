//! Wengert tape: reverse-mode autodiff over tensor ops.
//!
//! The tape owns every intermediate value (copies, never views) plus one op
//! record per primitive. `backward` replays the records in exact reverse
//! order, accumulating gradients additively; a buffer consumed k times
//! receives the sum of its k contributions. A tape is confined to one
//! forward/backward pass; batch parallelism runs over independent tapes.
//!
//! The same type doubles as the eval-mode execution context: with recording
//! off no op records are kept, but values and the multiply-accumulate counter
//! still flow, so one forward implementation serves training, inference and
//! instrumented counting.

use super::ops::{self, PadMode};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value held by a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Buf<T: Real> {
    value: Tensor<T>,
    keep_grad: bool,
}

enum Op<T: Real> {
    MatmulChannels { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, k: T },
    MulElem { a: Var, b: Var },
    ScalePerSample { x: Var, factors: Vec<T> },
    Gelu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T> },
    Roll { x: Var, axis: usize, offset: i64 },
    PadAxis { x: Var, axis: usize, amount: usize, mode: PadMode },
    SliceAxis { x: Var, axis: usize, start: usize, in_len: usize },
    ConcatAxis { xs: Vec<Var>, axis: usize, sizes: Vec<usize> },
    Reshape { x: Var },
    ReduceSum { x: Var, axes: Vec<usize> },
    ReduceMean { x: Var, axes: Vec<usize> },
    PatchPartition { x: Var, p: usize, c: usize },
    MergeNeighborhoods { x: Var },
    GlobalMix { x: Var, w: Var },
    AxialMix { x: Var, wh: Var, wv: Var },
    WindowMix { x: Var, w: Var, m: usize },
    SmoothedCe { logits: Var, targets: Vec<usize>, eps: T, probs: Tensor<T> },
}

struct Record<T: Real> {
    out: Var,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    bufs: Vec<Buf<T>>,
    records: Vec<Record<T>>,
    grads: Vec<Option<Tensor<T>>>,
    macs: u64,
    recording: bool,
    ran_backward: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Recording tape for a forward/backward pass.
    pub fn new() -> Self {
        Tape { bufs: Vec::new(), records: Vec::new(), grads: Vec::new(), macs: 0, recording: true, ran_backward: false }
    }

    /// Evaluation context: values and MAC counts flow, nothing is recorded.
    pub fn eval() -> Self {
        let mut t = Self::new();
        t.recording = false;
        t
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Multiply-accumulate count of every op executed so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.bufs[v.0].value
    }

    /// Gradient accumulated for a watched leaf (after `backward`).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Register a leaf. Data is copied; gradients are retained iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), t.requires_grad())
    }

    /// Register a leaf and retain its gradient regardless of the flag.
    pub fn watched_leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), true)
    }

    fn push(&mut self, value: Tensor<T>, keep_grad: bool) -> Var {
        let id = Var(self.bufs.len());
        self.bufs.push(Buf { value, keep_grad });
        id
    }

    fn emit(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let out = self.push(value, false);
        if self.recording {
            self.records.push(Record { out, op });
        }
        out
    }

    fn finite_check(&self, op: &'static str, v: Var) -> Result<Var> {
        if !self.bufs[v.0].value.is_all_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(v)
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul_channels(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::matmul_channels(self.value(x), self.value(w), self.value(b))?;
        let d = self.value(x).dims();
        self.macs += ops::matmul_channels_macs(d[0], d[1], self.value(w).dims()[0], d[2], d[3]);
        let out = self.emit(y, Op::MatmulChannels { x, w, b });
        self.finite_check("matmul_channels", out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let out = self.emit(y, Op::Add { a, b });
        self.finite_check("add", out)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let y = ops::scale(self.value(x), k);
        let out = self.emit(y, Op::Scale { x, k });
        self.finite_check("scale", out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        let out = self.emit(y, Op::MulElem { a, b });
        self.finite_check("mul", out)
    }

    /// Multiply each batch element by its own factor (DropPath mask).
    pub fn scale_per_sample(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let y = ops::scale_per_sample(self.value(x), &factors)?;
        Ok(self.emit(y, Op::ScalePerSample { x, factors }))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let y = ops::gelu(self.value(x));
        let out = self.emit(y, Op::Gelu { x });
        self.finite_check("gelu", out)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (y, mean, inv_std) = ops::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let out = self.emit(y, Op::LayerNorm { x, gamma, beta, mean, inv_std });
        self.finite_check("layer_norm", out)
    }

    pub fn roll(&mut self, x: Var, axis: usize, offset: i64) -> Result<Var> {
        let y = ops::roll(self.value(x), axis, offset)?;
        Ok(self.emit(y, Op::Roll { x, axis, offset }))
    }

    pub fn pad_axis(&mut self, x: Var, axis: usize, amount: usize, mode: PadMode) -> Result<Var> {
        let y = ops::pad_axis(self.value(x), axis, amount, mode)?;
        Ok(self.emit(y, Op::PadAxis { x, axis, amount, mode }))
    }

    pub fn crop_axis(&mut self, x: Var, axis: usize, amount: usize) -> Result<Var> {
        let in_len = self.value(x).dims()[axis];
        let y = ops::crop_axis(self.value(x), axis, amount)?;
        Ok(self.emit(y, Op::SliceAxis { x, axis, start: amount, in_len }))
    }

    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let in_len = self.value(x).dims()[axis];
        let y = ops::slice_axis(self.value(x), axis, start, len)?;
        Ok(self.emit(y, Op::SliceAxis { x, axis, start, in_len }))
    }

    pub fn concat_axis(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|&v| &self.bufs[v.0].value).collect();
        let y = ops::concat_axis(&tensors, axis)?;
        let sizes = tensors.iter().map(|t| t.dims()[axis]).collect();
        Ok(self.emit(y, Op::ConcatAxis { xs: xs.to_vec(), axis, sizes }))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(dims)?;
        Ok(self.emit(y, Op::Reshape { x }))
    }

    pub fn reduce_sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = ops::reduce_sum_axes(self.value(x), axes)?;
        let out = self.emit(y, Op::ReduceSum { x, axes: axes.to_vec() });
        self.finite_check("reduce_sum", out)
    }

    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = ops::reduce_mean_axes(self.value(x), axes)?;
        let out = self.emit(y, Op::ReduceMean { x, axes: axes.to_vec() });
        self.finite_check("reduce_mean", out)
    }

    pub fn patch_partition(&mut self, x: Var, p: usize) -> Result<Var> {
        let c = self.value(x).dims()[1];
        let y = ops::patch_partition(self.value(x), p)?;
        Ok(self.emit(y, Op::PatchPartition { x, p, c }))
    }

    pub fn merge_neighborhoods(&mut self, x: Var) -> Result<Var> {
        let y = ops::merge_neighborhoods(self.value(x))?;
        Ok(self.emit(y, Op::MergeNeighborhoods { x }))
    }

    pub fn global_token_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::global_token_mix(self.value(x), self.value(w))?;
        let d = self.value(x).dims();
        let hw = (d[2] * d[3]) as u64;
        self.macs += d[0] as u64 * d[1] as u64 * hw * hw;
        let out = self.emit(y, Op::GlobalMix { x, w });
        self.finite_check("global_token_mix", out)
    }

    pub fn axial_token_mix(&mut self, x: Var, wh: Var, wv: Var) -> Result<Var> {
        let y = ops::axial_token_mix(self.value(x), self.value(wh), self.value(wv))?;
        let d = self.value(x).dims();
        let (h, w) = (d[2] as u64, d[3] as u64);
        self.macs += d[0] as u64 * d[1] as u64 * (h * w * w + w * h * h);
        let out = self.emit(y, Op::AxialMix { x, wh, wv });
        self.finite_check("axial_token_mix", out)
    }

    pub fn window_token_mix(&mut self, x: Var, w: Var, m: usize) -> Result<Var> {
        let y = ops::window_token_mix(self.value(x), self.value(w), m)?;
        let d = self.value(x).dims();
        self.macs += d[0] as u64 * d[1] as u64 * (d[2] * d[3]) as u64 * (m * m) as u64;
        let out = self.emit(y, Op::WindowMix { x, w, m });
        self.finite_check("window_token_mix", out)
    }

    /// Smoothed cross-entropy producing a `[1]` scalar.
    pub fn smoothed_cross_entropy(&mut self, logits: Var, targets: &[usize], eps: T) -> Result<Var> {
        let (loss, probs) = ops::smoothed_cross_entropy(self.value(logits), targets, eps)?;
        let out = self.emit(
            Tensor::scalar(loss),
            Op::SmoothedCe { logits, targets: targets.to_vec(), eps, probs },
        );
        self.finite_check("smoothed_cross_entropy", out)
    }

    // ── backward ─────────────────────────────────────────────────────────

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => {
                debug_assert_eq!(acc.dims(), g.dims());
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar loss. Gradients of watched leaves are then
    /// available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::invalid("backward", "tape was created in eval mode; values are detached"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).dims()),
            ));
        }
        self.ran_backward = true;
        self.grads = (0..self.bufs.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));

        for ri in (0..self.records.len()).rev() {
            let out = self.records[ri].out;
            let Some(dy) = self.grads[out.0].take() else { continue };
            // keep the output grad if someone watches it
            let keep = self.bufs[out.0].keep_grad;
            match &self.records[ri].op {
                Op::MatmulChannels { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (dx, dw, db) =
                        ops::matmul_channels_backward(self.value(x), self.value(w), &dy);
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                    self.accumulate(b, db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, dy.clone());
                    self.accumulate(b, dy.clone());
                }
                Op::Scale { x, k } => {
                    let (x, k) = (*x, *k);
                    self.accumulate(x, ops::scale(&dy, k));
                }
                Op::MulElem { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = ops::mul(&dy, self.value(b)).expect("shape checked in forward");
                    let db = ops::mul(&dy, self.value(a)).expect("shape checked in forward");
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::ScalePerSample { x, factors } => {
                    let x = *x;
                    let dx = ops::scale_per_sample(&dy, factors).expect("shape checked in forward");
                    self.accumulate(x, dx);
                }
                Op::Gelu { x } => {
                    let x = *x;
                    let dx = ops::gelu_backward(self.value(x), &dy);
                    self.accumulate(x, dx);
                }
                Op::LayerNorm { x, gamma, beta, mean, inv_std } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (dx, dgamma, dbeta) =
                        ops::layer_norm_backward(self.value(x), self.value(gamma), mean, inv_std, &dy);
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::Roll { x, axis, offset } => {
                    let (x, axis, offset) = (*x, *axis, *offset);
                    self.accumulate(x, ops::roll(&dy, axis, -offset).expect("axis checked in forward"));
                }
                Op::PadAxis { x, axis, amount, mode } => {
                    let (x, axis, amount, mode) = (*x, *axis, *amount, *mode);
                    self.accumulate(x, ops::pad_axis_backward(&dy, axis, amount, mode));
                }
                Op::SliceAxis { x, axis, start, in_len } => {
                    let (x, axis, start, in_len) = (*x, *axis, *start, *in_len);
                    self.accumulate(x, ops::slice_axis_backward(&dy, axis, start, in_len));
                }
                Op::ConcatAxis { xs, axis, sizes } => {
                    let (xs, axis, sizes) = (xs.clone(), *axis, sizes.clone());
                    let mut off = 0;
                    for (v, n) in xs.iter().zip(&sizes) {
                        let piece = ops::slice_axis(&dy, axis, off, *n).expect("sizes recorded in forward");
                        self.accumulate(*v, piece);
                        off += n;
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let dims = self.value(x).dims().to_vec();
                    self.accumulate(x, dy.reshape(&dims).expect("element count preserved"));
                }
                Op::ReduceSum { x, axes } => {
                    let (x, axes) = (*x, axes.clone());
                    let dims = self.value(x).dims().to_vec();
                    self.accumulate(x, ops::reduce_backward(&dy, &dims, &axes, false));
                }
                Op::ReduceMean { x, axes } => {
                    let (x, axes) = (*x, axes.clone());
                    let dims = self.value(x).dims().to_vec();
                    self.accumulate(x, ops::reduce_backward(&dy, &dims, &axes, true));
                }
                Op::PatchPartition { x, p, c } => {
                    let (x, p, c) = (*x, *p, *c);
                    self.accumulate(x, ops::patch_unpartition(&dy, p, c).expect("shape checked in forward"));
                }
                Op::MergeNeighborhoods { x } => {
                    let x = *x;
                    self.accumulate(x, ops::unmerge_neighborhoods(&dy).expect("shape checked in forward"));
                }
                Op::GlobalMix { x, w } => {
                    let (x, w) = (*x, *w);
                    let (dx, dw) = ops::global_token_mix_backward(self.value(x), self.value(w), &dy);
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                }
                Op::AxialMix { x, wh, wv } => {
                    let (x, wh, wv) = (*x, *wh, *wv);
                    let (dx, dwh, dwv) =
                        ops::axial_token_mix_backward(self.value(x), self.value(wh), self.value(wv), &dy);
                    self.accumulate(x, dx);
                    self.accumulate(wh, dwh);
                    self.accumulate(wv, dwv);
                }
                Op::WindowMix { x, w, m } => {
                    let (x, w, m) = (*x, *w, *m);
                    let (dx, dw) = ops::window_token_mix_backward(self.value(x), self.value(w), m, &dy);
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                }
                Op::SmoothedCe { logits, targets, eps, probs } => {
                    let (logits, eps) = (*logits, *eps);
                    let dlogits = ops::smoothed_cross_entropy_backward(probs, targets, eps, dy.item());
                    self.accumulate(logits, dlogits);
                }
            }
            if keep {
                self.grads[out.0] = Some(dy);
            }
        }

        // drop intermediate grads; keep only watched leaves
        for (i, buf) in self.bufs.iter().enumerate() {
            if !buf.keep_grad {
                self.grads[i] = None;
            }
        }
        Ok(())
    }
}

/// Central finite differences of a scalar-valued function w.r.t. one input.
pub fn numeric_grad<F>(f: &F, inputs: &[Tensor<f64>], wrt: usize, step: f64) -> Tensor<f64>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut grad = Tensor::zeros(inputs[wrt].dims());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..grad.len() {
        let orig = work[wrt].data()[i];
        work[wrt].data_mut()[i] = orig + step;
        let fp = f(&work);
        work[wrt].data_mut()[i] = orig - step;
        let fm = f(&work);
        work[wrt].data_mut()[i] = orig;
        grad.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Max of `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.dims(), numeric.dims());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Stream::new(seed, 99);
        let mut t = Tensor::zeros(dims);
        t.fill_uniform(&mut rng, -1.0, 1.0);
        t
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = rand_tensor(&[2, 3], 1).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let loss = tape.reduce_sum(xv, &[0, 1]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xv).unwrap().data(), vec![1.0; 6]);
    }

    #[test]
    fn quadratic_gradient_is_x() {
        let x = rand_tensor(&[4], 2).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let half = tape.scale(sq, 0.5).unwrap();
        let loss = tape.reduce_sum(half, &[0]).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(xv).unwrap().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn repeated_consumption_accumulates() {
        let x = rand_tensor(&[3], 3).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let y = tape.add(xv, xv).unwrap();
        let z = tape.add(y, xv).unwrap(); // 3x
        let loss = tape.reduce_sum(z, &[0]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xv).unwrap().data(), vec![3.0; 3]);
    }

    #[test]
    fn backward_requires_scalar_and_recording() {
        let x = rand_tensor(&[3], 4).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        assert!(tape.backward(xv).is_err());
        let mut ev = Tape::<f64>::eval();
        let e = ev.leaf(&x);
        let s = ev.reduce_sum(e, &[0]).unwrap();
        assert!(ev.backward(s).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let x = rand_tensor(&[2, 4, 3, 3], 5).with_grad();
            let w = rand_tensor(&[4, 4], 6).with_grad();
            let b = rand_tensor(&[4], 7).with_grad();
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            let y = tape.matmul_channels(xv, wv, bv).unwrap();
            let g = tape.gelu(y).unwrap();
            let loss = tape.reduce_sum(g, &[0, 1, 2, 3]).unwrap();
            tape.backward(loss).unwrap();
            (
                tape.grad(xv).unwrap().clone(),
                tape.grad(wv).unwrap().clone(),
                tape.grad(bv).unwrap().clone(),
            )
        };
        let (a1, b1, c1) = run();
        let (a2, b2, c2) = run();
        assert!(a1 == a2 && b1 == b2 && c1 == c2);
    }

    /// Finite-difference check harness for a single-output composite.
    fn check<F>(f: F, inputs: Vec<Tensor<f64>>, tol: f64)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let scalar = |ts: &[Tensor<f64>]| -> f64 {
            let mut tape = Tape::eval();
            let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t)).collect();
            let out = f(&mut tape, &vars);
            tape.value(out).item()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.watched_leaf(t)).collect();
        let out = f(&mut tape, &vars);
        tape.backward(out).unwrap();
        for (i, v) in vars.iter().enumerate() {
            let analytic = tape.grad(*v).unwrap();
            let numeric = numeric_grad(&scalar, &inputs, i, 1e-5);
            let err = max_rel_err(analytic, &numeric, 1e-3);
            assert!(err < tol, "input {i}: rel err {err}");
        }
    }

    /// Reduce any tensor to a scalar with a fixed pseudo-random projection so
    /// gradcheck exercises non-uniform output adjoints.
    fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
        let dims = tape.value(v).dims().to_vec();
        let mut w = rand_tensor(&dims, seed ^ 0xabcd);
        w.set_requires_grad(false);
        let wv = tape.leaf(&w);
        let prod = tape.mul(v, wv).unwrap();
        let all: Vec<usize> = (0..dims.len()).collect();
        tape.reduce_sum(prod, &all).unwrap()
    }

    #[test]
    fn gradcheck_matmul_channels() {
        check(
            |t, v| {
                let y = t.matmul_channels(v[0], v[1], v[2]).unwrap();
                project(t, y, 10)
            },
            vec![rand_tensor(&[2, 3, 2, 2], 11), rand_tensor(&[4, 3], 12), rand_tensor(&[4], 13)],
            1e-6,
        );
    }

    #[test]
    fn gradcheck_gelu_and_layer_norm() {
        check(
            |t, v| {
                let g = t.gelu(v[0]).unwrap();
                project(t, g, 20)
            },
            vec![rand_tensor(&[2, 3, 2, 2], 21)],
            1e-6,
        );
        check(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                project(t, y, 22)
            },
            vec![rand_tensor(&[2, 5, 2, 2], 23), rand_tensor(&[5], 24), rand_tensor(&[5], 25)],
            1e-5,
        );
    }

    #[test]
    fn gradcheck_structural_ops() {
        check(
            |t, v| {
                let p = t.pad_axis(v[0], 3, 2, PadMode::Reflect).unwrap();
                let r = t.roll(p, 3, 1).unwrap();
                let c = t.crop_axis(r, 3, 2).unwrap();
                project(t, c, 30)
            },
            vec![rand_tensor(&[1, 2, 3, 5], 31)],
            1e-6,
        );
        check(
            |t, v| {
                let a = t.slice_axis(v[0], 1, 0, 2).unwrap();
                let b = t.slice_axis(v[0], 1, 2, 3).unwrap();
                let cat = t.concat_axis(&[b, a], 1).unwrap();
                let m = t.merge_neighborhoods(cat).unwrap();
                project(t, m, 32)
            },
            vec![rand_tensor(&[2, 5, 4, 4], 33)],
            1e-6,
        );
        check(
            |t, v| {
                let pp = t.patch_partition(v[0], 2).unwrap();
                let s = t.reduce_mean(pp, &[2, 3]).unwrap();
                project(t, s, 34)
            },
            vec![rand_tensor(&[1, 3, 4, 4], 35)],
            1e-6,
        );
    }

    #[test]
    fn gradcheck_token_mixes() {
        check(
            |t, v| {
                let y = t.global_token_mix(v[0], v[1]).unwrap();
                project(t, y, 40)
            },
            vec![rand_tensor(&[2, 2, 2, 3], 41), rand_tensor(&[6, 6], 42)],
            1e-6,
        );
        check(
            |t, v| {
                let y = t.axial_token_mix(v[0], v[1], v[2]).unwrap();
                project(t, y, 43)
            },
            vec![rand_tensor(&[1, 2, 3, 4], 44), rand_tensor(&[4, 4], 45), rand_tensor(&[3, 3], 46)],
            1e-6,
        );
        check(
            |t, v| {
                let y = t.window_token_mix(v[0], v[1], 2).unwrap();
                project(t, y, 47)
            },
            vec![rand_tensor(&[1, 2, 4, 4], 48), rand_tensor(&[4, 4], 49)],
            1e-6,
        );
    }

    #[test]
    fn gradcheck_cross_entropy() {
        check(
            |t, v| t.smoothed_cross_entropy(v[0], &[1, 0, 3], 0.1).unwrap(),
            vec![rand_tensor(&[3, 4], 50)],
            1e-6,
        );
    }

    #[test]
    fn eval_tape_counts_macs() {
        let x = rand_tensor(&[2, 3, 4, 5], 60);
        let w = rand_tensor(&[7, 3], 61);
        let b = rand_tensor(&[7], 62);
        let mut tape = Tape::eval();
        let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
        tape.matmul_channels(xv, wv, bv).unwrap();
        assert_eq!(tape.macs(), 2 * 3 * 7 * 4 * 5);
    }

    #[test]
    fn non_finite_is_rejected() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![1e200]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let doubled = tape.add(xv, xv).unwrap(); // still finite
        let overflow = tape.mul(doubled, doubled); // 4e400 -> inf
        assert!(matches!(overflow, Err(Error::NonFinite { .. })));
    }
}
