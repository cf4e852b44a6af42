//! Standard layers composed by the axial-shift block: channel layer norm,
//! exact-erf GELU, the two-projection MLP, and per-sample stochastic depth.
//!
//! Each layer exists in two forms: a value-level function over explicit
//! parameter structs (used by oracles and tests) and a `*Ref` handle struct
//! wired into a [`ParamStore`](crate::params::ParamStore) for model forwards.

use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Stream;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{ops, Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

// ---------------------------------------------------------------------------
// value-level parameter structs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LayerNormParams<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Real> LayerNormParams<T> {
    pub fn identity(c: usize) -> Self {
        LayerNormParams { gamma: Tensor::ones(&[c]), beta: Tensor::zeros(&[c]), eps: LAYER_NORM_EPS }
    }

    pub fn new(gamma: Tensor<T>, beta: Tensor<T>, eps: f64) -> Result<Self> {
        if gamma.rank() != 1 || gamma.dims() != beta.dims() {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {:?} / beta {:?}", gamma.dims(), beta.dims()),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm", "epsilon must be positive"));
        }
        Ok(LayerNormParams { gamma, beta, eps })
    }
}

/// Per-position channel normalization followed by the affine.
pub fn layer_norm<T: Real>(x: &Tensor<T>, p: &LayerNormParams<T>) -> Result<Tensor<T>> {
    let (y, _, _) = ops::layer_norm(x, &p.gamma, &p.beta, T::from_f64(p.eps))?;
    Ok(y)
}

/// Exact error-function GELU.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    ops::gelu(x)
}

#[derive(Clone, Debug)]
pub struct MlpParams<T: Real> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub ratio: usize,
}

impl<T: Real> MlpParams<T> {
    pub fn new(w1: Tensor<T>, b1: Tensor<T>, w2: Tensor<T>, b2: Tensor<T>, ratio: usize) -> Result<Self> {
        let c = w1.dims().get(1).copied().unwrap_or(0);
        let inner = w1.dims().first().copied().unwrap_or(0);
        if inner != ratio * c {
            return Err(Error::shape(
                "mlp",
                format!("inner width {} must equal ratio {} x channels {}", inner, ratio, c),
            ));
        }
        if w2.dims() != [c, inner] || b1.dims() != [inner] || b2.dims() != [c] {
            return Err(Error::shape(
                "mlp",
                format!("w2 {:?} b1 {:?} b2 {:?} inconsistent with {}->{}", w2.dims(), b1.dims(), b2.dims(), c, inner),
            ));
        }
        Ok(MlpParams { w1, b1, w2, b2, ratio })
    }

    /// `2rC^2 + rC + C` elements.
    pub fn param_count(&self) -> u64 {
        (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()) as u64
    }
}

/// `proj(rC<-C) -> gelu -> proj(C<-rC)`; costs `2rC^2` MACs per position.
pub fn mlp_forward<T: Real>(x: &Tensor<T>, p: &MlpParams<T>) -> Result<Tensor<T>> {
    let h = ops::matmul_channels(x, &p.w1, &p.b1)?;
    let a = ops::gelu(&h);
    ops::matmul_channels(&a, &p.w2, &p.b2)
}

/// Stochastic depth over a residual branch. In training, each sample is
/// zeroed with probability `rate` and survivors are scaled by `1/(1-rate)`;
/// in evaluation this is the identity.
pub fn drop_path<T: Real>(x: &Tensor<T>, rate: f64, training: bool, rng: &mut Stream) -> Result<Tensor<T>> {
    let factors = drop_path_factors::<T>(x.dims()[0], rate, training, rng)?;
    match factors {
        None => Ok(x.clone()),
        Some(f) => ops::scale_per_sample(x, &f),
    }
}

/// Per-sample keep factors, or `None` for the identity case. Draws exactly
/// `batch` uniforms whenever training with a positive rate.
pub fn drop_path_factors<T: Real>(
    batch: usize,
    rate: f64,
    training: bool,
    rng: &mut Stream,
) -> Result<Option<Vec<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("drop_path", format!("rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    Ok(Some(
        (0..batch)
            .map(|_| if rng.uniform() < keep { scale } else { T::zero() })
            .collect(),
    ))
}

// ---------------------------------------------------------------------------
// store-backed layer handles
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct LinearRef {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearRef {
    /// Truncated-normal weights (std 0.02), zero bias.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Stream,
    ) -> Self {
        let mut w = Tensor::zeros(&[out_dim, in_dim]);
        w.fill_trunc_normal(rng, INIT_STD);
        let w = store.add(format!("{name}.weight"), w, true);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), false);
        LinearRef { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        tape.matmul_channels(x, bind.var(self.w), bind.var(self.b))
    }

    pub fn macs(&self, positions: u64) -> u64 {
        positions * self.in_dim as u64 * self.out_dim as u64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormRef {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormRef {
    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[c]), false);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[c]), false);
        LayerNormRef { gamma, beta }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, bind.var(self.gamma), bind.var(self.beta), T::from_f64(LAYER_NORM_EPS))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpRef {
    pub fc1: LinearRef,
    pub fc2: LinearRef,
    pub ratio: usize,
}

impl MlpRef {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        ratio: usize,
        rng: &mut Stream,
    ) -> Self {
        let fc1 = LinearRef::init(store, &format!("{name}.fc1"), c, ratio * c, rng);
        let fc2 = LinearRef::init(store, &format!("{name}.fc2"), ratio * c, c, rng);
        MlpRef { fc1, fc2, ratio }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, bind, x)?;
        let a = tape.gelu(h)?;
        self.fc2.forward(tape, bind, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::{max_rel_err, numeric_grad};

    fn rand(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Stream::new(seed, 7);
        let mut t = Tensor::zeros(dims);
        t.fill_uniform(&mut rng, -1.0, 1.0);
        t
    }

    #[test]
    fn mlp_identity_composition() {
        // r=1, identity weights, zero biases -> gelu(x)
        let c = 3;
        let p = MlpParams::new(
            Tensor::eye(c),
            Tensor::zeros(&[c]),
            Tensor::eye(c),
            Tensor::zeros(&[c]),
            1,
        )
        .unwrap();
        let x = rand(&[1, c, 2, 2], 1);
        let y = mlp_forward(&x, &p).unwrap();
        assert!(y.max_abs_diff(&gelu(&x)) < 1e-15);

        // all-zero weights -> zero output
        let z = MlpParams::new(
            Tensor::zeros(&[12, 3]),
            Tensor::zeros(&[12]),
            Tensor::zeros(&[3, 12]),
            Tensor::zeros(&[3]),
            4,
        )
        .unwrap();
        let y0 = mlp_forward(&x, &z).unwrap();
        assert!(y0.data().iter().all(|&v| v == 0.0));
        assert_eq!(z.param_count(), 2 * 4 * 9 + 4 * 3 + 3);
    }

    #[test]
    fn mlp_rejects_wrong_inner_width() {
        assert!(MlpParams::new(
            Tensor::<f64>::zeros(&[10, 3]),
            Tensor::zeros(&[10]),
            Tensor::zeros(&[3, 10]),
            Tensor::zeros(&[3]),
            4
        )
        .is_err());
    }

    #[test]
    fn mlp_mac_count_formula() {
        // C=4, r=4, h=w=7, b=1 -> 2 r C^2 h w = 6272
        let mut rng = Stream::new(3, 0);
        let mut store = ParamStore::<f64>::new();
        let mlp = MlpRef::init(&mut store, "mlp", 4, 4, &mut rng);
        let x = rand(&[1, 4, 7, 7], 4);
        let mut tape = Tape::eval();
        let bind = store.bind(&mut tape);
        let xv = tape.leaf(&x);
        mlp.forward(&mut tape, &bind, xv).unwrap();
        assert_eq!(tape.macs(), 6272);
    }

    #[test]
    fn drop_path_contracts() {
        let mut rng = Stream::new(5, 2);
        let x = rand(&[4, 2, 2, 2], 6);
        // rate 0 and eval are identities
        let y = drop_path(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        let y = drop_path(&x, 0.9, false, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(drop_path(&x, 1.0, true, &mut rng).is_err());
        assert!(drop_path(&x, -0.1, true, &mut rng).is_err());

        // keep fraction and expectation over many draws
        let ones = Tensor::<f64>::ones(&[10_000, 1, 1, 1]);
        let y = drop_path(&ones, 0.5, true, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.5).abs() < 0.02, "keep fraction {kept}");
        let mean: f64 = y.data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "expectation {mean}");
    }

    #[test]
    fn mlp_gradcheck() {
        let mut rng = Stream::new(9, 0);
        let mut store = ParamStore::<f64>::new();
        let mlp = MlpRef::init(&mut store, "mlp", 3, 2, &mut rng);
        // nonzero biases for a nondegenerate check
        for e in store.entries_mut() {
            if e.tensor.rank() == 1 {
                e.tensor.fill_uniform(&mut rng, -0.3, 0.3);
            }
        }
        let x = rand(&[2, 3, 2, 2], 10);
        let proj = rand(&[2, 3, 2, 2], 11);

        let inputs: Vec<Tensor<f64>> = std::iter::once(x.clone())
            .chain(store.entries().iter().map(|e| e.tensor.clone()))
            .collect();
        let f = |ts: &[Tensor<f64>]| -> f64 {
            let p = MlpParams::new(ts[1].clone(), ts[2].clone(), ts[3].clone(), ts[4].clone(), 2).unwrap();
            let y = mlp_forward(&ts[0], &p).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };

        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let xv = tape.watched_leaf(&x);
        let y = mlp.forward(&mut tape, &bind, xv).unwrap();
        let pv = tape.leaf(&proj);
        let prod = tape.mul(y, pv).unwrap();
        let loss = tape.reduce_sum(prod, &[0, 1, 2, 3]).unwrap();
        tape.backward(loss).unwrap();

        let analytic_x = tape.grad(xv).unwrap();
        let err = max_rel_err(analytic_x, &numeric_grad(&f, &inputs, 0, 1e-5), 1e-3);
        assert!(err < 1e-4, "input grad err {err}");
        for (i, &v) in bind.vars().iter().enumerate() {
            let err = max_rel_err(tape.grad(v).unwrap(), &numeric_grad(&f, &inputs, i + 1, 1e-5), 1e-3);
            assert!(err < 1e-4, "param {i} grad err {err}");
        }
    }
}
