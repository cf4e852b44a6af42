//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamWHyper {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper { betas: (0.9, 0.999), eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First/second moment estimates aligned with a store, plus the step count.
pub struct AdamState<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        AdamState {
            m: store.entries().iter().map(|e| Tensor::zeros(e.tensor.dims())).collect(),
            v: store.entries().iter().map(|e| Tensor::zeros(e.tensor.dims())).collect(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam step. Decay multiplies eligible parameters
/// by `1 - lr*wd` separately from the bias-corrected adaptive update; biases
/// and norm affines are exempt (their `decay` flag is false).
pub fn adamw_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hp: &AdamWHyper,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} gradients for {} parameters", grads.len(), store.len()),
        ));
    }
    let (b1, b2) = hp.betas;
    state.step += 1;
    let t = state.step as i32;
    let corr1 = 1.0 - b1.powi(t);
    let corr2 = 1.0 - b2.powi(t);
    let lr_t = T::from_f64(lr);
    let b1t = T::from_f64(b1);
    let b2t = T::from_f64(b2);
    let one_m_b1 = T::from_f64(1.0 - b1);
    let one_m_b2 = T::from_f64(1.0 - b2);
    let inv_c1 = T::from_f64(1.0 / corr1);
    let inv_c2 = T::from_f64(1.0 / corr2);
    let eps = T::from_f64(hp.eps);

    for (i, entry) in store.entries_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.dims() != entry.tensor.dims() {
            return Err(Error::shape(
                "adamw_step",
                format!("grad {:?} for param {:?}", g.dims(), entry.tensor.dims()),
            ));
        }
        if !g.is_all_finite() {
            return Err(Error::NonFinite { op: "adamw_step" });
        }
        if entry.decay && hp.weight_decay > 0.0 {
            let keep = T::from_f64(1.0 - lr * hp.weight_decay);
            for p in entry.tensor.data_mut() {
                *p *= keep;
            }
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = entry.tensor.data_mut();
        for ((p, m), (v, &g)) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut().zip(g.data())) {
            *m = b1t * *m + one_m_b1 * g;
            *v = b2t * *v + one_m_b2 * g * g;
            let m_hat = *m * inv_c1;
            let v_hat = *v * inv_c2;
            *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup to `base_lr` over `warmup_steps`, then half-cosine decay to
/// `min_lr` at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, warmup_steps: u64, base_lr: f64, min_lr: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::invalid("lr_schedule", format!("step {step} beyond total {total_steps}")));
    }
    if warmup_steps >= total_steps && total_steps > 0 {
        return Err(Error::invalid("lr_schedule", "warmup must end before the total step count"));
    }
    if step <= warmup_steps {
        if warmup_steps == 0 {
            return Ok(base_lr);
        }
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_store(b: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.add("p", Tensor::zeros(&[b.len()]), true);
        store
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut store = quad_store(&[1.0, 2.0]);
        store.tensor_mut(crate::params::ParamId(0)).data_mut().copy_from_slice(&[0.5, -0.25]);
        let mut state = AdamState::new(&store);
        let hp = AdamWHyper { weight_decay: 0.0, ..Default::default() };
        let g = vec![Tensor::<f64>::zeros(&[2])];
        adamw_step(&mut store, &g, &mut state, 0.1, &hp).unwrap();
        assert_eq!(store.tensor(crate::params::ParamId(0)).data(), &[0.5, -0.25]);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut store = quad_store(&[0.0, 0.0, 0.0]);
        let mut state = AdamState::new(&store);
        let hp = AdamWHyper { weight_decay: 0.0, ..Default::default() };
        let g = vec![Tensor::from_vec(vec![3], vec![2.5, -0.03, 1e-4]).unwrap()];
        let lr = 0.01;
        adamw_step(&mut store, &g, &mut state, lr, &hp).unwrap();
        let p = store.tensor(crate::params::ParamId(0)).data();
        for (i, sign) in [(0usize, 1.0f64), (1, -1.0), (2, 1.0)] {
            let expect = -lr * sign;
            assert!((p[i] - expect).abs() < lr * 1e-3, "coord {i}: {} vs {}", p[i], expect);
        }
    }

    #[test]
    fn pure_decay_contracts_geometrically() {
        let mut store = quad_store(&[0.0]);
        store.tensor_mut(crate::params::ParamId(0)).data_mut()[0] = 2.0;
        let mut state = AdamState::new(&store);
        let hp = AdamWHyper { weight_decay: 0.1, ..Default::default() };
        let g = vec![Tensor::<f64>::zeros(&[1])];
        let lr = 0.05;
        let mut expect = 2.0;
        for _ in 0..10 {
            adamw_step(&mut store, &g, &mut state, lr, &hp).unwrap();
            expect *= 1.0 - lr * 0.1;
            let got = store.tensor(crate::params::ParamId(0)).data()[0];
            assert!((got - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(p) = 0.5 sum a_i (p_i - b_i)^2; beta1 = 0.8 damps the limit
        // cycle Adam otherwise settles into on quadratics
        let a = [1.0, 4.0, 0.5, 2.0];
        let b = [1.2, -0.7, 3.0, 0.1];
        let mut store = quad_store(&b);
        let mut state = AdamState::new(&store);
        let hp = AdamWHyper { betas: (0.8, 0.999), eps: 1e-8, weight_decay: 0.0 };
        let grad = |p: &[f64]| -> Vec<f64> {
            p.iter().zip(a).zip(b).map(|((&p, a), b)| a * (p - b)).collect()
        };
        let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g0 = norm(&grad(store.tensor(crate::params::ParamId(0)).data()));
        for _ in 0..200 {
            let g = grad(store.tensor(crate::params::ParamId(0)).data());
            let gt = vec![Tensor::from_vec(vec![4], g).unwrap()];
            adamw_step(&mut store, &gt, &mut state, 0.1, &hp).unwrap();
        }
        let gf = norm(&grad(store.tensor(crate::params::ParamId(0)).data()));
        assert!(gf < 1e-6 * g0, "grad norm ratio {}", gf / g0);
    }

    #[test]
    fn schedule_endpoints_and_shape() {
        let base = 1e-3;
        // ramp endpoint
        assert_eq!(lr_schedule(20, 100, 20, base, 0.0).unwrap(), base);
        // start of ramp and final step
        assert_eq!(lr_schedule(0, 100, 20, base, 0.0).unwrap(), 0.0);
        let end = lr_schedule(100, 100, 20, base, 0.0).unwrap();
        assert!(end.abs() < 1e-18);
        // cosine midpoint
        let mid = lr_schedule(60, 100, 20, base, 0.0).unwrap();
        assert!((mid - base / 2.0).abs() < 1e-15);
        // monotone nonincreasing after warmup
        let mut prev = f64::MAX;
        for s in 20..=100 {
            let lr = lr_schedule(s, 100, 20, base, 0.0).unwrap();
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        // continuity at the junction
        let before = lr_schedule(20, 100, 20, base, 0.0).unwrap();
        let after = lr_schedule(21, 100, 20, base, 0.0).unwrap();
        assert!((before - after).abs() < base * 0.05);
        assert!(lr_schedule(101, 100, 20, base, 0.0).is_err());
    }
}
