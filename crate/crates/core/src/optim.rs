//! Adam optimizer.

use crate::error::{shape_err, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Adam {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Bias-corrected update from the gradients held in `store`. Parameters
    /// rejected by `trainable` keep their values (and moments).
    pub fn step_masked(&mut self, store: &mut ParamStore<T>, lr: f64, trainable: impl Fn(&str) -> bool) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(shape_err!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            ));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (step, eps) = (T::of(lr / bc1), T::of(eps));
        let bc2 = T::of(bc2);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.shape() != p.value.shape() {
                return Err(shape_err!("optimizer state for {} has the wrong shape", p.name));
            }
            if !trainable(&p.name) {
                continue;
            }
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = b1 * md[i] + (T::one() - b1) * g[i];
                vd[i] = b2 * vd[i] + (T::one() - b2) * g[i] * g[i];
                *w -= step * md[i] / ((vd[i] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.step_masked(store, lr, |_| true)
    }
}

/// `lr * 2^-(floor(iter / halve_every))`.
pub fn halving_lr(base: f64, iter: u64, halve_every: u64) -> f64 {
    if halve_every == 0 {
        return base;
    }
    base * 0.5f64.powi((iter / halve_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64([1, 1, 1, vals.len()], vals).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_keeps_values() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(&s, AdamConfig::default());
        opt.step(&mut s, 1e-3).unwrap();
        opt.step(&mut s, 1e-3).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, -2.0]);
        assert_eq!(opt.t, 2);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let lr = 1e-4;
        for g in [3.0, -0.02, 0.5] {
            let mut s = store(&[0.5]);
            s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
            let mut opt = Adam::new(&s, AdamConfig::default());
            opt.step(&mut s, lr).unwrap();
            let delta = s.iter().next().unwrap().value.data()[0] - 0.5;
            // m_hat = g, v_hat = g^2 after bias correction
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta + lr * g.signum()).abs() < 1e-6 * lr);
        }
    }

    #[test]
    fn mask_and_determinism() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        s.add("b", Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        for p in s.iter_mut() {
            p.grad.fill(0.3);
        }
        let mut s2 = s.clone();
        let mut o1 = Adam::new(&s, AdamConfig::default());
        let mut o2 = o1.clone();
        o1.step_masked(&mut s, 0.1, |n| n != "a").unwrap();
        o2.step_masked(&mut s2, 0.1, |n| n != "a").unwrap();
        let vals: Vec<_> = s.iter().map(|p| p.value.data()[0]).collect();
        assert_eq!(vals[0], 1.0);
        assert!(vals[1] < 1.0);
        assert_eq!(o1, o2);
        let v2: Vec<_> = s2.iter().map(|p| p.value.data()[0]).collect();
        assert_eq!(vals, v2);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(halving_lr(1e-4, 49_999, 50_000), 1e-4);
        assert_eq!(halving_lr(1e-4, 50_000, 50_000), 5e-5);
        assert_eq!(halving_lr(1e-4, 150_000, 50_000), 1.25e-5);
    }
}
