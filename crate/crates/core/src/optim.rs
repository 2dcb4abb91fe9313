//! Rectified Adam.

use hkd_autodiff::{Real, Tensor};

use crate::error::{HkdError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl RAdamConfig {
    /// Length limit of the approximated simple moving average.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    pub fn rho(&self, step: u64) -> f64 {
        let b2t = self.beta2.powf(step as f64);
        self.rho_inf() - 2.0 * step as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification factor at `step`, or `None` while the
    /// variance estimate is not yet tractable.
    pub fn rectification(&self, step: u64) -> Option<f64> {
        let rho = self.rho(step);
        let rho_inf = self.rho_inf();
        (rho > 4.0).then(|| (((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct RAdam<F> {
    pub config: RAdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> RAdam<F> {
    pub fn new(config: RAdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![F::zero(); t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are in store order; a non-finite or
    /// mis-shaped gradient rejects the whole step and leaves everything
    /// untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(HkdError::Input(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(HkdError::Input(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(HkdError::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let one_b1 = F::from_f64_lossy(1.0 - c.beta1);
        let one_b2 = F::from_f64_lossy(1.0 - c.beta2);
        let m_corr = 1.0 - c.beta1.powf(t);
        let v_corr = 1.0 - c.beta2.powf(t);
        let rect = c.rectification(self.step);
        let eps = F::from_f64_lossy(c.eps);

        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((x, &gi), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / F::from_f64_lossy(m_corr);
                let delta = match rect {
                    Some(r) => {
                        let v_hat = (*vi / F::from_f64_lossy(v_corr)).sqrt();
                        F::from_f64_lossy(c.lr * r) * m_hat / (v_hat + eps)
                    }
                    None => F::from_f64_lossy(c.lr) * m_hat,
                };
                *x -= delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        s
    }

    fn grad(g: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::new(vec![1], vec![g]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        let mut opt = RAdam::new(RAdamConfig::default(), &s);
        opt.step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.by_name("x").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_is_plain_momentum() {
        let c = RAdamConfig::default();
        assert!((c.rho_inf() - 1999.0).abs() < 1e-9);
        assert!((c.rho(1) - 1.0).abs() < 1e-9);
        assert!(c.rectification(1).is_none());
        let mut s = scalar_store(0.0);
        let mut opt = RAdam::new(c, &s);
        opt.step(&mut s, &grad(1.0)).unwrap();
        assert_eq!(s.by_name("x").unwrap().data(), &[-1e-3]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut s = scalar_store(0.5);
        let mut opt = RAdam::new(RAdamConfig::default(), &s);
        let err = opt.step(&mut s, &grad(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains('x'));
        assert_eq!(opt.step_count(), 0);
        assert_eq!(s.by_name("x").unwrap().data(), &[0.5]);
        opt.step(&mut s, &grad(1.0)).unwrap();
        assert_eq!(s.by_name("x").unwrap().data(), &[0.5 - 1e-3]);
    }
}
