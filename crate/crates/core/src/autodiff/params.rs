//! Named parameter tensors with Adam optimizer state.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    /// First-moment estimate.
    pub m: Tensor,
    /// Second-moment estimate.
    pub v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let m = Tensor::zeros(value.raw_dim());
        let v = Tensor::zeros(value.raw_dim());
        Self { value, grad: None, m, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Trainable parameters plus non-trainable buffers (running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Tensor>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    /// Restores a parameter together with its optimizer moments.
    pub fn insert_with_state(&mut self, name: impl Into<String>, value: Tensor, m: Tensor, v: Tensor) -> Result<()> {
        let name = name.into();
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(Error::shape(format!("optimizer state of `{name}` does not match its shape")));
        }
        self.params.insert(name, Param { value, grad: None, m, v });
        Ok(())
    }

    /// Gaussian-initialized parameter with standard deviation `std`.
    pub fn insert_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std.max(0.0)).expect("finite std");
        let t = ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng));
        self.insert(name, t);
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(IxDyn(shape)));
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: &[usize], v: f64) {
        self.insert(name, Tensor::from_elem(IxDyn(shape), v));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} vs parameter `{name}` {:?}",
                grad.shape(),
                p.value.shape()
            )));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    /// One bias-corrected Adam update of every parameter; consumes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&g)
                .for_each(|x, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr0;

    fn scalar_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", arr0(theta).into_dyn());
        s
    }

    fn theta(s: &ParamStore) -> f64 {
        *s.value("theta").unwrap().first().unwrap()
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut s = scalar_store(1.5);
        s.set_grad("theta", arr0(0.0).into_dyn()).unwrap();
        s.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(theta(&s), 1.5);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // f = theta^2 at theta = 1: g = 2, m_hat = 2, v_hat = 4.
        let mut s = scalar_store(1.0);
        s.set_grad("theta", arr0(2.0).into_dyn()).unwrap();
        s.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((theta(&s) - expected).abs() < 1e-15);
        assert!((theta(&s) - 0.9).abs() < 1e-7);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..200 {
            let g = 2.0 * (theta(&s) - 3.0);
            s.set_grad("theta", arr0(g).into_dyn()).unwrap();
            s.adam_step(&cfg).unwrap();
        }
        assert!((theta(&s) - 3.0).abs() < 1e-2, "theta = {}", theta(&s));
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(0.0);
        s.insert("other", arr0(1.0).into_dyn());
        s.set_grad("theta", arr0(1.0).into_dyn()).unwrap();
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::MissingGradient(n) if n == "other"), "{err}");
    }
}
