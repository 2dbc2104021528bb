use std::sync::RwLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A trainable tensor slot. The held tensor is a gradient-accumulating leaf;
/// optimizers swap in a fresh leaf after each update.
pub struct Param<T: Element> {
    value: RwLock<Tensor<T>>,
}

impl<T: Element> Param<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Self {
            value: RwLock::new(Tensor::param(shape, data)?),
        })
    }

    pub fn get(&self) -> Tensor<T> {
        self.value.read().expect("param lock").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.get().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.get().numel()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.get().grad()
    }

    pub fn zero_grad(&self) {
        self.get().zero_grad();
    }

    /// Replaces the value with a fresh leaf; the shape must not change.
    pub fn set(&self, data: Vec<T>) -> Result<()> {
        let shape = self.shape();
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "param",
                format!("{} values for shape {shape:?}", data.len()),
            ));
        }
        *self.value.write().expect("param lock") = Tensor::param(&shape, data)?;
        Ok(())
    }

    pub fn fill(&self, v: T) -> Result<()> {
        self.set(vec![v; self.numel()])
    }
}

impl<T: Element> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param{:?}", self.shape())
    }
}

/// Anything holding named parameters.
pub trait Module<T: Element> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>));

    fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name.to_string(), p.get())));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    /// Looks up one parameter by its full name and applies `f`.
    fn with_param(&self, name: &str, f: &mut dyn FnMut(&Param<T>)) -> bool {
        let mut found = false;
        self.visit_params("", &mut |n, p| {
            if n == name {
                f(p);
                found = true;
            }
        });
        found
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Slope argument for layers with no nonlinearity after them: a leaky ReLU
/// of slope 1 is the identity, so the Kaiming bound reduces to unit gain.
pub const LINEAR: f64 = 1.0;

/// Kaiming-uniform initializer for a layer followed by a leaky ReLU of the
/// given slope: `U(-b, b)` with `b = sqrt(6 / ((1 + slope²)·fan_in))`.
pub fn kaiming_uniform<T: Element>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    slope: f64,
) -> Result<Param<T>> {
    let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Param::new(shape, data)
}

pub fn constant<T: Element>(shape: &[usize], v: f64) -> Result<Param<T>> {
    Param::new(shape, vec![T::from_f64_lossy(v); shape.iter().product()])
}
