//! Bias-corrected Adam over a module's parameters.

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments are stored in parameter visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new<M: Module<T> + ?Sized>(module: &M, config: AdamConfig) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        module.visit_params("", &mut |name, p| {
            names.push(name.to_string());
            m.push(vec![T::zero(); p.numel()]);
        });
        Self {
            config,
            t: 0,
            names,
            v: m.clone(),
            m,
        }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &M, lr: f64) -> Result<()> {
        // Collect first so a missing gradient leaves everything untouched.
        let mut grads = Vec::with_capacity(self.m.len());
        let mut err = None;
        module.visit_params("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match p.grad() {
                Some(g) => grads.push(g),
                None => err = Some(Error::MissingGrad(name.to_string())),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, module has {}",
                self.m.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(c.eps);
        let mut i = 0;
        let mut result = Ok(());
        module.visit_params("", &mut |_, p| {
            if result.is_err() {
                return;
            }
            let g = &grads[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if g.len() != m.len() {
                result = Err(Error::shape(
                    "adam",
                    format!("moment size {} vs grad {}", m.len(), g.len()),
                ));
                return;
            }
            let mut data = p.get().to_vec();
            for j in 0..data.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                data[j] -= step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
            result = p.set(data);
            i += 1;
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::constant;
    use crate::nn::Param;

    struct One(Param<f64>);
    impl Module<f64> for One {
        fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<f64>)) {
            f(prefix, &self.0);
        }
    }

    fn grad_step(m: &One, st: &mut AdamState<f64>, g: impl Fn(f64) -> f64, lr: f64) {
        let p = m.0.get();
        let x = p.item();
        // d/dp of g-shaped objective realised as p * g(x) with g(x) constant.
        p.scale(g(x)).unwrap().sum().unwrap().backward().unwrap();
        st.step(m, lr).unwrap();
    }

    #[test]
    fn first_step_is_lr() {
        for g in [1.0, 1e-3, 250.0] {
            let m = One(constant(&[1], 0.5).unwrap());
            let mut st = AdamState::new(&m, AdamConfig::default());
            grad_step(&m, &mut st, |_| g, 1e-2);
            // eps shifts the step by a relative eps/|g|.
            assert!(
                (0.5 - m.0.get().item() - 1e-2).abs() < 1e-2 * (2e-8 / g + 1e-12),
                "g={g}"
            );
        }
    }

    #[test]
    fn zero_grad_keeps_param() {
        let m = One(constant(&[1], 0.5).unwrap());
        let mut st = AdamState::new(&m, AdamConfig::default());
        grad_step(&m, &mut st, |_| 0.0, 1e-2);
        assert_eq!(m.0.get().item(), 0.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn missing_grad() {
        let m = One(constant(&[1], 0.5).unwrap());
        let mut st = AdamState::new(&m, AdamConfig::default());
        assert!(matches!(st.step(&m, 1e-3), Err(Error::MissingGrad(_))));
        assert_eq!(st.t, 0);
    }
}
