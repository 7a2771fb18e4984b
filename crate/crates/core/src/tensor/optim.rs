use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Result, TensorError};

/// Optimizer selection as it appears in run configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum { learning_rate: f64, momentum: f64 },
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { learning_rate, momentum }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerKind::Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn build<R: Real>(&self) -> Box<dyn Optimizer<R>> {
        match *self {
            OptimizerKind::SgdMomentum { learning_rate, momentum } => Box::new(Sgd::new(learning_rate, momentum)),
            OptimizerKind::Adam { learning_rate, beta1, beta2, epsilon } => {
                Box::new(Adam::new(learning_rate, beta1, beta2, epsilon))
            }
        }
    }
}

pub trait Optimizer<R: Real>: Send {
    /// Applies one update to every parameter and zeroes the gradients.
    /// Fails without touching anything if a parameter has no gradient.
    fn step(&mut self, params: &mut ParamStore<R>) -> Result<()>;
}

fn check_grads<R: Real>(params: &ParamStore<R>) -> Result<()> {
    for (name, t) in params.iter() {
        if t.grad().is_none() {
            return Err(TensorError::Contract(format!("parameter {} has no gradient", name)));
        }
    }
    Ok(())
}

fn ensure_buffers<R: Real>(buffers: &mut Vec<Vec<R>>, params: &ParamStore<R>) {
    if buffers.len() != params.len() {
        *buffers = params.iter().map(|(_, t)| vec![R::zero(); t.numel()]).collect();
    }
    debug_assert!(buffers.iter().zip(params.iter()).all(|(b, (_, t))| b.len() == t.numel()));
}

/// SGD with (heavy-ball) momentum: `v = mu*v + g; p -= lr*v`.
pub struct Sgd<R> {
    lr: R,
    momentum: R,
    velocity: Vec<Vec<R>>,
}

impl<R: Real> Sgd<R> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr: R::from_f64_lossy(lr), momentum: R::from_f64_lossy(momentum), velocity: Vec::new() }
    }
}

impl<R: Real> Optimizer<R> for Sgd<R> {
    fn step(&mut self, params: &mut ParamStore<R>) -> Result<()> {
        check_grads(params)?;
        ensure_buffers(&mut self.velocity, params);
        for (t, vel) in params.tensors_mut().iter_mut().zip(&mut self.velocity) {
            let (data, grad) = t.parts_mut();
            let grad = grad.expect("checked above");
            for ((p, g), v) in data.iter_mut().zip(grad.iter_mut()).zip(vel.iter_mut()) {
                *v = self.momentum * *v + *g;
                *p = *p - self.lr * *v;
                *g = R::zero();
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
pub struct Adam<R> {
    lr: R,
    beta1: R,
    beta2: R,
    eps: R,
    t: i32,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr: R::from_f64_lossy(lr),
            beta1: R::from_f64_lossy(beta1),
            beta2: R::from_f64_lossy(beta2),
            eps: R::from_f64_lossy(eps),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<R: Real> Optimizer<R> for Adam<R> {
    fn step(&mut self, params: &mut ParamStore<R>) -> Result<()> {
        check_grads(params)?;
        ensure_buffers(&mut self.m, params);
        ensure_buffers(&mut self.v, params);
        self.t += 1;
        let one = R::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (data, grad) = t.parts_mut();
            let grad = grad.expect("checked above");
            for (((p, g), m), v) in data.iter_mut().zip(grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (one - self.beta1) * *g;
                *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                *g = R::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    fn single(value: f64, grad: Option<f64>) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(value));
        if let Some(g) = grad {
            store.get_mut(id).accumulate_grad(&[g]).unwrap();
        }
        store
    }

    #[test]
    fn plain_sgd_step() {
        let mut store = single(1.0, Some(2.0));
        Sgd::new(0.1, 0.0).step(&mut store).unwrap();
        let t = store.iter().next().unwrap().1;
        assert!((t.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(t.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn zero_grad_leaves_parameter() {
        let mut store = single(1.5, Some(0.0));
        Sgd::new(0.1, 0.0).step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().1.data(), &[1.5]);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        // At t=1 the bias-corrected moments are g and g^2, so the step is
        // lr * g / (|g| + eps).
        for g in [3.0, -0.02, 250.0] {
            let mut store = single(0.0, Some(g));
            Adam::new(1e-3, 0.9, 0.999, 1e-8).step(&mut store).unwrap();
            let moved = store.iter().next().unwrap().1.data()[0];
            let expected = -1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((moved - expected).abs() < 1e-12, "g={g}: {moved} vs {expected}");
        }
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let mut store = single(1.0, None);
        let err = Sgd::new(0.1, 0.9).step(&mut store).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
        assert_eq!(store.iter().next().unwrap().1.data(), &[1.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = single(0.0, Some(1.0));
        let mut opt = Sgd::new(1.0, 0.5);
        opt.step(&mut store).unwrap();
        let id = store.ids().next().unwrap();
        store.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        opt.step(&mut store).unwrap();
        // -1 then -(0.5 + 1)
        assert_eq!(store.get(id).data(), &[-2.5]);
    }
}
