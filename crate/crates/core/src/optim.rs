//! Adadelta and SGD over a [`ParamStore`], plus learning-rate schedules.
//!
//! Optimizers read each parameter's accumulated `grad`; callers zero the
//! gradients between steps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADADELTA_RHO: f64 = 0.9;
pub const ADADELTA_EPS: f64 = 1e-6;

pub trait Optimizer<T: Scalar> {
    /// Update every parameter in place from its gradient, scaling the step by `lr`.
    fn step(&mut self, params: &mut [Param<T>], lr: f64) -> Result<()>;
}

fn check_shapes<T: Scalar>(state: &[Tensor<T>], params: &[Param<T>], op: &'static str) -> Result<()> {
    if state.len() != params.len() {
        return Err(Error::mismatch(
            op,
            format!("state has {} tensors, got {} params", state.len(), params.len()),
        ));
    }
    for (s, p) in state.iter().zip(params) {
        s.expect_same_shape(&p.value, op)?;
        p.grad.expect_same_shape(&p.value, op)?;
    }
    Ok(())
}

/// Adadelta with running averages `E[g^2]` and `E[dx^2]`.
#[derive(Clone, Debug)]
pub struct Adadelta<T> {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Tensor<T>>,
    pub sq_delta: Vec<Tensor<T>>,
}

/// One scalar Adadelta update. Returns `(new_x, delta)`; the accumulators
/// are updated in place.
#[inline]
pub fn adadelta_update<T: Scalar>(x: T, g: T, sq_grad: &mut T, sq_delta: &mut T, rho: T, eps: T, lr: T) -> (T, T) {
    let one = T::one();
    *sq_grad = rho * *sq_grad + (one - rho) * g * g;
    let delta = -((*sq_delta + eps).sqrt() / (*sq_grad + eps).sqrt()) * g;
    *sq_delta = rho * *sq_delta + (one - rho) * delta * delta;
    (x + lr * delta, delta)
}

impl<T: Scalar> Adadelta<T> {
    pub fn new(params: &[Param<T>], rho: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        Adadelta {
            rho,
            eps,
            sq_grad: zeros(),
            sq_delta: zeros(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adadelta<T> {
    fn step(&mut self, params: &mut [Param<T>], lr: f64) -> Result<()> {
        check_shapes(&self.sq_grad, params, "adadelta")?;
        let (rho, eps, lr) = (T::from_f64(self.rho), T::from_f64(self.eps), T::from_f64(lr));
        for ((p, eg), ed) in params.iter_mut().zip(&mut self.sq_grad).zip(&mut self.sq_delta) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            let acc = eg.data_mut().iter_mut().zip(ed.data_mut());
            for ((x, &g), (sg, sd)) in values.iter_mut().zip(grads).zip(acc) {
                *x = adadelta_update(*x, g, sg, sd, rho, eps, lr).0;
            }
        }
        Ok(())
    }
}

/// SGD with momentum and L2 weight decay: `v = mu*v + g + wd*x; x -= lr*v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &[Param<T>], momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [Param<T>], lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("sgd learning rate must be positive, got {lr}")));
        }
        check_shapes(&self.velocity, params, "sgd")?;
        let (mu, wd, lr) = (
            T::from_f64(self.momentum),
            T::from_f64(self.weight_decay),
            T::from_f64(lr),
        );
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for ((x, &g), v) in values.iter_mut().zip(grads).zip(vel.data_mut()) {
                *v = mu * *v + g + wd * *x;
                *x -= lr * *v;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adadelta,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Learning rate as a function of the zero-based epoch.
#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    /// `initial * gamma^floor(epoch / step_every)`.
    Step {
        initial: f64,
        gamma: f64,
        step_every: usize,
    },
    /// `initial * gamma^(number of milestones <= epoch)`.
    MultiStep {
        initial: f64,
        gamma: f64,
        milestones: Vec<usize>,
    },
}

impl LrSchedule {
    pub fn step(initial: f64, gamma: f64, step_every: usize) -> Result<Self> {
        let s = LrSchedule::Step {
            initial,
            gamma,
            step_every,
        };
        s.validate()?;
        Ok(s)
    }

    /// Decay by `gamma` at 50% and 75% of `epochs`.
    pub fn half_and_three_quarters(initial: f64, gamma: f64, epochs: usize) -> Result<Self> {
        let mut milestones = vec![epochs / 2, epochs * 3 / 4];
        milestones.retain(|&m| m > 0);
        milestones.dedup();
        let s = LrSchedule::MultiStep {
            initial,
            gamma,
            milestones,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (initial, gamma) = match self {
            LrSchedule::Step {
                initial,
                gamma,
                step_every,
            } => {
                if *step_every == 0 {
                    return Err(Error::InvalidConfig("step_every must be at least 1".into()));
                }
                (*initial, *gamma)
            }
            LrSchedule::MultiStep { initial, gamma, .. } => (*initial, *gamma),
        };
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must be in (0, 1], got {gamma}")));
        }
        if !(initial > 0.0 && initial.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {initial}")));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Step {
                initial,
                gamma,
                step_every,
            } => initial * gamma.powi((epoch / step_every) as i32),
            LrSchedule::MultiStep {
                initial,
                gamma,
                milestones,
            } => initial * gamma.powi(milestones.iter().filter(|&&m| m <= epoch).count() as i32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Param<f64> {
        Param {
            name: "p".into(),
            value: Tensor::from_f64(&[values.len()], values).unwrap(),
            grad: Tensor::from_f64(&[grads.len()], grads).unwrap(),
        }
    }

    #[test]
    fn adadelta_first_step_from_fresh_state() {
        let mut ps = vec![param(&[1.0], &[1.0])];
        let mut opt = Adadelta::new(&ps, 0.9, 1e-6);
        opt.step(&mut ps, 1.0).unwrap();
        // -sqrt(1e-6) / sqrt(0.1 + 1e-6), evaluated at 30 digits.
        let delta = -0.003_162_261_848_898_7;
        assert!((ps[0].value.data()[0] - (1.0 + delta)).abs() < 1e-15);
        // The commonly quoted rounding of the same step.
        assert!((ps[0].value.data()[0] - 1.0 - -0.003_162_23).abs() < 1e-7);
        assert!((opt.sq_grad[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((opt.sq_delta[0].data()[0] - 0.1 * delta * delta).abs() < 1e-18);
    }

    #[test]
    fn adadelta_zero_grad_decays_accumulators() {
        let mut ps = vec![param(&[2.0], &[1.0])];
        let mut opt = Adadelta::new(&ps, 0.9, 1e-6);
        opt.step(&mut ps, 1.0).unwrap();
        let x = ps[0].value.data()[0];
        let (eg, ed) = (opt.sq_grad[0].data()[0], opt.sq_delta[0].data()[0]);
        ps[0].grad.fill(0.0);
        opt.step(&mut ps, 1.0).unwrap();
        assert_eq!(ps[0].value.data()[0], x);
        assert_eq!(opt.sq_grad[0].data()[0], 0.9 * eg);
        assert_eq!(opt.sq_delta[0].data()[0], 0.9 * ed);
    }

    #[test]
    fn adadelta_is_elementwise() {
        let mut joint = vec![param(&[1.0, -3.0], &[0.5, 2.0])];
        let mut a = vec![param(&[1.0], &[0.5])];
        let mut b = vec![param(&[-3.0], &[2.0])];
        let mut oj = Adadelta::new(&joint, 0.9, 1e-6);
        let mut oa = Adadelta::new(&a, 0.9, 1e-6);
        let mut ob = Adadelta::new(&b, 0.9, 1e-6);
        for _ in 0..3 {
            oj.step(&mut joint, 1.0).unwrap();
            oa.step(&mut a, 1.0).unwrap();
            ob.step(&mut b, 1.0).unwrap();
        }
        assert_eq!(joint[0].value.data(), &[a[0].value.data()[0], b[0].value.data()[0]]);
    }

    #[test]
    fn sgd_cases() {
        let mut ps = vec![param(&[1.0, 2.0], &[0.5, -1.0])];
        let mut opt = Sgd::new(&ps, 0.0, 0.0);
        opt.step(&mut ps, 0.1).unwrap();
        assert_eq!(ps[0].value.data(), &[1.0 - 0.1 * 0.5, 2.0 + 0.1]);

        let mut ps = vec![param(&[1.0], &[0.0])];
        let mut opt = Sgd::new(&ps, 0.0, 0.0);
        opt.step(&mut ps, 0.1).unwrap();
        assert_eq!(ps[0].value.data(), &[1.0]);

        // Two momentum steps with a constant gradient, unrolled by hand:
        // v1 = g, x1 = x0 - lr g; v2 = 0.9 g + g, x2 = x1 - lr 1.9 g.
        let mut ps = vec![param(&[1.0], &[0.5])];
        let mut opt = Sgd::new(&ps, 0.9, 0.0);
        opt.step(&mut ps, 0.1).unwrap();
        opt.step(&mut ps, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 0.5 - 0.1 * (0.9 * 0.5 + 0.5);
        assert!((ps[0].value.data()[0] - expected).abs() < 1e-15);

        assert!(opt.step(&mut ps, 0.0).is_err());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::step(1.0, 0.7, 1).unwrap();
        assert_eq!(s.lr(0), 1.0);
        assert!((s.lr(2) - 0.49).abs() < 1e-15);
        let flat = LrSchedule::step(0.3, 1.0, 1).unwrap();
        assert!((0..20).all(|e| flat.lr(e) == 0.3));
        assert!(LrSchedule::step(1.0, 0.0, 1).is_err());
        assert!(LrSchedule::step(1.0, 1.5, 1).is_err());
        assert!(LrSchedule::step(1.0, 0.7, 0).is_err());
    }

    #[test]
    fn multistep_schedule() {
        let s = LrSchedule::half_and_three_quarters(0.1, 0.1, 8).unwrap();
        let lrs: Vec<f64> = (0..8).map(|e| s.lr(e)).collect();
        assert_eq!(lrs[..4], [0.1; 4]);
        assert!((lrs[4] - 0.01).abs() < 1e-15 && (lrs[5] - 0.01).abs() < 1e-15);
        assert!((lrs[6] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn optimizer_names_parse() {
        assert_eq!("adadelta".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adadelta);
        assert_eq!("SGD".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert!("adam".parse::<OptimizerKind>().is_err());
    }
}
