//! First- and quasi-second-order minimizers over flat parameter vectors.
//!
//! [`minimize`] drives LBFGS (two-loop recursion, backtracking Armijo line
//! search), plain gradient descent or Adam against an objective returning a
//! value and gradient. [`Adam`] is the stateful variant used by the training
//! loops, which update many parameter tensors from minibatch gradients.

use std::collections::VecDeque;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sufficient-decrease constant of the Armijo condition.
pub const ARMIJO_C1: f64 = 1e-4;
/// Step halvings before a line search is declared stalled.
pub const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Lbfgs,
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbfgs" => Ok(OptimizerKind::Lbfgs),
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_iters: usize,
    pub lbfgs_history: usize,
    pub sgd_lr: f64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop once the gradient's ∞-norm drops below this.
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Lbfgs,
            max_iters: 100,
            lbfgs_history: 10,
            sgd_lr: 1e-2,
            adam_lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_tol: 1e-10,
        }
    }
}

impl OptimizerConfig {
    pub fn with_kind(kind: OptimizerKind, max_iters: usize) -> Self {
        OptimizerConfig {
            kind,
            max_iters,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lbfgs_history < 1 {
            return Err(Error::invalid("lbfgs_history must be at least 1"));
        }
        if !(self.sgd_lr > 0.0 && self.adam_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        for beta in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::invalid(format!("adam beta {beta} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::invalid(
                "adam_eps must be positive and grad_tol non-negative",
            ));
        }
        Ok(())
    }
}

/// Outcome of [`minimize`].
#[derive(Clone, Debug)]
pub struct Minimized {
    /// Best iterate found.
    pub x: Tensor,
    /// Objective at `x`.
    pub value: f64,
    /// Objective at the starting point followed by one entry per accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// True when the LBFGS line search gave up after [`MAX_HALVINGS`] halvings.
    pub stalled: bool,
    pub converged: bool,
}

/// Value-and-gradient oracle over a flat parameter tensor.
pub trait Objective {
    fn evaluate(&mut self, x: &Tensor) -> Result<(f64, Tensor)>;
}

impl<F> Objective for F
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    fn evaluate(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        self(x)
    }
}

/// Wraps a tape-building closure as an [`Objective`]: the closure gets a fresh
/// tape and the leaf holding the current point and returns the scalar loss.
pub fn tape_objective<'a, F>(build: F) -> impl Objective + 'a
where
    F: Fn(&mut Tape<'a>, NodeId) -> Result<NodeId> + 'a,
{
    move |x: &Tensor| -> Result<(f64, Tensor)> {
        let mut tape: Tape<'a> = Tape::new();
        let leaf = tape.variable(x.clone())?;
        let out = build(&mut tape, leaf)?;
        let value = tape.value(out).item();
        let grad = tape.backward(out)?.take(leaf);
        Ok((value, grad))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    crate::tensor::dot(a, b)
}

fn checked(eval: Result<(f64, Tensor)>) -> Result<(f64, Tensor)> {
    let (f, g) = eval?;
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok((f, g))
}

/// Minimizes `objective` from `x0` with the optimizer selected by `cfg`.
pub fn minimize<O: Objective>(
    objective: &mut O,
    x0: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<Minimized> {
    cfg.validate()?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("minimize start"));
    }
    match cfg.kind {
        OptimizerKind::Lbfgs => lbfgs(objective, x0, cfg),
        OptimizerKind::Sgd | OptimizerKind::Adam => first_order(objective, x0, cfg),
    }
}

fn lbfgs<O: Objective>(objective: &mut O, x0: &Tensor, cfg: &OptimizerConfig) -> Result<Minimized> {
    let shape = x0.shape().to_vec();
    let mut x = x0.data().to_vec();
    let (mut f, g0) = checked(objective.evaluate(x0))?;
    let mut g = g0.into_data();
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalled = false;
    let mut converged = false;
    let mut iterations = 0;
    let n = x.len();

    while iterations < cfg.max_iters {
        if inf_norm(&g) < cfg.grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion: d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dotv(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dotv(s, y) / dotv(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dotv(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dotv(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dotv(&g, &g);
        }

        let mut t = if history.is_empty() {
            (1.0 / dotv(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let trial_t = Tensor::new(shape.clone(), trial)?;
            match checked(objective.evaluate(&trial_t)) {
                Ok((ft, gt)) if ft <= f + ARMIJO_C1 * t * slope => {
                    accepted = Some((trial_t.into_data(), ft, gt.into_data()));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            stalled = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &y);
        if sy > 1e-12 * dotv(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if history.len() == cfg.lbfgs_history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        iterations += 1;
    }
    debug_assert_eq!(x.len(), n);

    Ok(Minimized {
        x: Tensor::new(shape, x)?,
        value: f,
        trace,
        iterations,
        stalled,
        converged,
    })
}

fn first_order<O: Objective>(
    objective: &mut O,
    x0: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<Minimized> {
    let shape = x0.shape().to_vec();
    let mut x = x0.data().to_vec();
    let (mut f, g0) = checked(objective.evaluate(x0))?;
    let mut g = g0.into_data();
    let mut trace = vec![f];
    let mut best = (x.clone(), f);
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        if inf_norm(&g) < cfg.grad_tol {
            converged = true;
            break;
        }
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi -= cfg.sgd_lr * gi;
                }
            }
            _ => {
                let step = (iterations + 1) as i32;
                let c1 = 1.0 - cfg.adam_beta1.powi(step);
                let c2 = 1.0 - cfg.adam_beta2.powi(step);
                for i in 0..x.len() {
                    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
                    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                    x[i] -= cfg.adam_lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
                }
            }
        }
        let xt = Tensor::new(shape.clone(), x.clone())?;
        let (fn_, gn) = checked(objective.evaluate(&xt))?;
        f = fn_;
        g = gn.into_data();
        trace.push(f);
        iterations += 1;
        if f < best.1 {
            best = (x.clone(), f);
        }
    }

    Ok(Minimized {
        x: Tensor::new(shape, best.0)?,
        value: best.1,
        trace,
        iterations,
        stalled: false,
        converged,
    })
}

/// Hyperparameters of the training-time Adam optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (pi, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                *pi -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &Tensor) -> Result<(f64, Tensor)> {
        let (a, b) = (x.data()[0], x.data()[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        let gb = 200.0 * (b - a * a);
        Ok((f, Tensor::from_vec(vec![ga, gb])))
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let cfg = OptimizerConfig {
            max_iters: 500,
            grad_tol: 1e-12,
            ..Default::default()
        };
        let x0 = Tensor::from_vec(vec![-1.2, 1.0]);
        let out = minimize(&mut rosenbrock, &x0, &cfg).unwrap();
        assert!((out.x.data()[0] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!((out.x.data()[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_trace_has_one_entry_per_iterate() {
        let cfg = OptimizerConfig::with_kind(OptimizerKind::Lbfgs, 5);
        let out = minimize(&mut rosenbrock, &Tensor::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert_eq!(out.trace.len(), out.iterations + 1);
        assert_eq!(out.iterations, 5);
    }

    #[test]
    fn tape_objective_minimizes_squared_distance() {
        let target = Tensor::from_vec(vec![0.3, -0.2, 0.9]);
        let mut obj = tape_objective(|t, x| {
            let y = t.constant_ref(&target)?;
            t.mse(x, y)
        });
        let cfg = OptimizerConfig::default();
        let out = minimize(&mut obj, &Tensor::zeros([3]), &cfg).unwrap();
        for (a, b) in out.x.data().iter().zip(target.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let cfg = OptimizerConfig::default();
        let mut bad = |_: &Tensor| -> Result<(f64, Tensor)> { Ok((f64::NAN, Tensor::zeros([1]))) };
        assert!(matches!(
            minimize(&mut bad, &Tensor::zeros([1]), &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn line_search_failure_is_reported_as_stall() {
        // Gradient points the wrong way, so no step ever decreases the value.
        let mut liar = |x: &Tensor| -> Result<(f64, Tensor)> {
            let v = x.data()[0];
            Ok((v * v, Tensor::from_vec(vec![-2.0 * v - 1.0])))
        };
        let cfg = OptimizerConfig::default();
        let out = minimize(&mut liar, &Tensor::from_vec(vec![1.0]), &cfg).unwrap();
        assert!(out.stalled);
        assert_eq!(out.value, 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lbfgs_history = 0;
        assert!(cfg.validate().is_err());
        let cfg = OptimizerConfig {
            adam_beta1: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adam_step_moves_against_gradient() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -1.0])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Tensor::from_vec(vec![0.5, -0.5])]);
        assert!(params[0].data()[0] < 1.0);
        assert!(params[0].data()[1] > -1.0);
    }
}
