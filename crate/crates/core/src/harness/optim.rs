//! Gradient-norm clipping, SGD and Adam.

use std::str::FromStr;

use crate::diffcore::{ParamSet, Tensor};
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(ModelError::Invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Global Euclidean norm of a gradient list.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// First-order optimizer over a [`ParamSet`]; gradients arrive in
/// parameter order as returned by `Session::backward`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub clip: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip: f64, params: &ParamSet) -> Self {
        let zeros = || params.values().iter().map(|p| vec![0.0; p.numel()]).collect();
        let adam = kind == OptimizerKind::Adam;
        Optimizer {
            kind,
            lr,
            clip,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Clips, then applies one update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamSet, mut grads: Vec<Tensor>) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(ModelError::Dimension {
                what: "gradient list",
                expected: params.len(),
                got: grads.len(),
            });
        }
        let norm = clip_gradients(&mut grads, self.clip);
        if !norm.is_finite() {
            return Err(ModelError::NonFinite(format!("gradient norm {norm}")));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(&grads) {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= self.lr * d);
                }
            }
            OptimizerKind::Adam => {
                let t = self.t as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (k, (p, g)) in params.values_mut().iter_mut().zip(&grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * d;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * d * d;
                        *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(norm)
    }
}

/// Halves the learning rate when a validation loss has not improved for
/// `patience` consecutive checks.
#[derive(Clone, Debug)]
pub struct PlateauHalving {
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauHalving {
    pub fn new(patience: usize) -> Self {
        PlateauHalving { patience, best: f64::INFINITY, stale: 0 }
    }

    /// Records a validation loss; returns true if the rate was halved.
    pub fn observe(&mut self, loss: f64, opt: &mut Optimizer) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            opt.lr *= 0.5;
            self.stale = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grads(vals: &[&[f64]]) -> Vec<Tensor> {
        vals.iter().map(|v| Tensor::vector(v.to_vec()).unwrap()).collect()
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut g = grads(&[&[0.3, 0.4]]);
        assert_eq!(clip_gradients(&mut g, 5.0), 0.5);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn clip_rescales_to_threshold() {
        let mut g = grads(&[&[3.0], &[4.0]]);
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clip_preserves_direction(v in prop::collection::vec(-100.0f64..100.0, 2..12), max in 0.01f64..2.0) {
            let mut g = grads(&[&v]);
            let norm = clip_gradients(&mut g, max);
            prop_assume!(norm > max);
            let ratio: Vec<f64> = g[0].data().iter().zip(&v).filter(|(_, o)| o.abs() > 1e-6).map(|(c, o)| c / o).collect();
            for r in &ratio {
                prop_assert!((r - ratio[0]).abs() <= 1e-12 * ratio[0].abs().max(1.0));
            }
            prop_assert!((global_norm(&g) - max).abs() < 1e-9);
        }
    }

    fn quadratic_descent(kind: OptimizerKind, lr: f64) -> f64 {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![3.0, -2.0]).unwrap());
        let mut opt = Optimizer::new(kind, lr, 0.0, &ps);
        for _ in 0..500 {
            let x = ps.values()[0].data().to_vec();
            let g = vec![Tensor::vector(x.iter().map(|v| 2.0 * v).collect()).unwrap()];
            opt.step(&mut ps, g).unwrap();
        }
        ps.norm()
    }

    #[test]
    fn both_optimizers_minimize_a_quadratic() {
        assert!(quadratic_descent(OptimizerKind::Sgd, 0.1) < 1e-6);
        assert!(quadratic_descent(OptimizerKind::Adam, 0.05) < 1e-3);
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![1.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.01, 5.0, &ps);
        opt.step(&mut ps, grads(&[&[2.0]])).unwrap();
        assert_eq!(ps.values()[0].data(), &[1.0 - 0.02]);
        assert!(opt.step(&mut ps, grads(&[])).is_err());
    }

    #[test]
    fn plateau_halves_after_patience() {
        let ps = ParamSet::new();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.01, 5.0, &ps);
        let mut p = PlateauHalving::new(2);
        assert!(!p.observe(1.0, &mut opt));
        assert!(!p.observe(1.0, &mut opt));
        assert!(p.observe(1.1, &mut opt));
        assert_eq!(opt.lr, 0.005);
        assert!(!p.observe(0.5, &mut opt));
    }
}
