use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Gradient descent over the parameters of selected groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: HashMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: HashMap::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Updates every trainable parameter whose group satisfies `select`
    /// from its accumulated gradient. Other parameters are not touched.
    pub fn step(&mut self, params: &mut ParamStore, select: impl Fn(ParamGroup) -> bool) {
        for (id, p) in params.iter_mut() {
            if !select(p.group) || !p.tensor.requires_grad() {
                continue;
            }
            let grad = p.tensor.grad().to_vec();
            let values = p.tensor.values_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in values.iter_mut().zip(&grad) {
                        *v -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let st = self.state.entry(id).or_insert_with(|| Moments {
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                        step: 0,
                    });
                    st.step += 1;
                    let bc1 = 1.0 - self.beta1.powi(st.step as i32);
                    let bc2 = 1.0 - self.beta2.powi(st.step as i32);
                    for i in 0..grad.len() {
                        let g = grad[i];
                        st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                        st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                        let mhat = st.m[i] / bc1;
                        let vhat = st.v[i] / bc2;
                        values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }

    /// Steps taken for one parameter (Adam only).
    pub fn steps(&self, id: ParamId) -> u64 {
        self.state.get(&id).map_or(0, |s| s.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = ParamStore::new();
        let id = params.add("x", ParamGroup::Mlp, Tensor::new(vec![2], vec![1.0, -1.0], true).unwrap());
        let frozen = params.add("t", ParamGroup::Arch, Tensor::new(vec![1], vec![3.0], true).unwrap());
        params.get_mut(id).accumulate_grad(&[0.5, -2.0]);
        params.get_mut(frozen).accumulate_grad(&[1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1).unwrap();
        opt.step(&mut params, ParamGroup::is_model_weight);
        let v = params.get(id).values();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6);
        assert_eq!(params.get(frozen).values(), &[3.0]);
        assert_eq!(opt.steps(id), 1);
        assert_eq!(opt.steps(frozen), 0);
    }

    #[test]
    fn sgd_and_validation() {
        let mut params = ParamStore::new();
        let id = params.add("x", ParamGroup::Mlp, Tensor::new(vec![1], vec![1.0], true).unwrap());
        params.get_mut(id).accumulate_grad(&[2.0]);
        Optimizer::new(OptimizerKind::Sgd, 0.25).unwrap().step(&mut params, |_| true);
        assert_eq!(params.get(id).values(), &[0.5]);
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0).is_err());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
