//! First-order optimizers: Adam, RMSprop, Adadelta and Nadam.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Learning rate used for the Siamese model unless configured otherwise.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;

/// Learning-rate grid probed by [`line_search_lr`] from the CLI.
pub const LINE_SEARCH_GRID: [f64; 4] = [1e-3, 1e-4, 5e-5, 1e-5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    RmsProp,
    Adadelta,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Adam,
        OptimizerKind::RmsProp,
        OptimizerKind::Adadelta,
        OptimizerKind::Nadam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Nadam => "nadam",
        }
    }

    /// Adadelta has no learning rate of its own; its multiplier defaults to 1.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Adadelta => 1.0,
            _ => DEFAULT_LEARNING_RATE,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Nadam only: apply the Nesterov look-ahead to the first moment.
    pub nesterov: bool,
}

impl Hyper {
    pub fn defaults(kind: OptimizerKind) -> Self {
        let (rho, epsilon) = match kind {
            OptimizerKind::Adadelta => (0.95, 1e-6),
            OptimizerKind::RmsProp => (0.9, 1e-8),
            _ => (0.9, 1e-8),
        };
        Self {
            learning_rate: kind.default_lr(),
            beta1: 0.9,
            beta2: 0.999,
            rho,
            epsilon,
            nesterov: true,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// Per-parameter moment buffers.
///
/// Adam/Nadam: first and second moments. RMSprop: `second` holds the running
/// mean of squared gradients. Adadelta: `first` accumulates squared
/// gradients, `second` squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub step_count: u64,
    pub buffers: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, hyper: Hyper) -> Self {
        Self {
            kind,
            hyper,
            step_count: 0,
            buffers: BTreeMap::new(),
        }
    }

    pub fn with_defaults(kind: OptimizerKind) -> Self {
        Self::new(kind, Hyper::defaults(kind))
    }

    /// Applies one update to every parameter with `requires_grad`, reading
    /// its gradient buffer (absent means zero).
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    {
        let params: Vec<_> = params
            .into_iter()
            .filter(|(_, t)| t.requires_grad)
            .collect();
        for (name, t) in &params {
            if let Some(g) = &t.grad {
                if g.len() != t.len() {
                    return Err(Error::Shape(format!(
                        "gradient of {name} has {} elements, parameter has {}",
                        g.len(),
                        t.len()
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
            if let Some(m) = self.buffers.get(name) {
                if m.first.shape() != t.shape() || m.second.shape() != t.shape() {
                    return Err(Error::Shape(format!(
                        "optimizer buffers for {name} are {:?}, parameter is {:?}",
                        m.first.shape(),
                        t.shape()
                    )));
                }
            }
        }

        self.step_count += 1;
        let h = self.hyper;
        let lit = T::lit;
        let (lr, b1, b2, rho, eps) = (
            lit(h.learning_rate),
            lit(h.beta1),
            lit(h.beta2),
            lit(h.rho),
            lit(h.epsilon),
        );
        let t = self.step_count as i32;
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc1_next = one - b1.powi(t + 1);
        let bc2 = one - b2.powi(t);

        for (name, param) in params {
            let moments = self.buffers.entry(name).or_insert_with(|| Moments {
                first: Tensor::zeros(param.shape()),
                second: Tensor::zeros(param.shape()),
            });
            let zeros;
            let grad: &[T] = match &param.grad {
                Some(g) => g,
                None => {
                    zeros = vec![T::zero(); param.len()];
                    &zeros
                }
            };
            let grad = grad.to_vec();
            let w = param.data_mut();
            let m = moments.first.data_mut();
            let v = moments.second.data_mut();
            match self.kind {
                OptimizerKind::Adam | OptimizerKind::Nadam => {
                    let nesterov = self.kind == OptimizerKind::Nadam && h.nesterov;
                    for i in 0..w.len() {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let m_hat = if nesterov {
                            b1 * m[i] / bc1_next + (one - b1) * g / bc1
                        } else {
                            m[i] / bc1
                        };
                        let v_hat = v[i] / bc2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp => {
                    for i in 0..w.len() {
                        let g = grad[i];
                        v[i] = rho * v[i] + (one - rho) * g * g;
                        w[i] -= lr * g / (v[i].sqrt() + eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    for i in 0..w.len() {
                        let g = grad[i];
                        m[i] = rho * m[i] + (one - rho) * g * g;
                        let delta = -((v[i] + eps).sqrt() / (m[i] + eps).sqrt()) * g;
                        v[i] = rho * v[i] + (one - rho) * delta * delta;
                        w[i] += lr * delta;
                    }
                }
            }
        }
        Ok(())
    }

    /// Buffers as named tensors, `optim/<param>/first|second`.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, m) in &self.buffers {
            out.push((format!("{}{name}/first", Self::PREFIX), &m.first));
            out.push((format!("{}{name}/second", Self::PREFIX), &m.second));
        }
        out
    }

    pub const PREFIX: &'static str = "optim/";

    /// Restores a buffer from a named tensor produced by [`Self::tensors`].
    pub fn restore(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let rest = name
            .strip_prefix(Self::PREFIX)
            .ok_or_else(|| Error::Checkpoint(format!("{name} is not an optimizer tensor")))?;
        let (param, slot) = rest
            .rsplit_once('/')
            .ok_or_else(|| Error::Checkpoint(format!("malformed optimizer tensor {name}")))?;
        let entry = self
            .buffers
            .entry(param.to_owned())
            .or_insert_with(|| Moments {
                first: Tensor::zeros(tensor.shape()),
                second: Tensor::zeros(tensor.shape()),
            });
        match slot {
            "first" => entry.first = tensor,
            "second" => entry.second = tensor,
            _ => {
                return Err(Error::Checkpoint(format!(
                    "unknown optimizer slot in {name}"
                )))
            }
        }
        Ok(())
    }
}

/// Picks the learning rate with the best score. Ties go to the smaller rate.
pub fn line_search_lr<F>(candidates: &[f64], mut score: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best: Option<(f64, f64)> = None;
    for &lr in candidates {
        let s = score(lr)?;
        best = match best {
            None => Some((lr, s)),
            Some((blr, bs)) if s > bs || (s == bs && lr < blr) => Some((lr, s)),
            keep => keep,
        };
    }
    best.map(|(lr, _)| lr)
        .ok_or_else(|| Error::Config("line search needs at least one candidate".into()))
}
