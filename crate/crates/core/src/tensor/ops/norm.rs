use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
    pub training: bool,
}

impl<T: Scalar> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::lit(Self::DEFAULT_MOMENTUM),
            epsilon: T::lit(Self::DEFAULT_EPSILON),
            training: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// `(N, C, S)` view where `S` is the flattened spatial extent.
fn as_ncs(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::Shape(format!(
            "batchnorm expects [N,C] or [N,C,H,W], got {shape:?}"
        ))),
    }
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization. `gamma` and `beta` must be the graph handles of
    /// `state.gamma` / `state.beta`. In training mode the running statistics
    /// in `state` are updated as a side effect.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, c, s) = as_ncs(&shape)?;
        if c != state.channels() || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batchnorm over {c} channels but state has {}",
                state.channels()
            )));
        }
        let x = self.value(input).data();
        let gam = self.value(gamma).data().to_vec();
        let bet = self.value(beta).data();
        let eps = state.epsilon;
        let count = T::from_usize(n * s).expect("count fits");
        let training = state.training;

        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        if training {
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * s;
                    acc += x[off..off + s].iter().copied().sum::<T>();
                }
                mean[ch] = acc / count;
                let mut sq = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * s;
                    for &v in &x[off..off + s] {
                        let d = v - mean[ch];
                        sq += d * d;
                    }
                }
                var[ch] = sq / count;
                inv_std[ch] = T::one() / (var[ch] + eps).sqrt();
            }
            let m = state.momentum;
            let rm = state.running_mean.data_mut();
            for ch in 0..c {
                rm[ch] = m * rm[ch] + (T::one() - m) * mean[ch];
            }
            let rv = state.running_var.data_mut();
            for ch in 0..c {
                rv[ch] = (m * rv[ch] + (T::one() - m) * var[ch]).max(eps);
            }
        } else {
            let rm = state.running_mean.data();
            let rv = state.running_var.data();
            for ch in 0..c {
                mean[ch] = rm[ch];
                inv_std[ch] = T::one() / (rv[ch] + eps).sqrt();
            }
        }

        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * s;
                for k in off..off + s {
                    xhat[k] = (x[k] - mean[ch]) * inv_std[ch];
                    out[k] = gam[ch] * xhat[k] + bet[ch];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            "batch_norm",
            value,
            vec![input, gamma, beta],
            Box::new(move |_, gout| {
                let mut ggam = vec![T::zero(); c];
                let mut gbet = vec![T::zero(); c];
                let mut sum_gxhat = vec![T::zero(); c];
                let mut sum_gxhat_xhat = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * s;
                        for k in off..off + s {
                            ggam[ch] += gout[k] * xhat[k];
                            gbet[ch] += gout[k];
                            let gx = gout[k] * gam[ch];
                            sum_gxhat[ch] += gx;
                            sum_gxhat_xhat[ch] += gx * xhat[k];
                        }
                    }
                }
                let mut gin = vec![T::zero(); xhat.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * s;
                        for k in off..off + s {
                            let gx = gout[k] * gam[ch];
                            gin[k] = if training {
                                inv_std[ch] / count
                                    * (count * gx - sum_gxhat[ch] - xhat[k] * sum_gxhat_xhat[ch])
                            } else {
                                gx * inv_std[ch]
                            };
                        }
                    }
                }
                vec![gin, ggam, gbet]
            }),
        ))
    }
}
