use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Affine map `input · weightᵀ + bias` for `input: [N, D_in]`,
    /// `weight: [D_out, D_in]`, `bias: [D_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d_in) = match *self.shape(input) {
            [n, d] => (n, d),
            ref s => {
                return Err(Error::Shape(format!(
                    "dense input must be [N,D], got {s:?}"
                )))
            }
        };
        let (d_out, wd) = match *self.shape(weight) {
            [o, i] => (o, i),
            ref s => return Err(Error::Shape(format!("dense weight must be 2-D, got {s:?}"))),
        };
        if wd != d_in {
            return Err(Error::Shape(format!(
                "dense expects {wd} input features, got {d_in}"
            )));
        }
        if self.shape(bias) != [d_out] {
            return Err(Error::Shape(format!(
                "dense bias must be [{d_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        T::gemm_acc(
            n,
            d_in,
            d_out,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
        );
        let value = Tensor::new(&[n, d_out], out)?;
        Ok(self.push(
            "dense",
            value,
            vec![input, weight, bias],
            Box::new(move |ctx, gout| {
                let x = ctx.input(0).data();
                let w = ctx.input(1).data();
                let mut gx = Vec::new();
                if ctx.needs(0) {
                    gx = vec![T::zero(); n * d_in];
                    T::gemm_acc(n, d_out, d_in, gout, false, w, false, &mut gx);
                }
                let mut gw = vec![T::zero(); d_out * d_in];
                T::gemm_acc(d_out, n, d_in, gout, true, x, false, &mut gw);
                let mut gb = vec![T::zero(); d_out];
                for row in gout.chunks(d_out) {
                    for (acc, &g) in gb.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                vec![gx, gw, gb]
            }),
        ))
    }

    /// `max(0, x)`; the gradient at exactly zero is zero.
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape(), out).expect("same shape");
        self.push(
            "relu",
            value,
            vec![input],
            Box::new(|ctx, gout| {
                let x = ctx.input(0).data();
                vec![x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect()]
            }),
        )
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out: Vec<T> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(x.shape(), out).expect("same shape");
        self.push(
            "sigmoid",
            value,
            vec![input],
            Box::new(|ctx, gout| {
                let y = ctx.output().data();
                vec![y
                    .iter()
                    .zip(gout)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect()]
            }),
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(
            "reshape",
            value,
            vec![input],
            Box::new(|_, gout| vec![gout.to_vec()]),
        ))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[n, rest.max(1)])
    }

    /// Concatenates along the leading axis.
    pub fn concat_batch(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::Shape(format!(
                    "concat needs matching trailing dims, got {s:?} and [_, {tail:?}]"
                )));
            }
            lead += s[0];
            lens.push(self.value(v).len());
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            "concat_batch",
            value,
            inputs.to_vec(),
            Box::new(move |_, gout| {
                let mut off = 0;
                lens.iter()
                    .map(|&len| {
                        let g = gout[off..off + len].to_vec();
                        off += len;
                        g
                    })
                    .collect()
            }),
        ))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice_batch(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(Error::Shape(format!(
                "slice {start}..{} out of range for leading dim {}",
                start + len,
                shape[0]
            )));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(input).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let value = Tensor::new(&out_shape, data)?;
        let total = self.value(input).len();
        Ok(self.push(
            "slice_batch",
            value,
            vec![input],
            Box::new(move |_, gout| {
                let mut g = vec![T::zero(); total];
                g[start * row..(start + len) * row].copy_from_slice(gout);
                vec![g]
            }),
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().copied().sum();
        let len = self.value(input).len();
        self.push(
            "sum",
            Tensor::scalar(total),
            vec![input],
            Box::new(move |_, gout| vec![vec![gout[0]; len]]),
        )
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().map(|&v| v * v).sum();
        self.push(
            "sum_squares",
            Tensor::scalar(total),
            vec![input],
            Box::new(|ctx, gout| {
                let two = T::lit(2.0);
                vec![ctx
                    .input(0)
                    .data()
                    .iter()
                    .map(|&v| two * v * gout[0])
                    .collect()]
            }),
        )
    }

    /// `Σ wᵢ xᵢ` with constant weights. Used to turn any tensor into a scalar
    /// with a non-trivial gradient.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(input).len() {
            return Err(Error::Shape(format!(
                "{} weights for {} elements",
                weights.len(),
                self.value(input).len()
            )));
        }
        let total: T = self
            .value(input)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| x * w)
            .sum();
        Ok(self.push(
            "weighted_sum",
            Tensor::scalar(total),
            vec![input],
            Box::new(move |_, gout| vec![weights.iter().map(|&w| w * gout[0]).collect()]),
        ))
    }

    /// Mean binary cross-entropy of predictions in (0, 1) against constant
    /// targets. Predictions are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_mean(&mut self, pred: Var, target: Vec<T>) -> Result<Var> {
        let p = self.value(pred).data();
        if target.len() != p.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} predictions",
                target.len(),
                p.len()
            )));
        }
        let count = T::from_usize(p.len()).expect("count fits");
        let total: T = p
            .iter()
            .zip(&target)
            .map(|(&pi, &ti)| bce_term(pi, ti))
            .sum();
        Ok(self.push(
            "bce_mean",
            Tensor::scalar(total / count),
            vec![pred],
            Box::new(move |ctx, gout| {
                let (lo, hi) = bce_bounds::<T>();
                vec![ctx
                    .input(0)
                    .data()
                    .iter()
                    .zip(&target)
                    .map(|(&pi, &ti)| {
                        if pi < lo || pi > hi {
                            T::zero()
                        } else {
                            gout[0] * (pi - ti) / (pi * (T::one() - pi)) / count
                        }
                    })
                    .collect()]
            }),
        ))
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn bce_bounds<T: Scalar>() -> (T, T) {
    let eps = T::lit(1e-7);
    (eps, T::one() - eps)
}

/// `-(t ln p + (1 - t) ln(1 - p))` with `p` clamped away from 0 and 1.
pub(crate) fn bce_term<T: Scalar>(p: T, t: T) -> T {
    let (lo, hi) = bce_bounds::<T>();
    let p = p.max(lo).min(hi);
    -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(&[1], vec![5.0]).unwrap());
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[16.0]);

        let x = g.constant(Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let eye = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zb = g.constant(Tensor::zeros(&[2]));
        let y = g.dense(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0, 0.5]);

        let zw = g.constant(Tensor::zeros(&[3, 2]));
        let bias = g.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.dense(x, zw, bias).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn dense_dimension_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.constant(Tensor::zeros(&[1, 2]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(g.dense(x, w, b).is_err());
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[3], vec![-2.0, 3.0, 0.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 3.0, 0.0]);
        let x = g.constant(Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap());
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert!((g.value(s).data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap().with_grad());
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn bce_of_half_against_half_is_ln2() {
        assert!((bce_term(0.5f64, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let a = g.slice_batch(x, 0, 1).unwrap();
        let b = g.slice_batch(x, 1, 2).unwrap();
        assert_eq!(g.value(b).data(), &[3., 4., 5., 6.]);
        let c = g.concat_batch(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), g.value(x).data());
        assert!(g.slice_batch(x, 2, 2).is_err());
    }
}
